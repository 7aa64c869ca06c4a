//! Execution backend for the per-node and per-cell kernels.
//!
//! With the `parallel` feature the kernels map over indices with rayon; without it
//! (or inside [`sequential`]) they run as plain loops. Either way every kernel
//! writes into an index-ordered buffer and all reductions run sequentially in
//! index order, so results are bit-identical across backends and thread counts.

use std::cell::Cell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many items the rayon dispatch costs more than it saves.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 2048;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every kernel invoked from this thread forced onto the sequential path.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            FORCE_SEQUENTIAL.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(FORCE_SEQUENTIAL.with(|c| c.replace(true)));
    f()
}

/// Whether kernels called from the current thread will use the parallel backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get)
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if n >= MIN_PARALLEL_LEN && is_parallel() {
        return (0..n)
            .into_par_iter()
            .with_min_len(MIN_PARALLEL_LEN / 4)
            .map(f)
            .collect();
    }
    (0..n).map(f).collect()
}

/// Fills fixed-size chunks of `out` (chunk `i` covers `out[i*width..(i+1)*width]`).
pub(crate) fn fill_chunks<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if out.len() / width.max(1) >= MIN_PARALLEL_LEN && is_parallel() {
        out.par_chunks_mut(width)
            .with_min_len(MIN_PARALLEL_LEN / 4)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

/// Sequential index-ordered sum; the only reduction the kernels use.
pub(crate) fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}
