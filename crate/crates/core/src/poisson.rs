//! Fast solver for the discrete Poisson problem on a box with zero Dirichlet boundary.
//!
//! The 5-/7-point Laplacian restricted to interior nodes is diagonalized by the
//! type-I discrete sine transform along each axis, so a solve is two separable
//! DST passes around a pointwise division by the eigenvalues.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Dims;

pub(crate) struct DirichletPoisson {
    dims: Dims,
    plans: Vec<Arc<dyn Fft<f64>>>,
    /// Eigenvalue sum per node in sine-transform space (all strictly negative).
    eigen: Vec<f64>,
    scale: f64,
}

impl DirichletPoisson {
    /// `dims` is the interior lattice; every extent must be at least 1.
    pub(crate) fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let d = dims.ndim();
        let plans = (0..d)
            .map(|a| planner.plan_fft_forward(2 * (dims.extent(a) + 1)))
            .collect();
        let axis_eigen: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let m = dims.extent(a);
                (1..=m)
                    .map(|k| 2.0 * (PI * k as f64 / (m + 1) as f64).cos() - 2.0)
                    .collect()
            })
            .collect();
        let eigen = dims
            .nodes()
            .map(|n| (0..d).map(|a| axis_eigen[a][n[a]]).sum())
            .collect();
        let scale = (0..d).map(|a| 2.0 / (dims.extent(a) + 1) as f64).product();
        DirichletPoisson {
            dims,
            plans,
            eigen,
            scale,
        }
    }

    /// Overwrites `rhs` with `u` solving `Δu = rhs` on the interior lattice.
    pub(crate) fn solve(&self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.dims.len());
        for axis in 0..self.dims.ndim() {
            self.dst_axis(rhs, axis);
        }
        for (v, e) in rhs.iter_mut().zip(&self.eigen) {
            *v *= self.scale / e;
        }
        for axis in 0..self.dims.ndim() {
            self.dst_axis(rhs, axis);
        }
    }

    /// Unnormalized DST-I of every line along `axis`.
    fn dst_axis(&self, data: &mut [f64], axis: usize) {
        let m = self.dims.extent(axis);
        let stride = self.dims.stride(axis);
        let lines = self.dims.len() / m;
        let dims = self.dims;
        // base index of line `k`: the node with coordinate 0 along `axis`
        let line_base = |k: usize| {
            let reduced: [usize; 3] =
                std::array::from_fn(|a| if a == axis { 1 } else { dims.extent(a) });
            let x = k % reduced[0];
            let rest = k / reduced[0];
            let node = [x, rest % reduced[1], rest / reduced[1]];
            dims.index(node)
        };
        // Lines are packed in pairs as real and imaginary parts: the transform of an
        // odd real sequence is purely imaginary, so the two results separate exactly.
        let n = 2 * (m + 1);
        let pairs = lines.div_ceil(2);
        let mut buf = vec![Complex::new(0.0, 0.0); pairs * n];
        for (k, line) in buf.chunks_exact_mut(n).enumerate() {
            for (part, l) in [2 * k, 2 * k + 1].into_iter().enumerate() {
                if l >= lines {
                    continue;
                }
                let base = line_base(l);
                for j in 0..m {
                    let v = data[base + j * stride];
                    let (lo, hi) = (&mut line[j + 1], n - j - 1);
                    if part == 0 {
                        lo.re = v;
                    } else {
                        lo.im = v;
                    }
                    let hi = &mut line[hi];
                    if part == 0 {
                        hi.re = -v;
                    } else {
                        hi.im = -v;
                    }
                }
            }
        }
        self.plans[axis].process(&mut buf);
        for (k, line) in buf.chunks_exact(n).enumerate() {
            let base = line_base(2 * k);
            for j in 0..m {
                data[base + j * stride] = -0.5 * line[j + 1].im;
            }
            if 2 * k + 1 < lines {
                let base = line_base(2 * k + 1);
                for j in 0..m {
                    data[base + j * stride] = 0.5 * line[j + 1].re;
                }
            }
        }
    }
}
