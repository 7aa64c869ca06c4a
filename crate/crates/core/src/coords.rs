//! Affine-plus-Laplacian coordinates of a deformation field.
//!
//! A field is written as `f(x) = x + t + A (x - c) / r + u(x)`, where `c` is the grid
//! center, `r` the per-axis half extent, and `u` vanishes on the outer boundary and is
//! given per channel by its discrete Laplacian `s` at the interior nodes. The zero
//! vector is the identity, affine fields have `s = 0`, and on this family the L1
//! Laplacian penalty is exactly `Σ |s|`. The affine part is scaled so every
//! coordinate is a displacement in pixels at the grid edge.

use crate::error::Result;
use crate::exec;
use crate::grid::{DeformationField, Dims};
use crate::loss::FieldGradient;
use crate::poisson::DirichletPoisson;

pub(crate) struct LaplacianCoordinates {
    dims: Dims,
    poisson: DirichletPoisson,
    /// Field node index of each interior lattice node.
    inner: Vec<usize>,
    center: [f64; 3],
    half: [f64; 3],
}

impl LaplacianCoordinates {
    /// `dims` must have every extent >= 3.
    pub(crate) fn new(dims: Dims) -> Result<Self> {
        dims.require_at_least(3)?;
        let d = dims.ndim();
        let interior = dims.shrunk(2);
        let inner = interior
            .nodes()
            .map(|mut n| {
                for v in n.iter_mut().take(d) {
                    *v += 1;
                }
                dims.index(n)
            })
            .collect();
        let mut center = [0.0; 3];
        let mut half = [1.0; 3];
        for a in 0..d {
            center[a] = (dims.extent(a) as f64 - 1.0) / 2.0;
            half[a] = center[a];
        }
        Ok(LaplacianCoordinates {
            dims,
            poisson: DirichletPoisson::new(interior),
            inner,
            center,
            half,
        })
    }

    fn affine_len(&self) -> usize {
        let d = self.dims.ndim();
        d + d * d
    }

    pub(crate) fn len(&self) -> usize {
        self.affine_len() + self.inner.len() * self.dims.ndim()
    }

    /// True for the Laplacian coordinates.
    pub(crate) fn penalized(&self) -> Vec<bool> {
        let na = self.affine_len();
        (0..self.len()).map(|i| i >= na).collect()
    }

    fn interior_range(&self, c: usize) -> std::ops::Range<usize> {
        let ni = self.inner.len();
        let start = self.affine_len() + c * ni;
        start..start + ni
    }

    fn scaled(&self, node: [usize; 3], k: usize) -> f64 {
        (node[k] as f64 - self.center[k]) / self.half[k]
    }

    /// Gradient with respect to the coordinates, given the gradient with respect
    /// to the field node values.
    pub(crate) fn pull_back(&self, g: &FieldGradient) -> Vec<f64> {
        let d = self.dims.ndim();
        let data = g.data();
        let mut out = vec![0.0; self.len()];
        // translation and linear part, summed in node order
        let per_node = d + d * d;
        let terms = exec::map_indexed(self.dims.len(), |i| {
            let node = self.dims.node(i);
            let mut t = [0.0; 12];
            for c in 0..d {
                let gc = data[i * d + c];
                t[c] = gc;
                for k in 0..d {
                    t[d + c * d + k] = gc * self.scaled(node, k);
                }
            }
            t
        });
        let mut column = vec![0.0; terms.len()];
        for (j, slot) in out[..per_node].iter_mut().enumerate() {
            for (dst, t) in column.iter_mut().zip(&terms) {
                *dst = t[j];
            }
            *slot = exec::ordered_sum(&column);
        }
        for c in 0..d {
            let mut y: Vec<f64> = self.inner.iter().map(|&n| data[n * d + c]).collect();
            self.poisson.solve(&mut y);
            out[self.interior_range(c)].copy_from_slice(&y);
        }
        out
    }

    /// Adds the field change corresponding to the coordinate change `delta`.
    pub(crate) fn apply_increment(&self, f: &mut DeformationField, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.len());
        let d = self.dims.ndim();
        let dims = self.dims;
        exec::fill_chunks(f.data_mut(), d, |i, chunk| {
            let node = dims.node(i);
            for (c, v) in chunk.iter_mut().enumerate() {
                let mut step = delta[c];
                for k in 0..d {
                    step += delta[d + c * d + k] * self.scaled(node, k);
                }
                *v += step;
            }
        });
        let data = f.data_mut();
        for c in 0..d {
            let mut u = delta[self.interior_range(c)].to_vec();
            if u.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.poisson.solve(&mut u);
            for (&node, v) in self.inner.iter().zip(&u) {
                data[node * d + c] += v;
            }
        }
    }
}
