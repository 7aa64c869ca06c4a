//! Differential operators on deformation fields and backward warping of masks.

use crate::error::Result;
use crate::exec;
use crate::grid::{sample_with_gradient, DeformationField, Dims, Lattice, MaskGrid, ScalarGrid};

/// Forward-difference Jacobian determinants, one per cell. Cell `c` has base node `c`
/// and the lattice is one smaller than the field's along every axis.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianGrid {
    dims: Dims,
    data: Vec<f64>,
}

impl JacobianGrid {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, cell: [usize; 3]) -> f64 {
        self.data[self.dims.index(cell)]
    }

    /// Cells whose determinant is not strictly positive.
    pub fn fold_count(&self) -> usize {
        self.data.iter().filter(|&&d| d <= 0.0).count()
    }

    /// Scalar-grid view, used for export.
    pub fn to_scalar_grid(&self) -> Result<ScalarGrid> {
        ScalarGrid::new(self.dims.extents(), self.data.clone())
    }
}

/// Column `k` of the returned matrix is `f(x + e_k) - f(x)`; entry `[i][k]` is component `i`.
pub(crate) fn cell_jacobian(f: &DeformationField, cell: [usize; 3]) -> [[f64; 3]; 3] {
    let dims = f.dims();
    let d = dims.ndim();
    let base = f.get(cell);
    let mut m = [[0.0; 3]; 3];
    for k in 0..d {
        let mut n = cell;
        n[k] += 1;
        let p = f.get(n);
        for i in 0..d {
            m[i][k] = p[i] - base[i];
        }
    }
    m
}

pub(crate) fn det2(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Cofactor expansion along the first row.
pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `out[i][k]` is the derivative of the determinant with respect to `m[i][k]`.
pub(crate) fn cofactors(m: &[[f64; 3]; 3], d: usize) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    if d == 2 {
        c[0][0] = m[1][1];
        c[0][1] = -m[1][0];
        c[1][0] = -m[0][1];
        c[1][1] = m[0][0];
        return c;
    }
    for (i, row) in c.iter_mut().enumerate() {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        for (k, v) in row.iter_mut().enumerate() {
            let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
            *v = m[i1][k1] * m[i2][k2] - m[i1][k2] * m[i2][k1];
        }
    }
    c
}

pub(crate) fn determinant(m: &[[f64; 3]; 3], d: usize) -> f64 {
    if d == 2 {
        det2(m)
    } else {
        det3(m)
    }
}

pub fn jacobian_determinant(f: &DeformationField) -> Result<JacobianGrid> {
    let dims = f.dims();
    dims.require_at_least(2)?;
    let cells = dims.shrunk(1);
    let d = dims.ndim();
    let data = exec::map_indexed(cells.len(), |c| {
        determinant(&cell_jacobian(f, cells.node(c)), d)
    });
    Ok(JacobianGrid { dims: cells, data })
}

/// Smallest cell determinant; positive means every cell preserves orientation.
pub fn min_determinant(j: &JacobianGrid) -> f64 {
    j.data.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Central-difference Laplacian of each channel on the interior lattice
/// (extents reduced by two; interior node `i` is field node `i + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianGrid {
    dims: Dims,
    channels: usize,
    data: Vec<f64>,
}

impl LaplacianGrid {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value at a field node (not an interior index). Panics for boundary nodes.
    pub fn at(&self, node: [usize; 3], channel: usize) -> f64 {
        let mut inner = [0; 3];
        for a in 0..self.dims.ndim() {
            inner[a] = node[a] - 1;
        }
        self.data[self.dims.index(inner) * self.channels + channel]
    }
}

pub fn laplacian(f: &DeformationField) -> Result<LaplacianGrid> {
    let dims = f.dims();
    dims.require_at_least(3)?;
    let interior = dims.shrunk(2);
    let d = dims.ndim();
    let data = f.data();
    let mut out = vec![0.0; interior.len() * d];
    let center_weight = 2.0 * d as f64;
    exec::fill_chunks(&mut out, d, |i, chunk| {
        let inner = interior.node(i);
        let mut node = inner;
        for v in node.iter_mut().take(d) {
            *v += 1;
        }
        let center = dims.index(node);
        for (c, v) in chunk.iter_mut().enumerate() {
            let mut acc = 0.0;
            for axis in 0..d {
                let s = dims.stride(axis);
                acc += data[(center + s) * d + c] + data[(center - s) * d + c];
            }
            *v = acc - center_weight * data[center * d + c];
        }
    });
    Ok(LaplacianGrid {
        dims: interior,
        channels: d,
        data: out,
    })
}

/// Backward warp: output node `x` takes the template value at position `f(x)`.
pub fn warp_mask(template: &MaskGrid, f: &DeformationField) -> Result<MaskGrid> {
    template.dims().require_same(&f.dims())?;
    let (values, _) = warp_with_gradient(template, f, false);
    MaskGrid::from_parts_clamped(template.dims(), template.spacing().to_vec(), values)
        .with_threshold(template.threshold())
}

/// Warped values and, when requested, the template's spatial gradient at each lookup.
pub(crate) fn warp_with_gradient(
    template: &MaskGrid,
    f: &DeformationField,
    with_gradient: bool,
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let dims = template.dims();
    let values = template.values();
    let pairs = exec::map_indexed(dims.len(), |i| {
        sample_with_gradient(&dims, values, f.at_index(i))
    });
    if with_gradient {
        pairs.into_iter().unzip()
    } else {
        (pairs.into_iter().map(|(v, _)| v).collect(), Vec::new())
    }
}
