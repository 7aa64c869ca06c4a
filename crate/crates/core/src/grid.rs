//! Dense 2D/3D grids: scalar images, soft masks and coordinate-valued deformation fields.
//!
//! Storage is row-major with the x axis fastest: node `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. Deformation fields store all `D` components of a node
//! contiguously (node-major). Coordinates are absolute positions in index units.

use crate::error::{Error, Result};

/// Extents of a 2D or 3D lattice. Unused trailing axes have extent 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    ext: [usize; 3],
    ndim: usize,
}

impl Dims {
    /// Accepts 2 or 3 extents, each at least 1.
    pub fn new(extents: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&extents.len()) || extents.contains(&0) {
            return Err(Error::InvalidDims(extents.to_vec()));
        }
        let mut ext = [1; 3];
        ext[..extents.len()].copy_from_slice(extents);
        Ok(Dims {
            ext,
            ndim: extents.len(),
        })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn extents(&self) -> &[usize] {
        &self.ext[..self.ndim]
    }

    /// Extent along `axis`; 1 for axes beyond `ndim`.
    pub fn extent(&self, axis: usize) -> usize {
        self.ext[axis]
    }

    pub fn len(&self) -> usize {
        self.ext.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, node: [usize; 3]) -> usize {
        node[0] + self.ext[0] * (node[1] + self.ext[1] * node[2])
    }

    pub fn node(&self, index: usize) -> [usize; 3] {
        let x = index % self.ext[0];
        let rest = index / self.ext[0];
        [x, rest % self.ext[1], rest / self.ext[1]]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.ext[..axis].iter().product()
    }

    /// Every extent is at least `min`.
    pub fn all_at_least(&self, min: usize) -> bool {
        self.extents().iter().all(|&n| n >= min)
    }

    pub(crate) fn require_at_least(&self, min: usize) -> Result<()> {
        if self.all_at_least(min) {
            Ok(())
        } else {
            Err(Error::TooSmall {
                dims: self.extents().to_vec(),
                min,
            })
        }
    }

    pub(crate) fn require_same(&self, other: &Dims) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.extents().to_vec(),
                found: other.extents().to_vec(),
            })
        }
    }

    /// Lattice with every extent reduced by `by` (cell or interior lattices).
    pub(crate) fn shrunk(&self, by: usize) -> Dims {
        let mut ext = [1; 3];
        for (a, e) in ext.iter_mut().enumerate().take(self.ndim) {
            *e = self.ext[a] - by;
        }
        Dims {
            ext,
            ndim: self.ndim,
        }
    }

    fn map_extents(&self, f: impl Fn(usize) -> usize) -> Dims {
        let mut ext = [1; 3];
        for (a, e) in ext.iter_mut().enumerate().take(self.ndim) {
            *e = f(self.ext[a]);
        }
        Dims {
            ext,
            ndim: self.ndim,
        }
    }

    /// Iterates node coordinates in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }
}

/// Common read access to scalar-valued lattices.
pub trait Lattice {
    fn dims(&self) -> Dims;
    fn values(&self) -> &[f64];
    fn spacing(&self) -> &[f64];

    /// Bilinear/trilinear interpolation with per-axis clamping to `[0, n-1]`.
    fn sample_linear(&self, point: &[f64]) -> Result<f64> {
        let dims = self.dims();
        if point.len() != dims.ndim() {
            return Err(Error::DimensionMismatch {
                expected: vec![dims.ndim()],
                found: vec![point.len()],
            });
        }
        if point.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(point.to_vec()));
        }
        let mut p = [0.0; 3];
        p[..point.len()].copy_from_slice(point);
        Ok(sample_with_gradient(&dims, self.values(), p).0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    dims: Dims,
    spacing: Vec<f64>,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskGrid {
    dims: Dims,
    spacing: Vec<f64>,
    data: Vec<f64>,
    threshold: f64,
}

/// A map assigning every node an absolute lookup position, `D` components per node.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    dims: Dims,
    spacing: Vec<f64>,
    data: Vec<f64>,
}

fn check_len(dims: &Dims, channels: usize, len: usize) -> Result<()> {
    let expected = dims.len() * channels;
    if expected != len {
        return Err(Error::DataLength {
            expected,
            found: len,
        });
    }
    Ok(())
}

fn check_spacing(dims: &Dims, spacing: &[f64]) -> Result<()> {
    if spacing.len() != dims.ndim() || spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "spacing {spacing:?} must hold {} positive values",
            dims.ndim()
        )));
    }
    Ok(())
}

fn from_fn_values(dims: &Dims, f: impl Fn([usize; 3]) -> f64) -> Vec<f64> {
    dims.nodes().map(f).collect()
}

impl ScalarGrid {
    pub fn new(extents: &[usize], data: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(extents)?;
        check_len(&dims, 1, data.len())?;
        Ok(ScalarGrid {
            dims,
            spacing: vec![1.0; dims.ndim()],
            data,
        })
    }

    pub fn filled(extents: &[usize], value: f64) -> Result<Self> {
        let dims = Dims::new(extents)?;
        Self::new(extents, vec![value; dims.len()])
    }

    pub fn from_fn(extents: &[usize], f: impl Fn([usize; 3]) -> f64) -> Result<Self> {
        let dims = Dims::new(extents)?;
        Self::new(extents, from_fn_values(&dims, f))
    }

    pub fn with_spacing(mut self, spacing: &[f64]) -> Result<Self> {
        check_spacing(&self.dims, spacing)?;
        self.spacing = spacing.to_vec();
        Ok(self)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, node: [usize; 3]) -> f64 {
        self.data[self.dims.index(node)]
    }

    pub fn set(&mut self, node: [usize; 3], value: f64) {
        let i = self.dims.index(node);
        self.data[i] = value;
    }

    /// Min-max rescale into `[0, 1]`. A constant image becomes all zeros.
    pub fn normalize_intensity(&mut self) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        for v in &mut self.data {
            *v = if range > 0.0 {
                ((*v - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }

    pub fn mean(&self) -> f64 {
        crate::exec::ordered_sum(&self.data) / self.data.len() as f64
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let (dims, data) = block_mean(&self.dims, &self.data, factor)?;
        Ok(ScalarGrid {
            dims,
            spacing: self.spacing.iter().map(|s| s * factor as f64).collect(),
            data,
        })
    }

    pub fn upsample(&self, factor: usize) -> Result<Self> {
        let (dims, data) = upsample_values(&self.dims, &self.data, 1, factor, false)?;
        Ok(ScalarGrid {
            dims,
            spacing: self.spacing.iter().map(|s| s / factor as f64).collect(),
            data,
        })
    }

    /// Edge-replicates up to the next multiple of `multiple` along every axis.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let (dims, data) = pad_replicate(&self.dims, &self.data, 1, multiple);
        ScalarGrid {
            dims,
            spacing: self.spacing.clone(),
            data,
        }
    }

    /// Leading sub-block with the given extents.
    pub fn crop(&self, extents: &[usize]) -> Result<Self> {
        let (dims, data) = crop_values(&self.dims, &self.data, 1, extents)?;
        Ok(ScalarGrid {
            dims,
            spacing: self.spacing.clone(),
            data,
        })
    }
}

impl Lattice for ScalarGrid {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
    fn spacing(&self) -> &[f64] {
        &self.spacing
    }
}

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

impl MaskGrid {
    /// Values must lie in `[0, 1]`; the binarization threshold defaults to 0.5.
    pub fn new(extents: &[usize], data: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(extents)?;
        check_len(&dims, 1, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::MaskRange { index, value });
        }
        Ok(MaskGrid {
            dims,
            spacing: vec![1.0; dims.ndim()],
            data,
            threshold: DEFAULT_MASK_THRESHOLD,
        })
    }

    pub fn empty(extents: &[usize]) -> Result<Self> {
        let dims = Dims::new(extents)?;
        Self::new(extents, vec![0.0; dims.len()])
    }

    /// Binary mask from a predicate over node coordinates.
    pub fn from_predicate(extents: &[usize], f: impl Fn([usize; 3]) -> bool) -> Result<Self> {
        let dims = Dims::new(extents)?;
        Self::new(
            extents,
            from_fn_values(&dims, |n| if f(n) { 1.0 } else { 0.0 }),
        )
    }

    /// Clamps values into `[0, 1]`; used for resampled or interpolated masks.
    pub(crate) fn from_parts_clamped(dims: Dims, spacing: Vec<f64>, data: Vec<f64>) -> Self {
        MaskGrid {
            dims,
            spacing,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            threshold: DEFAULT_MASK_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "mask threshold {threshold} must lie in (0, 1)"
            )));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn with_spacing(mut self, spacing: &[f64]) -> Result<Self> {
        check_spacing(&self.dims, spacing)?;
        self.spacing = spacing.to_vec();
        Ok(self)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, node: [usize; 3]) -> f64 {
        self.data[self.dims.index(node)]
    }

    pub fn set(&mut self, node: [usize; 3], value: f64) {
        let i = self.dims.index(node);
        self.data[i] = value.clamp(0.0, 1.0);
    }

    /// `1` where the value reaches the threshold, `0` elsewhere.
    pub fn binarize(&self) -> MaskGrid {
        MaskGrid {
            data: self
                .data
                .iter()
                .map(|&v| if v >= self.threshold { 1.0 } else { 0.0 })
                .collect(),
            ..self.clone()
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        match self.data.iter().position(|&v| v != 0.0 && v != 1.0) {
            None => Ok(()),
            Some(index) => Err(Error::NotBinary {
                index,
                value: self.data[index],
            }),
        }
    }

    /// Number of nodes at or above the threshold.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v >= self.threshold).count()
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let (dims, data) = block_mean(&self.dims, &self.data, factor)?;
        Ok(MaskGrid {
            dims,
            spacing: self.spacing.iter().map(|s| s * factor as f64).collect(),
            data,
            threshold: self.threshold,
        })
    }

    pub fn upsample(&self, factor: usize) -> Result<Self> {
        let (dims, data) = upsample_values(&self.dims, &self.data, 1, factor, false)?;
        let spacing = self.spacing.iter().map(|s| s / factor as f64).collect();
        Ok(MaskGrid::from_parts_clamped(dims, spacing, data).with_same_threshold(self))
    }

    fn with_same_threshold(mut self, other: &MaskGrid) -> Self {
        self.threshold = other.threshold;
        self
    }

    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let (dims, data) = pad_replicate(&self.dims, &self.data, 1, multiple);
        MaskGrid {
            dims,
            spacing: self.spacing.clone(),
            data,
            threshold: self.threshold,
        }
    }

    pub fn crop(&self, extents: &[usize]) -> Result<Self> {
        let (dims, data) = crop_values(&self.dims, &self.data, 1, extents)?;
        Ok(MaskGrid {
            dims,
            spacing: self.spacing.clone(),
            data,
            threshold: self.threshold,
        })
    }
}

impl Lattice for MaskGrid {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
    fn spacing(&self) -> &[f64] {
        &self.spacing
    }
}

impl DeformationField {
    /// Field mapping every node to its own index coordinates.
    pub fn identity(extents: &[usize]) -> Result<Self> {
        let dims = Dims::new(extents)?;
        dims.require_at_least(2)?;
        Ok(Self::from_fn_dims(dims, |n| {
            [n[0] as f64, n[1] as f64, n[2] as f64]
        }))
    }

    pub fn from_fn(extents: &[usize], f: impl Fn([usize; 3]) -> [f64; 3]) -> Result<Self> {
        let dims = Dims::new(extents)?;
        Ok(Self::from_fn_dims(dims, f))
    }

    pub(crate) fn from_fn_dims(dims: Dims, f: impl Fn([usize; 3]) -> [f64; 3]) -> Self {
        let d = dims.ndim();
        let mut data = Vec::with_capacity(dims.len() * d);
        for node in dims.nodes() {
            data.extend_from_slice(&f(node)[..d]);
        }
        DeformationField {
            dims,
            spacing: vec![1.0; d],
            data,
        }
    }

    /// Node-major raw coordinates (`D` values per node).
    pub fn from_data(extents: &[usize], data: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(extents)?;
        check_len(&dims, dims.ndim(), data.len())?;
        Ok(DeformationField {
            dims,
            spacing: vec![1.0; dims.ndim()],
            data,
        })
    }

    pub fn with_spacing(mut self, spacing: &[f64]) -> Result<Self> {
        check_spacing(&self.dims, spacing)?;
        self.spacing = spacing.to_vec();
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn channels(&self) -> usize {
        self.dims.ndim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Lookup position of a node; unused trailing components are 0.
    pub fn get(&self, node: [usize; 3]) -> [f64; 3] {
        self.at_index(self.dims.index(node))
    }

    pub(crate) fn at_index(&self, index: usize) -> [f64; 3] {
        let d = self.channels();
        let mut out = [0.0; 3];
        out[..d].copy_from_slice(&self.data[index * d..(index + 1) * d]);
        out
    }

    pub fn set(&mut self, node: [usize; 3], value: [f64; 3]) {
        let d = self.channels();
        let i = self.dims.index(node) * d;
        self.data[i..i + d].copy_from_slice(&value[..d]);
    }

    /// Displacement `f(x) - x` at a node.
    pub fn displacement(&self, node: [usize; 3]) -> [f64; 3] {
        let p = self.get(node);
        let mut out = [0.0; 3];
        for a in 0..self.channels() {
            out[a] = p[a] - node[a] as f64;
        }
        out
    }

    /// Resamples onto a lattice `factor` times finer. Coordinates are interpolated
    /// per channel (linear extrapolation at the border) and rescaled to fine-lattice
    /// units, so identity maps to identity and affine maps stay affine.
    pub fn upsample(&self, factor: usize) -> Result<Self> {
        let d = self.channels();
        let (dims, mut data) = upsample_values(&self.dims, &self.data, d, factor, true)?;
        let f = factor as f64;
        let offset = (f - 1.0) / 2.0;
        for v in &mut data {
            *v = *v * f + offset;
        }
        Ok(DeformationField {
            dims,
            spacing: self.spacing.iter().map(|s| s / f).collect(),
            data,
        })
    }

    pub fn crop(&self, extents: &[usize]) -> Result<Self> {
        let (dims, data) = crop_values(&self.dims, &self.data, self.channels(), extents)?;
        Ok(DeformationField {
            dims,
            spacing: self.spacing.clone(),
            data,
        })
    }
}

pub fn make_identity_field(extents: &[usize]) -> Result<DeformationField> {
    DeformationField::identity(extents)
}

/// Per-axis interpolation stencil: lower index, upper index, weight of the upper
/// node, and whether the coordinate was inside `[0, n-1]` (zero derivative if clamped).
#[inline]
fn axis_stencil(c: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, false);
    }
    let hi = (n - 1) as f64;
    let inside = (0.0..=hi).contains(&c);
    let cc = c.clamp(0.0, hi);
    let i0 = (cc.floor() as usize).min(n - 2);
    (i0, i0 + 1, cc - i0 as f64, inside)
}

/// Exact at both `t = 0` and `t = 1`.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Interpolated value and its gradient with respect to the sample position.
///
/// At integer positions the derivative is taken from the cell above the node
/// (the one-sided derivative of the cell that owns the point).
pub(crate) fn sample_with_gradient(dims: &Dims, data: &[f64], p: [f64; 3]) -> (f64, [f64; 3]) {
    let (x0, x1, tx, inx) = axis_stencil(p[0], dims.extent(0));
    let (y0, y1, ty, iny) = axis_stencil(p[1], dims.extent(1));
    let gx = if inx { 1.0 } else { 0.0 };
    let gy = if iny { 1.0 } else { 0.0 };
    if dims.ndim() == 2 {
        let nx = dims.extent(0);
        let v00 = data[x0 + nx * y0];
        let v10 = data[x1 + nx * y0];
        let v01 = data[x0 + nx * y1];
        let v11 = data[x1 + nx * y1];
        let a = lerp(v00, v10, tx);
        let b = lerp(v01, v11, tx);
        let value = lerp(a, b, ty);
        let dx = ((1.0 - ty) * (v10 - v00) + ty * (v11 - v01)) * gx;
        let dy = (b - a) * gy;
        return (value, [dx, dy, 0.0]);
    }
    let (z0, z1, tz, inz) = axis_stencil(p[2], dims.extent(2));
    let gz = if inz { 1.0 } else { 0.0 };
    let nx = dims.extent(0);
    let nxy = nx * dims.extent(1);
    let at = |x: usize, y: usize, z: usize| data[x + nx * y + nxy * z];
    let c000 = at(x0, y0, z0);
    let c100 = at(x1, y0, z0);
    let c010 = at(x0, y1, z0);
    let c110 = at(x1, y1, z0);
    let c001 = at(x0, y0, z1);
    let c101 = at(x1, y0, z1);
    let c011 = at(x0, y1, z1);
    let c111 = at(x1, y1, z1);
    // interpolate along x
    let c00 = lerp(c000, c100, tx);
    let c10 = lerp(c010, c110, tx);
    let c01 = lerp(c001, c101, tx);
    let c11 = lerp(c011, c111, tx);
    // along y
    let c0 = lerp(c00, c10, ty);
    let c1 = lerp(c01, c11, ty);
    let value = lerp(c0, c1, tz);

    let dz = (c1 - c0) * gz;
    let dy = ((1.0 - tz) * (c10 - c00) + tz * (c11 - c01)) * gy;
    let ex0 = (1.0 - ty) * (c100 - c000) + ty * (c110 - c010);
    let ex1 = (1.0 - ty) * (c101 - c001) + ty * (c111 - c011);
    let dx = ((1.0 - tz) * ex0 + tz * ex1) * gx;
    (value, [dx, dy, dz])
}

fn block_mean(dims: &Dims, data: &[f64], factor: usize) -> Result<(Dims, Vec<f64>)> {
    if factor < 1 {
        return Err(Error::InvalidFactor(factor));
    }
    let out = dims.map_extents(|n| n.div_ceil(factor));
    let fz = if dims.ndim() == 3 { factor } else { 1 };
    let count = (factor * factor * fz) as f64;
    let src = |a: usize, i: usize| i.min(dims.extent(a) - 1);
    let values = crate::exec::map_indexed(out.len(), |o| {
        let [ox, oy, oz] = out.node(o);
        let mut sum = 0.0;
        for dz in 0..fz {
            let z = src(2, oz * fz + dz);
            for dy in 0..factor {
                let y = src(1, oy * factor + dy);
                for dx in 0..factor {
                    let x = src(0, ox * factor + dx);
                    sum += data[dims.index([x, y, z])];
                }
            }
        }
        sum / count
    });
    Ok((out, values))
}

/// Separable linear resampling of node-major multi-channel data along one axis.
/// Fine node `x` sits at coarse position `(x + 0.5) / factor - 0.5`.
fn upsample_axis(
    dims: &Dims,
    data: &[f64],
    channels: usize,
    axis: usize,
    factor: usize,
    extrapolate: bool,
) -> (Dims, Vec<f64>) {
    let n = dims.extent(axis);
    let mut ext = [1; 3];
    for (a, e) in ext.iter_mut().enumerate().take(dims.ndim()) {
        *e = if a == axis {
            n * factor
        } else {
            dims.extent(a)
        };
    }
    let out = Dims {
        ext,
        ndim: dims.ndim(),
    };
    let mut values = vec![0.0; out.len() * channels];
    let f = factor as f64;
    crate::exec::fill_chunks(&mut values, channels, |o, chunk| {
        let mut node = out.node(o);
        let c = (node[axis] as f64 + 0.5) / f - 0.5;
        let (i0, i1, t) = if n == 1 {
            (0, 0, 0.0)
        } else if extrapolate {
            let i0 = (c.floor().max(0.0) as usize).min(n - 2);
            (i0, i0 + 1, c - i0 as f64)
        } else {
            let (i0, i1, t, _) = axis_stencil(c, n);
            (i0, i1, t)
        };
        node[axis] = i0;
        let a = dims.index(node) * channels;
        node[axis] = i1;
        let b = dims.index(node) * channels;
        for (k, v) in chunk.iter_mut().enumerate() {
            let lo = data[a + k];
            let hi = data[b + k];
            *v = lerp(lo, hi, t);
        }
    });
    (out, values)
}

fn upsample_values(
    dims: &Dims,
    data: &[f64],
    channels: usize,
    factor: usize,
    extrapolate: bool,
) -> Result<(Dims, Vec<f64>)> {
    if factor < 1 {
        return Err(Error::InvalidFactor(factor));
    }
    let mut cur = (*dims, data.to_vec());
    for axis in 0..dims.ndim() {
        cur = upsample_axis(&cur.0, &cur.1, channels, axis, factor, extrapolate);
    }
    Ok(cur)
}

fn pad_replicate(dims: &Dims, data: &[f64], channels: usize, multiple: usize) -> (Dims, Vec<f64>) {
    let m = multiple.max(1);
    let out = dims.map_extents(|n| n.div_ceil(m) * m);
    let mut values = Vec::with_capacity(out.len() * channels);
    for node in out.nodes() {
        let mut src = [0; 3];
        for a in 0..3 {
            src[a] = node[a].min(dims.extent(a) - 1);
        }
        let i = dims.index(src) * channels;
        values.extend_from_slice(&data[i..i + channels]);
    }
    (out, values)
}

fn crop_values(
    dims: &Dims,
    data: &[f64],
    channels: usize,
    extents: &[usize],
) -> Result<(Dims, Vec<f64>)> {
    let out = Dims::new(extents)?;
    if out.ndim() != dims.ndim() || (0..3).any(|a| out.extent(a) > dims.extent(a)) {
        return Err(Error::DimensionMismatch {
            expected: dims.extents().to_vec(),
            found: extents.to_vec(),
        });
    }
    let mut values = Vec::with_capacity(out.len() * channels);
    for node in out.nodes() {
        let i = dims.index(node) * channels;
        values.extend_from_slice(&data[i..i + channels]);
    }
    Ok((out, values))
}
