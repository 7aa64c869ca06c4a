//! Segmentation loss on a deformation field: soft Dice fidelity, the ε-margin ReLU
//! penalty on Jacobian determinants, and the L1 norm of the field's Laplacian,
//! together with their analytic gradients with respect to every field coordinate.
//!
//! All terms are sums over cells or nodes. Per-element work may run in parallel,
//! but every reduction is sequential in index order, so values are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::deform::{self, cell_jacobian, cofactors, determinant};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{DeformationField, Dims, Lattice, MaskGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_dice: f64,
    pub lambda_jac: f64,
    pub lambda_lap: f64,
    /// Margin below which a cell determinant is penalized.
    pub epsilon: f64,
    pub dice_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_dice: 1.0,
            lambda_jac: 1.0,
            lambda_lap: 0.1,
            epsilon: 0.1,
            dice_smoothing: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_dice", self.lambda_dice),
            ("lambda_jac", self.lambda_jac),
            ("lambda_lap", self.lambda_lap),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.dice_smoothing.is_finite() && self.dice_smoothing > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dice_smoothing must be > 0, got {}",
                self.dice_smoothing
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: LossConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: f64,
    pub jacobian: f64,
    pub laplacian: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn weighted(dice: f64, jacobian: f64, laplacian: f64, cfg: &LossConfig) -> Self {
        LossBreakdown {
            dice,
            jacobian,
            laplacian,
            total: cfg.lambda_dice * dice + cfg.lambda_jac * jacobian + cfg.lambda_lap * laplacian,
        }
    }
}

/// Derivative of a loss with respect to each field coordinate, laid out like the field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradient {
    dims: Dims,
    data: Vec<f64>,
}

impl FieldGradient {
    fn zeros(dims: Dims) -> Self {
        FieldGradient {
            dims,
            data: vec![0.0; dims.len() * dims.ndim()],
        }
    }

    #[cfg(test)]
    pub(crate) fn from_parts(dims: Dims, data: Vec<f64>) -> Self {
        FieldGradient { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, node: [usize; 3], channel: usize) -> f64 {
        self.data[self.dims.index(node) * self.dims.ndim() + channel]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn add_scaled(&mut self, other: &FieldGradient, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

struct DiceSums {
    intersection: f64,
    pred: f64,
    label: f64,
}

fn dice_sums(pred: &[f64], label: &[f64]) -> DiceSums {
    let products: Vec<f64> = pred.iter().zip(label).map(|(p, g)| p * g).collect();
    DiceSums {
        intersection: exec::ordered_sum(&products),
        pred: exec::ordered_sum(pred),
        label: exec::ordered_sum(label),
    }
}

fn dice_from_sums(s: &DiceSums, smoothing: f64) -> f64 {
    1.0 - (2.0 * s.intersection + smoothing) / (s.pred + s.label + smoothing)
}

/// Smoothed soft Dice loss `1 - (2 Σ p g + s) / (Σ p + Σ g + s)` with `s = 1`.
pub fn dice_loss(pred: &MaskGrid, label: &MaskGrid) -> Result<f64> {
    dice_loss_smoothed(pred, label, LossConfig::default().dice_smoothing)
}

pub fn dice_loss_smoothed(pred: &MaskGrid, label: &MaskGrid, smoothing: f64) -> Result<f64> {
    pred.dims().require_same(&label.dims())?;
    Ok(dice_from_sums(
        &dice_sums(pred.values(), label.values()),
        smoothing,
    ))
}

/// `Σ_cells max(0, ε - det)`.
pub fn jacobian_loss(f: &DeformationField, epsilon: f64) -> Result<f64> {
    let j = deform::jacobian_determinant(f)?;
    Ok(jacobian_penalty(j.data(), epsilon))
}

fn jacobian_penalty(dets: &[f64], epsilon: f64) -> f64 {
    let shortfall: Vec<f64> = dets.iter().map(|d| (epsilon - d).max(0.0)).collect();
    exec::ordered_sum(&shortfall)
}

/// `Σ_interior Σ_channels |Δf|`.
pub fn laplacian_loss(f: &DeformationField) -> Result<f64> {
    let lap = deform::laplacian(f)?;
    let abs: Vec<f64> = lap.data().iter().map(|v| v.abs()).collect();
    Ok(exec::ordered_sum(&abs))
}

/// Weighted loss for a prediction `pred = warp_mask(template, f)` supplied by the caller.
pub fn total_loss(
    pred: &MaskGrid,
    label: &MaskGrid,
    f: &DeformationField,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    pred.dims().require_same(&f.dims())?;
    let dice = dice_loss_smoothed(pred, label, cfg.dice_smoothing)?;
    let jacobian = jacobian_loss(f, cfg.epsilon)?;
    let laplacian = laplacian_loss(f)?;
    Ok(LossBreakdown::weighted(dice, jacobian, laplacian, cfg))
}

/// Gradient of the Dice term through the backward warp of `template` by `f`.
pub fn dice_loss_gradient(
    template: &MaskGrid,
    label: &MaskGrid,
    f: &DeformationField,
    smoothing: f64,
) -> Result<FieldGradient> {
    Ok(dice_value_and_gradient(template, label, f, smoothing)?.1)
}

fn dice_value_and_gradient(
    template: &MaskGrid,
    label: &MaskGrid,
    f: &DeformationField,
    smoothing: f64,
) -> Result<(f64, FieldGradient)> {
    let dims = f.dims();
    template.dims().require_same(&dims)?;
    label.dims().require_same(&dims)?;
    let (pred, sample_grads) = deform::warp_with_gradient(template, f, true);
    let sums = dice_sums(&pred, label.values());
    let value = dice_from_sums(&sums, smoothing);

    let numer = 2.0 * sums.intersection + smoothing;
    let denom = sums.pred + sums.label + smoothing;
    let denom_sq = denom * denom;
    let g = label.values();
    let d = dims.ndim();
    let mut grad = FieldGradient::zeros(dims);
    exec::fill_chunks(&mut grad.data, d, |i, chunk| {
        let dl_dp = -(2.0 * g[i] * denom - numer) / denom_sq;
        for (c, v) in chunk.iter_mut().enumerate() {
            *v = dl_dp * sample_grads[i][c];
        }
    });
    Ok((value, grad))
}

/// Gradient of `Σ max(0, ε - det)`; cells exactly at the margin contribute 0.
pub fn jacobian_loss_gradient(f: &DeformationField, epsilon: f64) -> Result<FieldGradient> {
    Ok(jacobian_value_and_gradient(f, epsilon)?.1)
}

fn jacobian_value_and_gradient(f: &DeformationField, epsilon: f64) -> Result<(f64, FieldGradient)> {
    let dims = f.dims();
    dims.require_at_least(2)?;
    let d = dims.ndim();
    let cells = dims.shrunk(1);
    // per cell: determinant and the cofactor matrix scaled by dL/d(det)
    let per_cell = exec::map_indexed(cells.len(), |c| {
        let m = cell_jacobian(f, cells.node(c));
        let det = determinant(&m, d);
        let active = epsilon - det > 0.0;
        let cof = if active {
            cofactors(&m, d)
        } else {
            [[0.0; 3]; 3]
        };
        (det, active, cof)
    });
    let dets: Vec<f64> = per_cell.iter().map(|c| c.0).collect();
    let value = jacobian_penalty(&dets, epsilon);

    let mut grad = FieldGradient::zeros(dims);
    exec::fill_chunks(&mut grad.data, d, |n, chunk| {
        let node = dims.node(n);
        // as base node of its own cell: d(det)/d f(x) = -Σ_k C[i][k]
        if (0..d).all(|a| node[a] + 1 < dims.extent(a)) {
            let (_, active, cof) = &per_cell[cells.index(node)];
            if *active {
                for (i, v) in chunk.iter_mut().enumerate() {
                    *v += (0..d).map(|k| cof[i][k]).sum::<f64>();
                }
            }
        }
        // as the +e_k corner of the cell below along axis k: d(det)/d f(x+e_k) = C[i][k]
        for k in 0..d {
            if node[k] == 0 || (0..d).any(|a| a != k && node[a] + 1 >= dims.extent(a)) {
                continue;
            }
            let mut base = node;
            base[k] -= 1;
            let (_, active, cof) = &per_cell[cells.index(base)];
            if *active {
                for (i, v) in chunk.iter_mut().enumerate() {
                    *v -= cof[i][k];
                }
            }
        }
    });
    Ok((value, grad))
}

/// Subgradient of `Σ |Δf|` using `sign(0) = 0`.
pub fn laplacian_loss_gradient(f: &DeformationField) -> Result<FieldGradient> {
    Ok(laplacian_value_and_gradient(f)?.1)
}

fn laplacian_value_and_gradient(f: &DeformationField) -> Result<(f64, FieldGradient)> {
    let lap = deform::laplacian(f)?;
    let abs: Vec<f64> = lap.data().iter().map(|v| v.abs()).collect();
    let value = exec::ordered_sum(&abs);

    let dims = f.dims();
    let d = dims.ndim();
    let interior = lap.dims();
    let signs: Vec<f64> = lap
        .data()
        .iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let is_interior =
        |node: [usize; 3]| (0..d).all(|a| node[a] >= 1 && node[a] + 1 < dims.extent(a));
    let sign_at = |node: [usize; 3], c: usize| {
        let mut inner = [0; 3];
        for a in 0..d {
            inner[a] = node[a] - 1;
        }
        signs[interior.index(inner) * d + c]
    };
    let center_weight = 2.0 * d as f64;

    let mut grad = FieldGradient::zeros(dims);
    exec::fill_chunks(&mut grad.data, d, |n, chunk| {
        let node = dims.node(n);
        for (c, v) in chunk.iter_mut().enumerate() {
            let mut acc = 0.0;
            if is_interior(node) {
                acc -= center_weight * sign_at(node, c);
            }
            for axis in 0..d {
                if node[axis] >= 1 {
                    let mut m = node;
                    m[axis] -= 1;
                    if is_interior(m) {
                        acc += sign_at(m, c);
                    }
                }
                let mut m = node;
                m[axis] += 1;
                if m[axis] < dims.extent(axis) && is_interior(m) {
                    acc += sign_at(m, c);
                }
            }
            *v = acc;
        }
    });
    Ok((value, grad))
}

/// Loss of `warp_mask(template, f)` against `label` and its gradient in one pass.
pub fn evaluate(
    template: &MaskGrid,
    label: &MaskGrid,
    f: &DeformationField,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, FieldGradient)> {
    let (breakdown, mut grad) = evaluate_smooth(template, label, f, cfg)?;
    if cfg.lambda_lap != 0.0 {
        let (_, lap_grad) = laplacian_value_and_gradient(f)?;
        grad.add_scaled(&lap_grad, cfg.lambda_lap);
    }
    Ok((breakdown, grad))
}

/// Full loss breakdown, but the gradient of the Dice and Jacobian terms only.
/// The solver treats the L1 Laplacian term through its proximal map instead.
pub(crate) fn evaluate_smooth(
    template: &MaskGrid,
    label: &MaskGrid,
    f: &DeformationField,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, FieldGradient)> {
    cfg.validate()?;
    let (dice, mut grad) = dice_value_and_gradient(template, label, f, cfg.dice_smoothing)?;
    let (jacobian, jac_grad) = jacobian_value_and_gradient(f, cfg.epsilon)?;
    let laplacian = laplacian_loss(f)?;
    for v in &mut grad.data {
        *v *= cfg.lambda_dice;
    }
    grad.add_scaled(&jac_grad, cfg.lambda_jac);
    Ok((
        LossBreakdown::weighted(dice, jacobian, laplacian, cfg),
        grad,
    ))
}

pub fn total_loss_gradient(
    template: &MaskGrid,
    label: &MaskGrid,
    f: &DeformationField,
    cfg: &LossConfig,
) -> Result<FieldGradient> {
    Ok(evaluate(template, label, f, cfg)?.1)
}
