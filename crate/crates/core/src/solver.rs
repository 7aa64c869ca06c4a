//! Per-image optimization of the deformation field and the coarse-to-fine driver.

use serde::{Deserialize, Serialize};

use crate::coords::LaplacianCoordinates;
use crate::deform::{jacobian_determinant, warp_mask};
use crate::error::{Error, Result};
use crate::grid::{DeformationField, Lattice, MaskGrid, ScalarGrid};
use crate::loss::{self, LossBreakdown, LossConfig};
use crate::optim::{make_optimizer, L1Penalty, OptimizerKind};
use crate::topology::{certify, TopologyReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub loss: LossConfig,
    pub max_iters: usize,
    pub step_size: f64,
    pub optimizer: OptimizerKind,
    /// Stop when the relative change of the total loss falls below this.
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            loss: LossConfig::default(),
            max_iters: 500,
            step_size: 0.05,
            optimizer: OptimizerKind::AdaptiveMoment,
            convergence_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "convergence_tol must be >= 0, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SolveConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub field: DeformationField,
    /// Warped template before binarization.
    pub soft_mask: MaskGrid,
    pub mask: MaskGrid,
    /// One entry per evaluated iterate; the last entry describes the returned field.
    pub loss_history: Vec<LossBreakdown>,
    pub topology: TopologyReport,
}

impl SolveResult {
    /// Loss history as CSV with header `iter,dice,jacobian,laplacian,total`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,dice,jacobian,laplacian,total\n");
        for (i, b) in self.loss_history.iter().enumerate() {
            out.push_str(&format!(
                "{i},{:e},{:e},{:e},{:e}\n",
                b.dice, b.jacobian, b.laplacian, b.total
            ));
        }
        out
    }
}

fn check_inputs(image: &ScalarGrid, template: &MaskGrid, target: &MaskGrid) -> Result<()> {
    image.dims().require_same(&template.dims())?;
    image.dims().require_same(&target.dims())?;
    image.dims().require_at_least(3)
}

/// Optimizes `f` from the identity so that `warp_mask(template, f)` matches `target`.
///
/// The best iterate by total loss is returned; if it is not the last one evaluated,
/// its breakdown is appended to the history so the history ends on the returned state.
pub fn solve_single_level(
    image: &ScalarGrid,
    template: &MaskGrid,
    target: &MaskGrid,
    config: &SolveConfig,
) -> Result<SolveResult> {
    config.validate()?;
    check_inputs(image, template, target)?;
    let dims = image.dims();
    let mut field = DeformationField::identity(dims.extents())?;
    let coords = LaplacianCoordinates::new(dims)?;
    let mut params = vec![0.0; coords.len()];
    let penalized = coords.penalized();
    let l1 = L1Penalty {
        weight: config.loss.lambda_lap,
        penalized: &penalized,
    };
    let mut optimizer = make_optimizer(config.optimizer, config.step_size, params.len());

    let mut history: Vec<LossBreakdown> = Vec::new();
    let mut best: Option<(f64, usize, DeformationField)> = None;
    for iter in 0..config.max_iters {
        let (breakdown, grad) = loss::evaluate_smooth(template, target, &field, &config.loss)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter,
                step_size: config.step_size,
            });
        }
        let previous = history.last().map(|b| b.total);
        history.push(breakdown);
        if best.as_ref().is_none_or(|(t, _, _)| breakdown.total < *t) {
            best = Some((breakdown.total, iter, field.clone()));
        }
        if breakdown.total == 0.0 {
            break;
        }
        if let Some(prev) = previous {
            let change = (prev - breakdown.total).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if change < config.convergence_tol {
                break;
            }
        }
        if iter + 1 < config.max_iters {
            let mut next = params.clone();
            optimizer.step(&mut next, &coords.pull_back(&grad), Some(&l1));
            let delta: Vec<f64> = next.iter().zip(&params).map(|(a, b)| a - b).collect();
            coords.apply_increment(&mut field, &delta);
            params = next;
        }
    }
    let (_, best_iter, best_field) = best.expect("at least one iterate is evaluated");
    if best_iter + 1 != history.len() {
        history.push(history[best_iter]);
    }
    finish(template, best_field, history, template)
}

/// Warps, binarizes and certifies the final field against `reference` (the topology prior).
fn finish(
    template: &MaskGrid,
    field: DeformationField,
    loss_history: Vec<LossBreakdown>,
    reference: &MaskGrid,
) -> Result<SolveResult> {
    let soft_mask = warp_mask(template, &field)?;
    let mask = soft_mask.binarize();
    let jac = jacobian_determinant(&field)?;
    let topology = certify(&mask, &reference.binarize(), Some(&jac))?;
    Ok(SolveResult {
        field,
        soft_mask,
        mask,
        loss_history,
        topology,
    })
}

/// Coarse-to-fine solve over `levels` resolutions (factors `2^(levels-1)`, ..., 2, 1).
///
/// The coarsest level deforms the downsampled template; every later level deforms the
/// upsampled soft prediction of the level before, starting again from the identity.
/// Level templates are binarized: resampled soft masks blur at every level, and soft
/// Dice against a blurred template is already near its optimum at the identity.
/// The final result is certified against the caller's template.
pub fn solve_multilevel(
    image: &ScalarGrid,
    template: &MaskGrid,
    target: &MaskGrid,
    levels: usize,
    config: &SolveConfig,
) -> Result<SolveResult> {
    if levels < 1 {
        return Err(Error::InvalidConfig("levels must be >= 1".into()));
    }
    if levels == 1 {
        return solve_single_level(image, template, target, config);
    }
    config.validate()?;
    image.dims().require_same(&template.dims())?;
    image.dims().require_same(&target.dims())?;
    let extents = image.dims().extents().to_vec();
    let coarsest = 1usize << (levels - 1);
    let image_p = image.pad_to_multiple(coarsest);
    let template_p = template.pad_to_multiple(coarsest);
    let target_p = target.pad_to_multiple(coarsest);

    let mut level_template = template_p.downsample(coarsest)?.binarize();
    let mut result = None;
    for level in 0..levels {
        let factor = 1usize << (levels - 1 - level);
        if level > 0 {
            let prev: &SolveResult = result.as_ref().expect("previous level solved");
            level_template = prev.soft_mask.upsample(2)?.binarize();
        }
        let (img, tgt) = if factor == 1 {
            (image_p.clone(), target_p.clone())
        } else {
            (image_p.downsample(factor)?, target_p.downsample(factor)?)
        };
        result = Some(solve_single_level(&img, &level_template, &tgt, config)?);
    }
    let last = result.expect("levels >= 1");
    let field = last.field.crop(&extents)?;
    let final_template = level_template.crop(&extents)?;
    finish(&final_template, field, last.loss_history, template)
}

/// How the fidelity target is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetMethod {
    OtsuThreshold,
    Provided(MaskGrid),
}

const OTSU_BINS: usize = 256;

/// Otsu's threshold over a 256-bin histogram spanning the image's intensity range.
/// Returns the first intensity assigned to the foreground class.
pub fn otsu_threshold(image: &ScalarGrid) -> Result<f64> {
    let data = image.data();
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo <= 1e-12 {
        return Err(Error::DegenerateImage);
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let bin = |v: f64| (((v - lo) / width) as usize).min(OTSU_BINS - 1);
    let mut hist = [0usize; OTSU_BINS];
    for &v in data {
        hist[bin(v)] += 1;
    }
    let total = data.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_k, mut best_var) = (0usize, -1.0);
    for (k, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    Ok(lo + (best_k + 1) as f64 * width)
}

pub fn derive_target_mask(image: &ScalarGrid, method: &TargetMethod) -> Result<MaskGrid> {
    match method {
        TargetMethod::Provided(mask) => {
            image.dims().require_same(&mask.dims())?;
            Ok(mask.clone())
        }
        TargetMethod::OtsuThreshold => {
            let t = otsu_threshold(image)?;
            let mut mask = MaskGrid::from_predicate(image.dims().extents(), |n| image.get(n) >= t)?;
            if image.spacing().iter().any(|&s| s != 1.0) {
                mask = mask.with_spacing(image.spacing())?;
            }
            Ok(mask)
        }
    }
}
