//! Solver behavior on small synthetic problems.

use toposeg::deform::{jacobian_determinant, min_determinant};
use toposeg::exec;
use toposeg::grid::{MaskGrid, ScalarGrid};
use toposeg::loss;
use toposeg::metrics::dice_score;
use toposeg::optim::OptimizerKind;
use toposeg::solver::{
    derive_target_mask, solve_multilevel, solve_single_level, SolveConfig, TargetMethod,
};
use toposeg::synth::{generate, Shape, SynthSpec};

fn quick(max_iters: usize) -> SolveConfig {
    SolveConfig {
        max_iters,
        ..SolveConfig::default()
    }
}

#[test]
fn target_equal_to_template_starts_at_zero_loss() {
    let disk = MaskGrid::from_predicate(&[20, 20], |[x, y, _]| {
        (x as f64 - 9.5).powi(2) + (y as f64 - 9.5).powi(2) < 36.0
    })
    .unwrap();
    let image = ScalarGrid::from_fn(&[20, 20], |n| disk.get(n)).unwrap();
    let r = solve_single_level(&image, &disk, &disk, &quick(50)).unwrap();
    assert_eq!(r.mask, disk);
    assert_eq!(r.loss_history[0].total, 0.0);
    assert!(r.topology.matches_template);
}

#[test]
fn two_blob_target_keeps_one_component() {
    let fx = generate(&SynthSpec::new(Shape::TwoBlobs, &[32, 32])).unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let r = solve_single_level(&fx.image, &fx.template, &target, &quick(200)).unwrap();
    assert_eq!(r.topology.component_count, 1);
    assert!(r.topology.matches_template);
    assert!(dice_score(&r.mask, &fx.label).unwrap() < 1.0);
}

#[test]
fn one_level_is_the_single_level_solve() {
    let fx = generate(&SynthSpec::new(Shape::Disk, &[24, 24]).noise(0.05)).unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let a = solve_single_level(&fx.image, &fx.template, &target, &quick(40)).unwrap();
    let b = solve_multilevel(&fx.image, &fx.template, &target, 1, &quick(40)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_masks_on_blank_image() {
    let image = ScalarGrid::filled(&[12, 12], 0.0).unwrap();
    let empty = MaskGrid::empty(&[12, 12]).unwrap();
    let r = solve_multilevel(&image, &empty, &empty, 2, &quick(20)).unwrap();
    assert_eq!(r.mask.count(), 0);
    assert_eq!(r.topology.component_count, 0);
    assert!(r.topology.matches_template);
}

#[test]
fn gradient_descent_is_monotone_for_small_steps() {
    let fx =
        generate(&SynthSpec::new(Shape::Disk, &[24, 24]).template_offset(&[2.0, -1.0])).unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let cfg = SolveConfig {
        optimizer: OptimizerKind::GradientDescent,
        step_size: 1e-3,
        convergence_tol: 0.0,
        ..quick(30)
    };
    let r = solve_single_level(&fx.image, &fx.template, &target, &cfg).unwrap();
    let totals: Vec<f64> = r.loss_history.iter().map(|b| b.total).collect();
    for w in totals.windows(2).skip(5) {
        assert!(w[1] <= w[0] + 1e-12, "{totals:?}");
    }
}

#[test]
fn adam_improves_on_the_start() {
    let fx = generate(
        &SynthSpec::new(Shape::Disk, &[32, 32])
            .noise(0.05)
            .template_offset(&[3.0, 2.0]),
    )
    .unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let r = solve_single_level(&fx.image, &fx.template, &target, &SolveConfig::default()).unwrap();
    let first = r.loss_history.first().unwrap().total;
    let last = r.loss_history.last().unwrap().total;
    assert!(last <= first);
    assert!(dice_score(&r.mask, &fx.label).unwrap() >= 0.95);
    assert_eq!(r.topology.fold_cell_count, 0);
    assert!(min_determinant(&jacobian_determinant(&r.field).unwrap()) > 0.0);
}

#[test]
fn history_reports_the_returned_field() {
    let fx = generate(&SynthSpec::new(Shape::Star, &[32, 32]).noise(0.05)).unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let cfg = quick(60);
    let r = solve_single_level(&fx.image, &fx.template, &target, &cfg).unwrap();
    let (last, _) = loss::evaluate(&fx.template, &target, &r.field, &cfg.loss).unwrap();
    assert_eq!(r.loss_history.last(), Some(&last));
    let csv = r.history_csv();
    assert_eq!(csv.lines().count(), r.loss_history.len() + 1);
}

#[test]
fn parallel_and_sequential_agree() {
    let fx = generate(&SynthSpec::new(Shape::Ball, &[16, 16, 16]).noise(0.05)).unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let par = solve_multilevel(&fx.image, &fx.template, &target, 2, &quick(40)).unwrap();
    let seq = exec::sequential(|| {
        solve_multilevel(&fx.image, &fx.template, &target, 2, &quick(40)).unwrap()
    });
    assert_eq!(par, seq);
}

#[test]
fn invalid_configs_are_rejected() {
    let fx = generate(&SynthSpec::new(Shape::Disk, &[16, 16])).unwrap();
    let bad = SolveConfig {
        step_size: -1.0,
        ..SolveConfig::default()
    };
    assert!(solve_single_level(&fx.image, &fx.template, &fx.label, &bad).is_err());
    assert!(solve_multilevel(
        &fx.image,
        &fx.template,
        &fx.label,
        0,
        &SolveConfig::default()
    )
    .is_err());
    let small = MaskGrid::empty(&[8, 8]).unwrap();
    assert!(solve_single_level(&fx.image, &small, &fx.label, &SolveConfig::default()).is_err());
}
