//! Acceptance suite: one PASS/FAIL line per criterion on stdout, non-zero exit on failure.
//!
//! Runs with `cargo test --test acceptance`. Tolerances and budgets are the
//! constants below; each criterion reports its own measurements.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toposeg::cli;
use toposeg::deform::{jacobian_determinant, laplacian, min_determinant};
use toposeg::grid::{DeformationField, Lattice, MaskGrid};
use toposeg::io;
use toposeg::loss::{self, LossConfig};
use toposeg::metrics::{dice_score, iou_score};
use toposeg::solver::{
    derive_target_mask, solve_multilevel, solve_single_level, SolveConfig, TargetMethod,
};
use toposeg::synth::{generate, Shape, SynthSpec};
use toposeg::topology::{connected_components, euler_characteristic, Connectivity};

const FD_STEP: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-3;
/// Floor on the denominator of the relative error, for components that are zero.
const FD_ABS_FLOOR: f64 = 1e-6;
/// Cells whose determinant is this close to epsilon count as kink-adjacent.
const FD_HINGE_BAND: f64 = 1e-3;
const FD_BUDGET: Duration = Duration::from_secs(60);

const AFFINE_FIELDS: usize = 1000;
const AFFINE_BUDGET: Duration = Duration::from_secs(5);

const SUITE_FIXTURES: u64 = 50;
const SUITE_BUDGET: Duration = Duration::from_secs(600);

const DISK_MIN_DICE: f64 = 0.95;
const BALL_MIN_DICE: f64 = 0.90;

const STAR_CASES: u64 = 20;

const CORRUPT_FRACTION: f64 = 0.2;
const CORRUPT_MIN_DICE: f64 = 0.80;

const CC_MASKS: u64 = 1000;
const EULER_MASKS: u64 = 200;

const METRIC_PAIRS: u64 = 1000;
const METRIC_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget: Duration) -> bool {
    elapsed <= budget
}

// ---- 1: gradient check ----

fn random_problem(rng: &mut ChaCha8Rng, ext: &[usize]) -> (MaskGrid, MaskGrid, DeformationField) {
    let n: usize = ext.iter().product();
    let template =
        MaskGrid::new(ext, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let label = MaskGrid::new(
        ext,
        (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let d = ext.len();
    let mut field = DeformationField::identity(ext).unwrap();
    for v in field.data_mut() {
        *v += rng.random_range(-0.45..0.45);
    }
    assert_eq!(field.channels(), d);
    (template, label, field)
}

/// Coordinates whose one-sided derivatives may differ within `FD_STEP`: sample
/// positions near a lattice line, Laplacian values near zero, determinants near epsilon.
fn kink_adjacent(field: &DeformationField, eps: f64) -> Vec<bool> {
    let dims = field.dims();
    let d = dims.ndim();
    let data = field.data();
    let lap = laplacian(field).unwrap();
    let jac = jacobian_determinant(field).unwrap();
    let mut out = vec![false; data.len()];
    for (i, node) in dims.nodes().enumerate() {
        for c in 0..d {
            let v = data[i * d + c];
            let mut kink = (v - v.round()).abs() < 2.0 * FD_STEP;
            // Laplacian at the node itself and its face neighbors
            let mut touched = vec![node];
            for a in 0..d {
                for delta in [-1i64, 1] {
                    let m = node[a] as i64 + delta;
                    if m >= 0 && (m as usize) < dims.extent(a) {
                        let mut n2 = node;
                        n2[a] = m as usize;
                        touched.push(n2);
                    }
                }
            }
            for m in touched {
                if (0..d).all(|a| m[a] >= 1 && m[a] + 1 < dims.extent(a)) {
                    let lv = lap.at(m, c);
                    if lv.abs() < 4.0 * d as f64 * FD_STEP {
                        kink = true;
                    }
                }
            }
            // cells sharing this node
            for corner in 0..(1usize << d) {
                let mut cell = node;
                let mut ok = true;
                for (a, v) in cell.iter_mut().enumerate().take(d) {
                    if corner >> a & 1 == 1 {
                        if *v == 0 {
                            ok = false;
                        } else {
                            *v -= 1;
                        }
                    }
                    if *v + 1 >= dims.extent(a) {
                        ok = false;
                    }
                }
                if ok && (jac.get(cell) - eps).abs() < FD_HINGE_BAND {
                    kink = true;
                }
            }
            out[i * d + c] = kink;
        }
    }
    out
}

fn criterion_gradient() -> Outcome {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let mut failures = 0usize;
    let cases: Vec<&[usize]> = std::iter::repeat_n(&[8usize, 8][..], 50)
        .chain(std::iter::repeat_n(&[5usize, 5, 5][..], 20))
        .collect();
    for ext in cases {
        let (template, label, field) = random_problem(&mut rng, ext);
        let total =
            |f: &DeformationField| loss::evaluate(&template, &label, f, &cfg).unwrap().0.total;
        let grad = loss::total_loss_gradient(&template, &label, &field, &cfg).unwrap();
        let kinks = kink_adjacent(&field, cfg.epsilon);
        for (k, &kink) in kinks.iter().enumerate() {
            if kink {
                skipped += 1;
                continue;
            }
            let mut plus = field.clone();
            plus.data_mut()[k] += FD_STEP;
            let mut minus = field.clone();
            minus.data_mut()[k] -= FD_STEP;
            let fd = (total(&plus) - total(&minus)) / (2.0 * FD_STEP);
            let a = grad.data()[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_ABS_FLOOR);
            worst = worst.max(rel);
            if rel >= FD_REL_TOL {
                failures += 1;
            }
            checked += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{checked} coordinates checked, {skipped} kink-adjacent skipped, worst rel err {worst:.2e}, {failures} above {FD_REL_TOL:e}"),
    )
}

// ---- 2: Jacobian loss zero iff margin ----

fn criterion_affine_margin() -> Outcome {
    let eps = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut agree, mut zero, mut positive) = (0usize, 0usize, 0usize);
    for i in 0..AFFINE_FIELDS {
        let ext: &[usize] = if i % 2 == 0 { &[6, 6] } else { &[4, 4, 4] };
        let d = ext.len();
        let mut a = [[0.0; 3]; 3];
        for (r, row) in a.iter_mut().enumerate().take(d) {
            for (c, v) in row.iter_mut().enumerate().take(d) {
                *v = if r == c {
                    rng.random_range(-0.2..1.2)
                } else {
                    rng.random_range(-0.4..0.4)
                };
            }
        }
        let t: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = DeformationField::from_fn(ext, |n| {
            let mut out = [0.0; 3];
            for r in 0..d {
                out[r] = t[r] + (0..d).map(|c| a[r][c] * n[c] as f64).sum::<f64>();
            }
            out
        })
        .unwrap();
        let l = loss::jacobian_loss(&f, eps).unwrap();
        let m = min_determinant(&jacobian_determinant(&f).unwrap());
        if (l == 0.0) == (m >= eps) {
            agree += 1;
        }
        if l == 0.0 {
            zero += 1;
        } else {
            positive += 1;
        }
    }
    outcome(
        agree == AFFINE_FIELDS && zero > 0 && positive > 0,
        format!(
            "{agree}/{AFFINE_FIELDS} agree ({zero} with zero loss, {positive} with positive loss)"
        ),
    )
}

// ---- 3: fold-free solves keep the template topology ----

fn suite_fixture(seed: u64) -> (SynthSpec, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let mut off = || rng.random_range(-6.0..6.0);
    let spec = match seed % 4 {
        0 => SynthSpec::new(Shape::Disk, &[48, 48]).radius(14.0),
        1 => SynthSpec::new(Shape::Ball, &[20, 20, 20]),
        2 => SynthSpec::new(Shape::Star, &[64, 64]),
        _ => {
            let (a, b, c, e) = (off(), off(), off(), off());
            SynthSpec::new(Shape::Disk, &[48, 48])
                .radius(14.0)
                .offset(&[a / 2.0, b / 2.0])
                .template_offset(&[c, e])
        }
    };
    (spec.noise(0.05).seed(seed), 1 + (seed as usize / 4) % 3)
}

fn criterion_fold_free_topology() -> Outcome {
    let cfg = SolveConfig::default();
    let (mut fold_free, mut violations, mut folded) = (0usize, 0usize, 0usize);
    for seed in 0..SUITE_FIXTURES {
        let (spec, levels) = suite_fixture(seed);
        let fx = generate(&spec).unwrap();
        let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
        let r = solve_multilevel(&fx.image, &fx.template, &target, levels, &cfg).unwrap();
        if r.topology.fold_cell_count == 0 {
            fold_free += 1;
            if !r.topology.matches_template {
                violations += 1;
            }
        } else {
            folded += 1;
        }
    }
    outcome(
        violations == 0 && fold_free > 0,
        format!("{fold_free} fold-free solves, {violations} topology mismatches among them, {folded} with folds"),
    )
}

// ---- 4: fidelity on disk and ball ----

fn solve_fixture(spec: &SynthSpec) -> (f64, usize) {
    let fx = generate(spec).unwrap();
    let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
    let r = solve_single_level(&fx.image, &fx.template, &target, &SolveConfig::default()).unwrap();
    (
        dice_score(&r.mask, &fx.label).unwrap(),
        r.loss_history.len(),
    )
}

fn criterion_fidelity() -> Outcome {
    let (disk, disk_iters) = solve_fixture(
        &SynthSpec::new(Shape::Disk, &[64, 64])
            .radius(20.0)
            .noise(0.05),
    );
    let (ball, ball_iters) = solve_fixture(&SynthSpec::new(Shape::Ball, &[32, 32, 32]).noise(0.05));
    outcome(
        disk >= DISK_MIN_DICE && ball >= BALL_MIN_DICE,
        format!("disk Dice {disk:.4} ({disk_iters} evaluations), ball Dice {ball:.4} ({ball_iters} evaluations)"),
    )
}

// ---- 5: multi-level vs single-level on stars ----

fn criterion_multilevel() -> Outcome {
    let cfg = SolveConfig::default();
    let (mut single, mut multi) = (0.0, 0.0);
    for seed in 0..STAR_CASES {
        let fx = generate(&SynthSpec::new(Shape::Star, &[128, 128]).seed(seed)).unwrap();
        let target = derive_target_mask(&fx.image, &TargetMethod::OtsuThreshold).unwrap();
        let one = solve_multilevel(&fx.image, &fx.template, &target, 1, &cfg).unwrap();
        let three = solve_multilevel(&fx.image, &fx.template, &target, 3, &cfg).unwrap();
        single += dice_score(&one.mask, &fx.label).unwrap();
        multi += dice_score(&three.mask, &fx.label).unwrap();
    }
    let n = STAR_CASES as f64;
    let (single, multi) = (single / n, multi / n);
    outcome(
        multi >= single,
        format!("mean Dice levels=3 {multi:.4}, levels=1 {single:.4}"),
    )
}

// ---- 6: robustness to zeroed slices ----

fn run_cli(args: &[&str]) -> i32 {
    cli::run(std::iter::once("toposeg").chain(args.iter().copied()))
}

fn criterion_corrupted_ball() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let depth = 32usize;
    let count = (CORRUPT_FRACTION * depth as f64).ceil() as usize;
    let slices: Vec<String> = (0..count)
        .map(|i| {
            let z = (2 * i + 1) * depth / (2 * count);
            format!("{z}..{}", z + 1)
        })
        .collect();
    let slices = slices.join(",");
    let synth = run_cli(&[
        "synth",
        "ball",
        "--dims",
        "32,32,32",
        "--noise",
        "0.05",
        "--out",
        &p("fx"),
    ]);
    let corrupt = run_cli(&[
        "corrupt",
        &p("fx/image.raw"),
        "--slices",
        &slices,
        "--out",
        &p("corrupt.raw"),
    ]);
    let segment = run_cli(&[
        "segment",
        &p("corrupt.raw"),
        &p("fx/template.raw"),
        "--out",
        &p("seg"),
    ]);
    if synth != 0 || corrupt != 0 {
        return outcome(false, format!("synth/corrupt exit codes {synth}/{corrupt}"));
    }
    let image = io::read_image(Path::new(&p("corrupt.raw"))).unwrap();
    let baseline = derive_target_mask(&image, &TargetMethod::OtsuThreshold).unwrap();
    let baseline_components = connected_components(&baseline, Connectivity::Face)
        .unwrap()
        .count;
    let label = io::read_mask(Path::new(&p("fx/label.raw"))).unwrap();
    let mask = io::read_mask(Path::new(&p("seg/mask.raw"))).unwrap();
    let components = connected_components(&mask, Connectivity::Face)
        .unwrap()
        .count;
    let dice = dice_score(&mask, &label).unwrap();
    outcome(
        segment == 0 && components == 1 && baseline_components >= 2 && dice >= CORRUPT_MIN_DICE,
        format!(
            "{count} of {depth} slices zeroed; segment exit {segment}, {components} component(s), Dice {dice:.4}; Otsu baseline {baseline_components} components"
        ),
    )
}

// ---- 7: labeling and Euler characteristic against brute force ----

fn random_mask(rng: &mut ChaCha8Rng, ext: &[usize], density: f64) -> MaskGrid {
    let n: usize = ext.iter().product();
    let data = (0..n)
        .map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 })
        .collect();
    MaskGrid::new(ext, data).unwrap()
}

fn flood_fill(mask: &MaskGrid, full: bool) -> Vec<usize> {
    let dims = mask.dims();
    let (w, h) = (dims.extent(0) as i64, dims.extent(1) as i64);
    let mut label = vec![0usize; dims.len()];
    let mut next = 0;
    for start in 0..dims.len() {
        if mask.data()[start] != 1.0 || label[start] != 0 {
            continue;
        }
        next += 1;
        let mut stack = vec![start];
        label[start] = next;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dx == 0 && dy == 0) || (!full && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (nx + ny * w) as usize;
                    if mask.data()[j] == 1.0 && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    label
}

/// True if the two labelings induce the same partition of the foreground.
fn same_partition(a: &[u32], b: &[usize]) -> bool {
    let mut ab = BTreeMap::new();
    let mut ba = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if x == 0 {
            continue;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// χ = V - E + F over the closed unit squares of the foreground pixels.
fn euler_by_cells(mask: &MaskGrid) -> i64 {
    let dims = mask.dims();
    let mut verts = HashSet::new();
    let mut edges = HashSet::new();
    let mut faces = 0i64;
    for (i, n) in dims.nodes().enumerate() {
        if mask.data()[i] != 1.0 {
            continue;
        }
        let (x, y) = (n[0], n[1]);
        faces += 1;
        for (vx, vy) in [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)] {
            verts.insert((vx, vy));
        }
        // horizontal edges keyed by left endpoint, vertical by bottom endpoint
        edges.insert((x, y, 0));
        edges.insert((x, y + 1, 0));
        edges.insert((x, y, 1));
        edges.insert((x + 1, y, 1));
    }
    verts.len() as i64 - edges.len() as i64 + faces
}

fn criterion_topology_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cc_ok = 0;
    for i in 0..CC_MASKS {
        let density = 0.3 + 0.4 * (i as f64 / CC_MASKS as f64);
        let m = random_mask(&mut rng, &[16, 16], density);
        let mut ok = true;
        for (conn, full) in [(Connectivity::Face, false), (Connectivity::Full, true)] {
            let lab = connected_components(&m, conn).unwrap();
            let oracle = flood_fill(&m, full);
            let oracle_count = oracle.iter().copied().max().unwrap_or(0);
            ok &= lab.count == oracle_count && same_partition(&lab.labels, &oracle);
        }
        cc_ok += ok as u64;
    }
    let mut chi_ok = 0;
    for _ in 0..EULER_MASKS {
        let m = random_mask(&mut rng, &[8, 8], 0.5);
        chi_ok += (euler_characteristic(&m).unwrap() == euler_by_cells(&m)) as u64;
    }
    let block = MaskGrid::from_predicate(&[7, 7], |n| {
        (2..5).contains(&n[0]) && (2..5).contains(&n[1])
    })
    .unwrap();
    let annulus = MaskGrid::from_predicate(&[7, 7], |n| {
        (1..6).contains(&n[0]) && (1..6).contains(&n[1]) && !(n[0] == 3 && n[1] == 3)
    })
    .unwrap();
    let two = MaskGrid::from_predicate(&[9, 5], |n| {
        (1..3).contains(&n[1]) && (n[0] < 3 || n[0] > 5)
    })
    .unwrap();
    let named: Vec<i64> = [&block, &annulus, &two]
        .iter()
        .map(|m| euler_characteristic(m).unwrap())
        .collect();
    outcome(
        cc_ok == CC_MASKS && chi_ok == EULER_MASKS && named == [1, 0, 2],
        format!("labeling {cc_ok}/{CC_MASKS}, Euler {chi_ok}/{EULER_MASKS}, block/annulus/two blocks = {named:?}"),
    )
}

// ---- 8: Dice/IoU identity ----

fn criterion_metric_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut ordered) = (0.0f64, 0u64);
    for _ in 0..METRIC_PAIRS {
        let ext = [rng.random_range(2..20), rng.random_range(2..20)];
        let da = rng.random_range(0.0..1.0);
        let db = rng.random_range(0.0..1.0);
        let a = random_mask(&mut rng, &ext, da);
        let b = random_mask(&mut rng, &ext, db);
        let d = dice_score(&a, &b).unwrap();
        let j = iou_score(&a, &b).unwrap();
        worst = worst.max((d - 2.0 * j / (1.0 + j)).abs());
        ordered += (j <= d) as u64;
    }
    outcome(
        worst <= METRIC_TOL && ordered == METRIC_PAIRS,
        format!(
            "max |dice - 2 iou/(1+iou)| = {worst:.1e}, iou <= dice in {ordered}/{METRIC_PAIRS}"
        ),
    )
}

// ---- 9: reproducible segment runs ----

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            )
        })
        .collect()
}

fn criterion_reproducible() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    run_cli(&[
        "synth",
        "disk",
        "--dims",
        "32x32",
        "--noise",
        "0.05",
        "--seed",
        "3",
        "--out",
        &p("fx"),
    ]);
    let args = [
        "segment",
        &p("fx/image.raw"),
        &p("fx/template.raw"),
        "--out",
        &p("seg"),
    ];
    let first_code = run_cli(&args);
    let first = snapshot(&dir.path().join("seg"));
    let second_code = run_cli(&args);
    let second = snapshot(&dir.path().join("seg"));
    let differing: Vec<&String> = first
        .keys()
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    outcome(
        first_code == second_code && first.len() >= 8 && first == second,
        format!(
            "{} artifacts, exit codes {first_code}/{second_code}, differing: {differing:?}",
            first.len()
        ),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Option<Duration>); 9] = [
        (
            "1 gradient matches central differences",
            criterion_gradient,
            Some(FD_BUDGET),
        ),
        (
            "2 Jacobian loss zero iff min det >= eps",
            criterion_affine_margin,
            Some(AFFINE_BUDGET),
        ),
        (
            "3 fold-free solves match template topology",
            criterion_fold_free_topology,
            Some(SUITE_BUDGET),
        ),
        ("4 disk and ball fidelity", criterion_fidelity, None),
        (
            "5 multi-level >= single-level on stars",
            criterion_multilevel,
            None,
        ),
        (
            "6 corrupted ball stays one component",
            criterion_corrupted_ball,
            None,
        ),
        (
            "7 labeling and Euler characteristic oracles",
            criterion_topology_oracles,
            None,
        ),
        ("8 Dice/IoU identity", criterion_metric_identity, None),
        (
            "9 bit-identical segment reruns",
            criterion_reproducible,
            None,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut out = std::io::stdout();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| within(elapsed, b));
        let pass = result.pass && in_time;
        failed += (!pass) as usize;
        let budget_note = match budget {
            Some(b) if !in_time => format!(", over budget {b:?}"),
            _ => String::new(),
        };
        let _ = writeln!(
            out,
            "[{}] criterion {name}: {} ({:.1?}{budget_note})",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed
        );
    }
    if failed > 0 {
        let _ = writeln!(out, "{failed} criteria failed");
        std::process::exit(1);
    }
}
