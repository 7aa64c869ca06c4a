//! Command-line front end: fixture generation, corruption, segmentation,
//! topology checks and scoring.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 topology certification failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::deform::jacobian_determinant;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Lattice, MaskGrid, ScalarGrid};
use crate::io;
use crate::metrics::{self, CaseScore};
use crate::optim::OptimizerKind;
use crate::solver::{derive_target_mask, solve_multilevel, SolveConfig, TargetMethod};
use crate::synth::{self, Shape, SynthSpec};
use crate::topology::{
    cca_postprocess, certify, connected_components, euler_characteristic, CcaOptions, Connectivity,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TOPOLOGY: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "toposeg",
    version,
    about = "Topology-preserving template segmentation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deform a template mask onto an image and certify the result's topology.
    Segment(SegmentArgs),
    /// Generate a synthetic image, ground-truth mask and template.
    Synth(SynthArgs),
    /// Zero a range of depth slices of a 3D image.
    Corrupt(CorruptArgs),
    /// Compare a mask's topology against a template and print the report.
    TopoCheck(TopoCheckArgs),
    /// Score predicted masks against labels, matched by file stem.
    Score(ScoreArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Image, .pgm or .raw with a JSON sidecar.
    pub image: PathBuf,
    /// Binary template mask with the expected topology.
    pub template: PathBuf,
    /// Fidelity target mask; Otsu thresholding of the image when omitted.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// SolveConfig JSON; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// disk, ball, star or two-blobs
    pub shape: String,
    /// Extents separated by commas or 'x', e.g. 64x64 or 32,32,32.
    #[arg(long)]
    pub dims: NumList<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<NumList<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub template_offset: Option<NumList<f64>>,
    #[arg(long)]
    pub template_scale: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CorruptArgs {
    pub image: PathBuf,
    /// Depth slices to zero: "a..b" (half-open) or "a..=b", several separated by commas.
    #[arg(long)]
    pub slices: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TopoCheckArgs {
    pub mask: PathBuf,
    pub template: PathBuf,
    /// Deformation field; fills in the determinant fields of the report.
    #[arg(long)]
    pub field: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    pub pred: PathBuf,
    pub label: PathBuf,
    /// Keep only the largest connected component of each prediction.
    #[arg(long)]
    pub cca: bool,
    /// Topology prior for `topology_ok`; without it a single simply connected
    /// component (one component, Euler characteristic 1) is expected.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Directory for scores.csv and table.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown optimizer '{s}' (gradient-descent or adaptive-moment)"))
}

/// Numbers separated by commas or 'x', e.g. `64x64` or `-6,4`.
#[derive(Clone, Debug, PartialEq)]
pub struct NumList<T>(pub Vec<T>);

impl<T: FromStr> FromStr for NumList<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split([',', 'x'])
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| format!("'{t}' is not a valid number"))
            })
            .collect::<std::result::Result<_, _>>()
            .map(NumList)
    }
}

/// Parses "a..b" (half-open) or "a..=b" (inclusive) into a half-open range.
pub fn parse_slice_range(s: &str) -> Result<std::ops::Range<usize>> {
    let bad = || Error::InvalidConfig(format!("--slices: expected 'a..b' or 'a..=b', got '{s}'"));
    let (a, rest) = s.split_once("..").ok_or_else(bad)?;
    let (b, inclusive) = match rest.strip_prefix('=') {
        Some(b) => (b, true),
        None => (rest, false),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b + 1 } else { b };
    if end < a {
        return Err(Error::InvalidConfig(format!(
            "--slices: range {s} is reversed"
        )));
    }
    Ok(a..end)
}

/// Comma-separated list of slice ranges.
pub fn parse_slices(s: &str) -> Result<Vec<std::ops::Range<usize>>> {
    s.split(',').map(|r| parse_slice_range(r.trim())).collect()
}

/// Snapshot of a run, written before any other artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub config: Option<SolveConfig>,
    pub levels: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub version: String,
}

impl RunManifest {
    fn new(command: &str, inputs: Vec<PathBuf>, seed: u64, out_dir: &Path) -> Self {
        RunManifest {
            command: command.into(),
            inputs,
            config: None,
            levels: None,
            seed,
            out_dir: out_dir.to_path_buf(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let json = serde_json::to_string_pretty(self)?;
        io::write_atomic(&self.out_dir.join("manifest.json"), json.as_bytes())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

/// Image with the mask outline drawn at full intensity (2D only).
fn overlay(image: &ScalarGrid, mask: &MaskGrid) -> Result<ScalarGrid> {
    let dims = image.dims();
    let bin = mask.binarize();
    ScalarGrid::from_fn(dims.extents(), |n| {
        if bin.get(n) == 1.0 {
            let edge = (0..dims.ndim()).any(|a| {
                let mut lo = n;
                let mut hi = n;
                if n[a] == 0 || n[a] + 1 == dims.extent(a) {
                    return true;
                }
                lo[a] -= 1;
                hi[a] += 1;
                bin.get(lo) == 0.0 || bin.get(hi) == 0.0
            });
            if edge {
                return 1.0;
            }
        }
        image.get(n).clamp(0.0, 1.0)
    })
}

pub fn effective_config(args: &SegmentArgs) -> Result<SolveConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            SolveConfig::from_json(&text).map_err(|e| Error::format(path, e.to_string()))?
        }
        None => SolveConfig::default(),
    };
    if let Some(v) = args.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = args.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = args.optimizer {
        cfg.optimizer = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Artifacts: manifest.json, mask/soft_mask/field/jacobian raw grids with sidecars,
/// loss_history.csv, topology.json, and for 2D inputs mask.pgm and overlay.pgm.
pub fn cmd_segment(args: &SegmentArgs) -> Result<i32> {
    let cfg = effective_config(args)?;
    let mut image = io::read_image(&args.image)?;
    image.normalize_intensity();
    let template = io::read_mask(&args.template)?;
    let method = match &args.target {
        Some(p) => TargetMethod::Provided(io::read_mask(p)?),
        None => TargetMethod::OtsuThreshold,
    };
    let mut inputs = vec![args.image.clone(), args.template.clone()];
    inputs.extend(args.target.clone());
    inputs.extend(args.config.clone());
    let target = derive_target_mask(&image, &method)?;
    let result = solve_multilevel(&image, &template, &target, args.levels, &cfg)?;

    let mut manifest = RunManifest::new("segment", inputs, cfg.seed, &args.out);
    manifest.config = Some(cfg);
    manifest.levels = Some(args.levels);
    manifest.write()?;

    let out = &args.out;
    io::write_mask_raw(&out.join("mask.raw"), &result.mask)?;
    io::write_mask_raw(&out.join("soft_mask.raw"), &result.soft_mask)?;
    io::write_field_raw(&out.join("field.raw"), &result.field)?;
    io::write_jacobian_raw(
        &out.join("jacobian.raw"),
        &jacobian_determinant(&result.field)?,
    )?;
    io::write_atomic(
        &out.join("loss_history.csv"),
        result.history_csv().as_bytes(),
    )?;
    if image.dims().ndim() == 2 {
        io::write_mask_pgm(&out.join("mask.pgm"), &result.mask)?;
        io::write_scalar_pgm(&out.join("overlay.pgm"), &overlay(&image, &result.mask)?)?;
    }
    write_json(&out.join("topology.json"), &result.topology)?;
    Ok(if result.topology.matches_template {
        EXIT_OK
    } else {
        EXIT_TOPOLOGY
    })
}

/// Writes image/label/template as raw grids, plus PGM copies for 2D shapes.
pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let shape: Shape = args.shape.parse()?;
    let d = args.dims.0.len();
    let mut spec = SynthSpec::new(shape, &args.dims.0)
        .noise(args.noise)
        .seed(args.seed);
    if let Some(r) = args.radius {
        spec = spec.radius(r);
    }
    if let Some(o) = &args.offset {
        spec = spec.offset(&o.0);
    }
    if let Some(o) = &args.template_offset {
        spec = spec.template_offset(&o.0);
    }
    if let Some(s) = args.template_scale {
        spec.template_scale = s;
    }
    let fixture = synth::generate(&spec)?;
    RunManifest::new("synth", vec![], args.seed, &args.out).write()?;
    let out = &args.out;
    write_json(&out.join("synth.json"), &spec)?;
    io::write_scalar_raw(&out.join("image.raw"), &fixture.image)?;
    io::write_mask_raw(&out.join("label.raw"), &fixture.label)?;
    io::write_mask_raw(&out.join("template.raw"), &fixture.template)?;
    if d == 2 {
        io::write_scalar_pgm(&out.join("image.pgm"), &fixture.image)?;
        io::write_mask_pgm(&out.join("label.pgm"), &fixture.label)?;
        io::write_mask_pgm(&out.join("template.pgm"), &fixture.template)?;
    }
    Ok(EXIT_OK)
}

/// Zeroes `range` along the depth (last) axis of a 3D image.
pub fn zero_slices(image: &ScalarGrid, range: std::ops::Range<usize>) -> Result<ScalarGrid> {
    let dims = image.dims();
    if dims.ndim() != 3 {
        return Err(Error::InvalidConfig("corrupt needs a 3D image".into()));
    }
    let depth = dims.extent(2);
    if range.end > depth {
        return Err(Error::InvalidConfig(format!(
            "--slices {}..{} exceeds depth {depth}",
            range.start, range.end
        )));
    }
    let mut out = image.clone();
    let plane = dims.stride(2);
    out.data_mut()[range.start * plane..range.end * plane].fill(0.0);
    Ok(out)
}

pub fn cmd_corrupt(args: &CorruptArgs) -> Result<i32> {
    let ranges = parse_slices(&args.slices)?;
    let mut out = io::read_image(&args.image)?;
    for range in ranges {
        out = zero_slices(&out, range)?;
    }
    io::write_image(&args.out, &out)?;
    Ok(EXIT_OK)
}

pub fn cmd_topo_check(args: &TopoCheckArgs) -> Result<i32> {
    let mask = io::read_mask(&args.mask)?.binarize();
    let template = io::read_mask(&args.template)?.binarize();
    let jac = match &args.field {
        Some(p) => Some(jacobian_determinant(&io::read_field_raw(p)?)?),
        None => None,
    };
    let report = certify(&mask, &template, jac.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.matches_template {
        EXIT_OK
    } else {
        EXIT_TOPOLOGY
    })
}

const MASK_EXTENSIONS: [&str; 2] = ["pgm", "raw"];

/// Mask files in `dir` keyed by file stem.
fn list_cases(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut cases = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !MASK_EXTENSIONS.contains(&ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if cases.insert(stem.to_string(), path.clone()).is_some() {
                return Err(Error::format(&path, "case appears in more than one format"));
            }
        }
    }
    Ok(cases)
}

fn topology_ok(mask: &MaskGrid, template: Option<&MaskGrid>) -> Result<bool> {
    match template {
        Some(t) => Ok(certify(mask, t, None)?.matches_template),
        None => {
            let count = connected_components(mask, Connectivity::Face)?.count;
            Ok(count == 1 && euler_characteristic(mask)? == 1)
        }
    }
}

pub fn score_dirs(
    pred: &Path,
    label: &Path,
    cca: bool,
    template: Option<&MaskGrid>,
) -> Result<metrics::ScoreTable> {
    let preds = list_cases(pred)?;
    let labels = list_cases(label)?;
    if preds.keys().ne(labels.keys()) {
        let only_pred: Vec<_> = preds.keys().filter(|k| !labels.contains_key(*k)).collect();
        let only_label: Vec<_> = labels.keys().filter(|k| !preds.contains_key(*k)).collect();
        return Err(Error::InvalidConfig(format!(
            "case sets differ: only in predictions {only_pred:?}, only in labels {only_label:?}"
        )));
    }
    let cases: Vec<(&String, &PathBuf)> = preds.iter().collect();
    let rows: Vec<Result<CaseScore>> = exec::map_indexed(cases.len(), |i| {
        let (case, path) = cases[i];
        let mut p = io::read_mask(path)?.binarize();
        if cca {
            p = cca_postprocess(&p, CcaOptions::default())?.mask;
        }
        let l = io::read_mask(&labels[case])?.binarize();
        Ok(CaseScore {
            case: case.clone(),
            dice: metrics::dice_score(&p, &l)?,
            iou: metrics::iou_score(&p, &l)?,
            topology_ok: topology_ok(&p, template)?,
        })
    });
    metrics::aggregate(rows.into_iter().collect::<Result<_>>()?)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<i32> {
    let template = match &args.template {
        Some(p) => Some(io::read_mask(p)?.binarize()),
        None => None,
    };
    let table = score_dirs(&args.pred, &args.label, args.cca, template.as_ref())?;
    let rendered = table.render();
    if let Some(out) = &args.out {
        let mut inputs = vec![args.pred.clone(), args.label.clone()];
        inputs.extend(args.template.clone());
        RunManifest::new("score", inputs, 0, out).write()?;
        io::write_atomic(&out.join("scores.csv"), table.to_csv().as_bytes())?;
        io::write_atomic(&out.join("table.txt"), rendered.as_bytes())?;
    } else {
        print!("{}", table.to_csv());
    }
    print!("{rendered}");
    Ok(EXIT_OK)
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Segment(a) => cmd_segment(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Corrupt(a) => cmd_corrupt(a),
        Command::TopoCheck(a) => cmd_topo_check(a),
        Command::Score(a) => cmd_score(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
