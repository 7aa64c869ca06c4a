//! Synthetic image/label/template fixtures.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, MaskGrid, ScalarGrid};

pub const FOREGROUND_INTENSITY: f64 = 0.9;
pub const BACKGROUND_INTENSITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disk,
    Ball,
    Star,
    TwoBlobs,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(Shape::Disk),
            "ball" => Ok(Shape::Ball),
            "star" => Ok(Shape::Star),
            "two-blobs" => Ok(Shape::TwoBlobs),
            other => Err(Error::InvalidConfig(format!(
                "unknown shape '{other}' (expected disk, ball, star or two-blobs)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: Shape,
    pub dims: Vec<usize>,
    pub noise_sd: f64,
    pub seed: u64,
    /// Target radius; defaults to 5/16 of the smallest extent (20 on a 64 grid).
    pub radius: Option<f64>,
    /// Shift of the target center from the grid center.
    pub offset: Vec<f64>,
    /// Template radius as a fraction of the target's equivalent radius.
    pub template_scale: f64,
    /// Shift of the template center from the grid center.
    pub template_offset: Vec<f64>,
}

impl SynthSpec {
    pub fn new(shape: Shape, dims: &[usize]) -> Self {
        SynthSpec {
            shape,
            dims: dims.to_vec(),
            noise_sd: 0.0,
            seed: 0,
            radius: None,
            offset: vec![0.0; dims.len()],
            template_scale: 0.6,
            template_offset: vec![0.0; dims.len()],
        }
    }

    pub fn noise(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    pub fn offset(mut self, offset: &[f64]) -> Self {
        self.offset = offset.to_vec();
        self
    }

    pub fn template_offset(mut self, offset: &[f64]) -> Self {
        self.template_offset = offset.to_vec();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub image: ScalarGrid,
    pub label: MaskGrid,
    pub template: MaskGrid,
}

/// Star outline `r(θ) = R (1 + a cos(k (θ - φ)))` with seed-drawn arm count,
/// amplitude, phase and an elongation of the whole outline along a random axis.
#[derive(Clone, Copy, Debug)]
struct StarParams {
    arms: f64,
    amplitude: f64,
    phase: f64,
    stretch: f64,
    stretch_angle: f64,
}

impl StarParams {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        StarParams {
            arms: rng.random_range(4..=6) as f64,
            amplitude: rng.random_range(0.3..0.45),
            phase: rng.random_range(0.0..2.0 * PI),
            stretch: rng.random_range(1.1..1.4),
            stretch_angle: rng.random_range(0.0..PI),
        }
    }

    fn contains(&self, dx: f64, dy: f64, radius: f64) -> bool {
        // undo the elongation, then test against the radial profile
        let (c, s) = (self.stretch_angle.cos(), self.stretch_angle.sin());
        let u = (c * dx + s * dy) / self.stretch;
        let v = -s * dx + c * dy;
        let r = u.hypot(v);
        let theta = v.atan2(u);
        r <= radius * (1.0 + self.amplitude * (self.arms * (theta - self.phase)).cos())
    }
}

fn check_len(name: &str, v: &[f64], ndim: usize) -> Result<()> {
    if v.len() != ndim {
        return Err(Error::InvalidConfig(format!(
            "{name} has {} components, expected {ndim}",
            v.len()
        )));
    }
    Ok(())
}

pub fn generate(spec: &SynthSpec) -> Result<Fixture> {
    let dims = Dims::new(&spec.dims)?;
    dims.require_at_least(2)?;
    let d = dims.ndim();
    match (spec.shape, d) {
        (Shape::Disk | Shape::Star, 3) => {
            return Err(Error::InvalidConfig(format!(
                "{:?} fixtures are 2D",
                spec.shape
            )))
        }
        (Shape::Ball, 2) => return Err(Error::InvalidConfig("ball fixtures are 3D".into())),
        _ => {}
    }
    check_len("offset", &spec.offset, d)?;
    check_len("template_offset", &spec.template_offset, d)?;
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sd {} must be >= 0",
            spec.noise_sd
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let min_extent = *dims.extents().iter().min().unwrap() as f64;
    let radius = spec.radius.unwrap_or(min_extent * 5.0 / 16.0);
    let center: Vec<f64> = (0..d)
        .map(|a| (dims.extent(a) as f64 - 1.0) / 2.0 + spec.offset[a])
        .collect();
    let rel = |n: [usize; 3], c: &[f64]| -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..d {
            out[a] = n[a] as f64 - c[a];
        }
        out
    };
    let norm = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();

    let label = match spec.shape {
        Shape::Disk | Shape::Ball => {
            MaskGrid::from_predicate(&spec.dims, |n| norm(rel(n, &center)) <= radius)?
        }
        Shape::Star => {
            let star = StarParams::draw(&mut rng);
            MaskGrid::from_predicate(&spec.dims, |n| {
                let p = rel(n, &center);
                star.contains(p[0], p[1], radius * 0.7)
            })?
        }
        Shape::TwoBlobs => {
            let r = radius / 1.5;
            let sep = radius * 1.2;
            let mut a = center.clone();
            let mut b = center.clone();
            a[0] -= sep;
            b[0] += sep;
            MaskGrid::from_predicate(&spec.dims, |n| {
                norm(rel(n, &a)) <= r || norm(rel(n, &b)) <= r
            })?
        }
    };

    let volume = label.count() as f64;
    let equivalent = if d == 2 {
        (volume / PI).sqrt()
    } else {
        (3.0 * volume / (4.0 * PI)).cbrt()
    };
    let t_radius = spec.template_scale * equivalent;
    let t_center: Vec<f64> = (0..d)
        .map(|a| (dims.extent(a) as f64 - 1.0) / 2.0 + spec.template_offset[a])
        .collect();
    let template = MaskGrid::from_predicate(&spec.dims, |n| norm(rel(n, &t_center)) <= t_radius)?;

    let mut data: Vec<f64> = label
        .data()
        .iter()
        .map(|&v| {
            if v == 1.0 {
                FOREGROUND_INTENSITY
            } else {
                BACKGROUND_INTENSITY
            }
        })
        .collect();
    if spec.noise_sd > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sd)
            .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;
        for v in &mut data {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let image = ScalarGrid::new(&spec.dims, data)?;
    Ok(Fixture {
        image,
        label,
        template,
    })
}
