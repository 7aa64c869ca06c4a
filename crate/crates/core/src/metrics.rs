//! Overlap scores and aggregate reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Lattice, MaskGrid};

fn overlap_counts(a: &MaskGrid, b: &MaskGrid) -> Result<(usize, usize, usize)> {
    a.dims().require_same(&b.dims())?;
    a.require_binary()?;
    b.require_binary()?;
    let mut inter = 0;
    for (x, y) in a.data().iter().zip(b.data()) {
        if *x == 1.0 && *y == 1.0 {
            inter += 1;
        }
    }
    Ok((inter, a.count(), b.count()))
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both masks are empty.
pub fn dice_score(a: &MaskGrid, b: &MaskGrid) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`, 1 when both masks are empty.
pub fn iou_score(a: &MaskGrid, b: &MaskGrid) -> Result<f64> {
    let (inter, na, nb) = overlap_counts(a, b)?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case: String,
    pub dice: f64,
    pub iou: f64,
    pub topology_ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over `sqrt(n)`).
    pub stderr: f64,
    pub stddev: f64,
    pub best: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Summary {
            mean,
            stderr: stddev / n.sqrt(),
            stddev,
            best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<CaseScore>,
    pub dice: Summary,
    pub iou: Summary,
    /// Fraction of rows with `topology_ok`.
    pub topology_ok_rate: f64,
}

pub fn aggregate(rows: Vec<CaseScore>) -> Result<ScoreTable> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
    let iou: Vec<f64> = rows.iter().map(|r| r.iou).collect();
    let ok = rows.iter().filter(|r| r.topology_ok).count();
    Ok(ScoreTable {
        dice: Summary::of(&dice),
        iou: Summary::of(&iou),
        topology_ok_rate: ok as f64 / rows.len() as f64,
        rows,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl ScoreTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,dice,iou,topology_ok\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.case, r.dice, r.iou, r.topology_ok);
        }
        out
    }

    /// Summary in percent with two decimals: `mean ± stderr` and the best case.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>16} {:>8}", "Metric", "Mean", "Best");
        for (name, s) in [("Dice", &self.dice), ("IoU", &self.iou)] {
            let mean = format!("{} ± {}", pct(s.mean), pct(s.stderr));
            let _ = writeln!(out, "{name:<8} {mean:>16} {:>8}", pct(s.best));
        }
        let _ = writeln!(
            out,
            "cases: {}  topology ok: {}",
            self.rows.len(),
            pct(self.topology_ok_rate)
        );
        out
    }
}
