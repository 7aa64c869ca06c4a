//! Grid file formats: binary PGM (P5) for 2D images and masks, and raw
//! little-endian f32 with a JSON sidecar for every grid kind.
//!
//! All writers go through a temporary file in the destination directory and an
//! atomic rename, so a failed write never leaves a partial artifact behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deform::JacobianGrid;
use crate::error::{Error, Result};
use crate::grid::{DeformationField, Lattice, MaskGrid, ScalarGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Scalar,
    Mask,
    Field,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub channels: usize,
    pub kind: GridKind,
}

/// Writes `bytes` to `path` via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Sidecar path for a raw data file: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn is_pgm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

// ---- PGM ----

fn pgm_bytes(path: &Path, extents: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if extents.len() != 2 {
        return Err(Error::format(
            path,
            format!("PGM holds 2D grids only, got dims {extents:?}"),
        ));
    }
    let mut out = format!("P5\n{} {}\n255\n", extents[0], extents[1]).into_bytes();
    out.extend(
        data.iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Parses a P5 file with maxval 255; values are scaled to [0, 1].
fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |msg: &str| Error::format(path, msg);
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(bad("magic number: expected P5"));
    }
    let num = |t: &str, what: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| bad(&format!("{what}: '{t}' is not an integer")))
    };
    let width = num(&tokens[1], "width")?;
    let height = num(&tokens[2], "height")?;
    let maxval = num(&tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(bad(&format!("maxval: expected 255, got {maxval}")));
    }
    let n = width * height;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != n {
        return Err(bad(&format!(
            "raster: expected {n} bytes for {width}x{height}, found {}",
            raster.len()
        )));
    }
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((vec![width, height], data))
}

pub fn write_scalar_pgm(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write_atomic(path, &pgm_bytes(path, grid.dims().extents(), grid.data())?)
}

/// Writes the binarized mask as 0/255.
pub fn write_mask_pgm(path: &Path, mask: &MaskGrid) -> Result<()> {
    let bin = mask.binarize();
    write_atomic(path, &pgm_bytes(path, bin.dims().extents(), bin.data())?)
}

pub fn read_scalar_pgm(path: &Path) -> Result<ScalarGrid> {
    let (dims, data) = parse_pgm(path, &read_bytes(path)?)?;
    ScalarGrid::new(&dims, data)
}

pub fn read_mask_pgm(path: &Path) -> Result<MaskGrid> {
    let (dims, data) = parse_pgm(path, &read_bytes(path)?)?;
    MaskGrid::new(&dims, data)
}

// ---- raw f32 + sidecar ----

fn write_raw(path: &Path, sidecar: &Sidecar, data: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = data
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    let json = serde_json::to_string_pretty(sidecar)?;
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), json.as_bytes())
}

fn read_raw(path: &Path, expect: &[GridKind]) -> Result<(Sidecar, Vec<f64>)> {
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::format(&side_path, format!("sidecar: {e}")))?;
    if !expect.contains(&sidecar.kind) {
        return Err(Error::format(
            &side_path,
            format!("kind: expected one of {expect:?}, found {:?}", sidecar.kind),
        ));
    }
    if sidecar.spacing.len() != sidecar.dims.len() {
        return Err(Error::format(
            &side_path,
            "spacing: length differs from dims",
        ));
    }
    let bytes = read_bytes(path)?;
    let expected = sidecar.dims.iter().product::<usize>() * sidecar.channels * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("data: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((sidecar, data))
}

fn sidecar_for(dims: &[usize], spacing: &[f64], channels: usize, kind: GridKind) -> Sidecar {
    Sidecar {
        dims: dims.to_vec(),
        spacing: spacing.to_vec(),
        channels,
        kind,
    }
}

fn require_channels(path: &Path, side: &Sidecar, channels: usize) -> Result<()> {
    if side.channels != channels {
        return Err(Error::format(
            sidecar_path(path),
            format!("channels: expected {channels}, found {}", side.channels),
        ));
    }
    Ok(())
}

pub fn write_scalar_raw(path: &Path, grid: &ScalarGrid) -> Result<()> {
    let side = sidecar_for(grid.dims().extents(), grid.spacing(), 1, GridKind::Scalar);
    write_raw(path, &side, grid.data())
}

pub fn write_mask_raw(path: &Path, mask: &MaskGrid) -> Result<()> {
    let side = sidecar_for(mask.dims().extents(), mask.spacing(), 1, GridKind::Mask);
    write_raw(path, &side, mask.data())
}

pub fn write_field_raw(path: &Path, field: &DeformationField) -> Result<()> {
    let dims = field.dims();
    let side = sidecar_for(
        dims.extents(),
        field.spacing(),
        field.channels(),
        GridKind::Field,
    );
    write_raw(path, &side, field.data())
}

/// Determinants on the cell lattice, exported as a scalar grid.
pub fn write_jacobian_raw(path: &Path, jac: &JacobianGrid) -> Result<()> {
    write_scalar_raw(path, &jac.to_scalar_grid()?)
}

pub fn read_scalar_raw(path: &Path) -> Result<ScalarGrid> {
    let (side, data) = read_raw(path, &[GridKind::Scalar, GridKind::Mask])?;
    require_channels(path, &side, 1)?;
    ScalarGrid::new(&side.dims, data)?.with_spacing(&side.spacing)
}

/// Reads a mask; scalar grids are accepted if every value lies in [0, 1].
pub fn read_mask_raw(path: &Path) -> Result<MaskGrid> {
    let (side, data) = read_raw(path, &[GridKind::Mask, GridKind::Scalar])?;
    require_channels(path, &side, 1)?;
    MaskGrid::new(&side.dims, data)
        .map_err(|e| Error::format(path, e.to_string()))?
        .with_spacing(&side.spacing)
}

pub fn read_field_raw(path: &Path) -> Result<DeformationField> {
    let (side, data) = read_raw(path, &[GridKind::Field])?;
    require_channels(path, &side, side.dims.len())?;
    DeformationField::from_data(&side.dims, data)?.with_spacing(&side.spacing)
}

/// Reads an image in either format, chosen by extension (`.pgm` or raw + sidecar).
pub fn read_image(path: &Path) -> Result<ScalarGrid> {
    if is_pgm(path) {
        read_scalar_pgm(path)
    } else {
        read_scalar_raw(path)
    }
}

pub fn read_mask(path: &Path) -> Result<MaskGrid> {
    if is_pgm(path) {
        read_mask_pgm(path)
    } else {
        read_mask_raw(path)
    }
}

pub fn write_image(path: &Path, grid: &ScalarGrid) -> Result<()> {
    if is_pgm(path) {
        write_scalar_pgm(path, grid)
    } else {
        write_scalar_raw(path, grid)
    }
}

pub fn write_mask(path: &Path, mask: &MaskGrid) -> Result<()> {
    if is_pgm(path) {
        write_mask_pgm(path, mask)
    } else {
        write_mask_raw(path, mask)
    }
}
