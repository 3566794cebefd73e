//! Grayscale images, raw float fields, forcings and conductivity enhancement.
//!
//! Images load into `[0, 1]` with white = 1; the first row of a file is the
//! top row of the grid. Grids built from files use `h = 1 / max(nx, ny)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NiotError, Result};
use crate::grid::{CellField, ForcingPair, Grid2D};
use crate::porous::{pm_forward, PmParams};

const FLOAT_MAGIC: &str = "NIOTF1";

/// Grid with `h = 1 / max(nx, ny)`.
pub fn grid_for(nx: usize, ny: usize) -> Result<Grid2D> {
    Grid2D::new(nx, ny, 1.0 / nx.max(ny).max(1) as f64)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

fn field_from_rows(nx: usize, ny: usize, samples: &[f64]) -> Result<CellField> {
    let grid = grid_for(nx, ny)?;
    Ok(CellField::from_fn(grid, |i, j| samples[(ny - 1 - j) * nx + i]))
}

pub fn load_grayscale(path: &Path) -> Result<CellField> {
    match extension(path).as_str() {
        "pgm" => {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            decode_pgm(&bytes)
        }
        "png" => load_png(path),
        other => Err(NiotError::Format(format!(
            "unsupported image extension '{other}' (expected pgm or png)"
        ))),
    }
}

fn load_png(path: &Path) -> Result<CellField> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(NiotError::Format(format!(
            "expected a single-channel grayscale PNG, found {color:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| NiotError::Format("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let (nx, ny) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut samples = Vec::with_capacity(nx * ny);
    for row in buf.chunks(stride).take(ny) {
        match depth {
            png::BitDepth::Sixteen => samples.extend(
                row[..2 * nx]
                    .chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0),
            ),
            png::BitDepth::Eight => samples.extend(row[..nx].iter().map(|&b| b as f64 / 255.0)),
            other => return Err(NiotError::Format(format!("unsupported PNG bit depth {other:?}"))),
        }
    }
    field_from_rows(nx, ny, &samples)
}

/// Parses a binary (P5) PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<CellField> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(NiotError::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(NiotError::Format(format!("expected P5 PGM, found magic '{magic}'")));
    }
    let num = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| NiotError::Format(format!("bad PGM header field '{s}'")))
    };
    let nx = num(token()?)?;
    let ny = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(NiotError::Format(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes
        .get(pos + 1..)
        .ok_or_else(|| NiotError::Format("missing PGM raster".into()))?;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = nx * ny * width;
    if data.len() < need {
        return Err(NiotError::Format(format!(
            "truncated PGM raster: {} of {need} bytes",
            data.len()
        )));
    }
    let m = maxval as f64;
    let samples: Vec<f64> = if width == 1 {
        data[..need].iter().map(|&b| (b as f64 / m).min(1.0)).collect()
    } else {
        data[..need]
            .chunks_exact(2)
            .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f64 / m).min(1.0))
            .collect()
    };
    field_from_rows(nx, ny, &samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Values clamped to `[0, 1]`.
    Unit,
    /// Values divided by the field maximum (when positive), then clamped.
    MaxScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Writes a PGM or PNG (by extension) and returns the divisor applied to the
/// field before quantization.
pub fn save_grayscale(field: &CellField, path: &Path, normalization: Normalization, depth: BitDepth) -> Result<f64> {
    let scale = match normalization {
        Normalization::Unit => 1.0,
        Normalization::MaxScaled => {
            let m = field.max();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let grid = field.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let maxval: f64 = match depth {
        BitDepth::Eight => 255.0,
        BitDepth::Sixteen => 65535.0,
    };
    let mut raster = Vec::with_capacity(nx * ny * 2);
    for row in 0..ny {
        let j = ny - 1 - row;
        for i in 0..nx {
            let v = (field.get(i, j) / scale).clamp(0.0, 1.0);
            let q = (v * maxval).round();
            match depth {
                BitDepth::Eight => raster.push(q as u8),
                BitDepth::Sixteen => raster.extend_from_slice(&(q as u16).to_be_bytes()),
            }
        }
    }
    match extension(path).as_str() {
        "pgm" => {
            let mut w = BufWriter::new(File::create(path)?);
            write!(w, "P5\n{nx} {ny}\n{}\n", maxval as u32)?;
            w.write_all(&raster)?;
            w.flush()?;
        }
        "png" => {
            let w = BufWriter::new(File::create(path)?);
            let mut enc = png::Encoder::new(w, nx as u32, ny as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(match depth {
                BitDepth::Eight => png::BitDepth::Eight,
                BitDepth::Sixteen => png::BitDepth::Sixteen,
            });
            let mut writer = enc.write_header()?;
            writer.write_image_data(&raster)?;
            writer.finish()?;
        }
        other => {
            return Err(NiotError::Format(format!(
                "unsupported image extension '{other}' (expected pgm or png)"
            )))
        }
    }
    Ok(scale)
}

/// `NIOTF1 <nx> <ny>\n` followed by the values as little-endian f64, row `j`
/// major from the bottom row.
pub fn encode_float_field(field: &CellField) -> Vec<u8> {
    let g = field.grid();
    let mut out = format!("{FLOAT_MAGIC} {} {}\n", g.nx(), g.ny()).into_bytes();
    out.reserve(8 * g.n_cells());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_float_field(bytes: &[u8]) -> Result<CellField> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NiotError::Format("missing NIOTF1 header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| NiotError::Format("non-ASCII header".into()))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 3 || parts[0] != FLOAT_MAGIC {
        return Err(NiotError::Format(format!("bad float-field header '{header}'")));
    }
    let dim = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| NiotError::Format(format!("bad dimension '{s}' in float-field header")))
    };
    let (nx, ny) = (dim(parts[1])?, dim(parts[2])?);
    let payload = &bytes[nl + 1..];
    let need = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| NiotError::Format("float-field dimensions overflow".into()))?;
    if payload.len() != need {
        return Err(NiotError::Format(format!(
            "float-field payload has {} bytes, expected {need}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    CellField::new(grid_for(nx, ny)?, values)
}

pub fn save_float_field(field: &CellField, path: &Path) -> Result<()> {
    std::fs::write(path, encode_float_field(field))?;
    Ok(())
}

pub fn load_float_field(path: &Path) -> Result<CellField> {
    decode_float_field(&std::fs::read(path)?)
}

/// Zeroes `image` where the binary `mask` is 1.
pub fn apply_mask(image: &CellField, mask: &CellField) -> Result<CellField> {
    mask.ensure_binary(1e-12)?;
    image.zip_map(mask, |v, m| if m > 0.5 { 0.0 } else { v })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Cell {
        i: usize,
        j: usize,
    },
    /// Binary field; the entry is spread over its unit cells.
    Region(CellField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingEntry {
    pub support: Support,
    /// Relative mass within its side (sources or sinks).
    pub mass: f64,
}

impl ForcingEntry {
    pub fn point(i: usize, j: usize, mass: f64) -> Self {
        Self {
            support: Support::Cell { i, j },
            mass,
        }
    }

    pub fn region(region: CellField, mass: f64) -> Self {
        Self {
            support: Support::Region(region),
            mass,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForcingSpec {
    pub sources: Vec<ForcingEntry>,
    pub sinks: Vec<ForcingEntry>,
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Densities of one side; contributions to a cell are summed in sorted order
/// so the result does not depend on the order of the entries.
fn side_density(entries: &[ForcingEntry], grid: &Grid2D, total: f64, side: &str) -> Result<CellField> {
    if entries.is_empty() {
        return Err(NiotError::InvalidParameter(format!("forcing has no {side}")));
    }
    if let Some(e) = entries.iter().find(|e| !(e.mass > 0.0) || !e.mass.is_finite()) {
        return Err(NiotError::InvalidParameter(format!(
            "{side} mass must be positive, got {}",
            e.mass
        )));
    }
    let norm = sorted_sum(entries.iter().map(|e| e.mass).collect());
    let area = grid.cell_area();
    let mut contributions: Vec<Vec<f64>> = vec![Vec::new(); grid.n_cells()];
    for e in entries {
        let m = e.mass / norm * total;
        match &e.support {
            Support::Cell { i, j } => {
                if *i >= grid.nx() || *j >= grid.ny() {
                    return Err(NiotError::InvalidParameter(format!(
                        "{side} cell ({i}, {j}) outside the {}x{} grid",
                        grid.nx(),
                        grid.ny()
                    )));
                }
                contributions[grid.index(*i, *j)].push(m / area);
            }
            Support::Region(r) => {
                if r.grid().nx() != grid.nx() || r.grid().ny() != grid.ny() {
                    return Err(NiotError::ShapeMismatch(format!("{side} region has the wrong shape")));
                }
                r.ensure_binary(1e-12)?;
                let cells: Vec<usize> = (0..grid.n_cells()).filter(|&c| r.values()[c] > 0.5).collect();
                if cells.is_empty() {
                    return Err(NiotError::InvalidParameter(format!("empty {side} region")));
                }
                let d = m / (cells.len() as f64 * area);
                for c in cells {
                    contributions[c].push(d);
                }
            }
        }
    }
    CellField::new(*grid, contributions.into_iter().map(sorted_sum).collect())
}

/// Source and sink densities with `∫f⁺ = total_mass` and sinks rescaled to
/// match the sources exactly.
pub fn build_forcing(spec: &ForcingSpec, grid: &Grid2D, total_mass: f64) -> Result<ForcingPair> {
    if !(total_mass > 0.0) || !total_mass.is_finite() {
        return Err(NiotError::InvalidParameter(format!(
            "total mass must be positive, got {total_mass}"
        )));
    }
    let fplus = side_density(&spec.sources, grid, total_mass, "sources")?;
    let mut fminus = side_density(&spec.sinks, grid, total_mass, "sinks")?;
    if let Some(c) = (0..grid.n_cells()).find(|&c| fplus.values()[c] > 0.0 && fminus.values()[c] > 0.0) {
        let (i, j) = grid.coords(c);
        return Err(NiotError::InvalidParameter(format!(
            "source and sink supports overlap at cell ({i}, {j})"
        )));
    }
    let target = fplus.integral();
    let s = target / fminus.integral();
    fminus = fminus.scaled(s);
    // Push the last rounding error into the largest sink cell.
    let top = (0..grid.n_cells())
        .max_by(|&a, &b| fminus.values()[a].total_cmp(&fminus.values()[b]))
        .expect("nonempty grid");
    for _ in 0..64 {
        let gap = target - fminus.integral();
        if gap == 0.0 {
            break;
        }
        let v = &mut fminus.values_mut()[top];
        let next = *v + gap / grid.cell_area();
        // Once the correction rounds away, move by single ulps.
        *v = if next != *v {
            next
        } else if gap > 0.0 {
            v.next_up()
        } else {
            v.next_down()
        };
    }
    ForcingPair::new(fplus, fminus)
}

/// Result of [`enhance_conductivity`].
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub conductivity: CellField,
    /// Conductivity before porous-media smoothing.
    pub concentrated: CellField,
    /// Number of fully covered 2×2 blocks in the skeleton (0 for a
    /// one-pixel-wide skeleton).
    pub thick_blocks: usize,
}

/// `κ r^p` on the skeleton as a line density `1/h`, smoothed by the
/// porous-media flow (without the image scaling `α`).
pub fn enhance_conductivity(
    thickness: &CellField,
    skeleton: &CellField,
    kappa: f64,
    p: f64,
    pm: &PmParams,
) -> Result<Enhanced> {
    thickness.same_grid(skeleton)?;
    thickness.ensure_nonnegative()?;
    skeleton.ensure_binary(1e-12)?;
    if !(kappa > 0.0) {
        return Err(NiotError::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let grid = *skeleton.grid();
    let mut thick_blocks = 0;
    for j in 0..grid.ny().saturating_sub(1) {
        for i in 0..grid.nx().saturating_sub(1) {
            if [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
                .iter()
                .all(|&(a, b)| skeleton.get(a, b) > 0.5)
            {
                thick_blocks += 1;
            }
        }
    }
    if thick_blocks > 0 {
        log::warn!("skeleton is wider than one cell in {thick_blocks} places");
    }
    let inv_h = 1.0 / grid.h();
    let concentrated = thickness.zip_map(skeleton, |r, s| if s > 0.5 { kappa * r.powf(p) * inv_h } else { 0.0 })?;
    let params = PmParams {
        alpha: 1.0,
        ..pm.clone()
    };
    let (conductivity, _) = pm_forward(&concentrated, &params)?;
    Ok(Enhanced {
        conductivity,
        concentrated,
        thick_blocks,
    })
}
