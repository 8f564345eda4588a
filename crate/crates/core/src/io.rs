//! PFM / PGM / PPM readers and writers.
//!
//! PFM files are written little-endian (scale −1.0) with rows stored bottom
//! to top, as the format prescribes. PGM and PPM are binary 8-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::grid::{LabelGrid, ScalarGrid};

fn format_err<T>(format: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Format { format, detail: detail.into() })
}

pub fn encode_pfm(grid: &ScalarGrid) -> Vec<u8> {
    let (h, w) = (grid.height(), grid.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(grid.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

/// Splits `n` whitespace-separated header tokens off the front of `bytes`;
/// the single whitespace byte after the last token is consumed too.
fn header_tokens(bytes: &[u8], n: usize, format: &'static str) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(n);
    let mut pos = 0;
    while tokens.len() < n {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return format_err(format, "truncated header");
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    Ok((tokens, pos + 1))
}

fn parse_dim(s: &str, format: &'static str) -> Result<usize> {
    s.parse().or_else(|_| format_err(format, format!("bad dimension {s:?}")))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ScalarGrid> {
    let (t, start) = header_tokens(bytes, 4, "PFM")?;
    if t[0] != "Pf" {
        return format_err("PFM", format!("expected single-channel 'Pf' magic, got {:?}", t[0]));
    }
    let (w, h) = (parse_dim(&t[1], "PFM")?, parse_dim(&t[2], "PFM")?);
    let scale: f64 = t[3].parse().or_else(|_| format_err("PFM", "bad scale"))?;
    let body = bytes.get(start..).unwrap_or(&[]);
    if body.len() != 4 * w * h {
        return format_err("PFM", format!("expected {} data bytes, got {}", 4 * w * h, body.len()));
    }
    let mut grid = ScalarGrid::zeros(h, w);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        grid.set(i % w, h - 1 - i / w, v as f64);
    }
    Ok(grid)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Intensities in [0, 1] as an 8-bit PGM.
pub fn encode_pgm_intensity(grid: &ScalarGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.data().iter().map(|&v| to_byte(v)));
    out
}

/// Label values stored verbatim; all labels must fit in a byte.
pub fn encode_pgm_labels(labels: &LabelGrid) -> Result<Vec<u8>> {
    if let Some(&bad) = labels.labels().iter().find(|&&l| l > 255) {
        return contract(format!("label {bad} does not fit in an 8-bit PGM"));
    }
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend(labels.labels().iter().map(|&l| l as u8));
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelGrid> {
    let (t, start) = header_tokens(bytes, 4, "PGM")?;
    if t[0] != "P5" {
        return format_err("PGM", format!("expected binary 'P5' magic, got {:?}", t[0]));
    }
    let (w, h) = (parse_dim(&t[1], "PGM")?, parse_dim(&t[2], "PGM")?);
    if t[3] != "255" {
        return format_err("PGM", "only 8-bit PGM is supported");
    }
    let body = bytes.get(start..).unwrap_or(&[]);
    if body.len() != w * h {
        return format_err("PGM", format!("expected {} data bytes, got {}", w * h, body.len()));
    }
    LabelGrid::new(h, w, body.iter().map(|&b| b as u32).collect())
}

/// Three intensity grids as one 8-bit RGB PPM.
pub fn encode_ppm(r: &ScalarGrid, g: &ScalarGrid, b: &ScalarGrid) -> Result<Vec<u8>> {
    if r.height() != g.height() || r.height() != b.height() || r.width() != g.width() || r.width() != b.width() {
        return contract("PPM channels differ in shape");
    }
    let mut out = format!("P6\n{} {}\n255\n", r.width(), r.height()).into_bytes();
    for i in 0..r.len() {
        out.extend([to_byte(r.data()[i]), to_byte(g.data()[i]), to_byte(b.data()[i])]);
    }
    Ok(out)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn write_pfm(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write_bytes(path, &encode_pfm(grid))
}

pub fn read_pfm(path: &Path) -> Result<ScalarGrid> {
    decode_pfm(&fs::read(path)?)
}

pub fn read_pgm(path: &Path) -> Result<LabelGrid> {
    decode_pgm(&fs::read(path)?)
}
