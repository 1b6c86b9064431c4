//! On-disk formats: binary field/contrast dumps and PGM images.
//!
//! Dump layout (all little-endian):
//!
//! ```text
//! magic   4 bytes   "CFLD" (field) or "CMAP" (contrast)
//! version u32       1
//! rows    u32
//! cols    u32
//! data    rows*cols pairs of f64 (re, im), row-major
//! ```
//!
//! Contrast maps are written as `M x M` in grid cell order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{CMatrix, FieldKind, FieldSet};
use crate::scene::{ContrastMap, GrayImage};

pub const FIELD_MAGIC: &[u8; 4] = b"CFLD";
pub const CONTRAST_MAGIC: &[u8; 4] = b"CMAP";
pub const DUMP_VERSION: u32 = 1;

pub fn encode_dump(magic: &[u8; 4], rows: usize, cols: usize, row_major: &[Complex64]) -> Result<Vec<u8>> {
    if row_major.len() != rows * cols {
        return Err(Error::shape("dump payload", rows * cols, row_major.len()));
    }
    let rows32 = u32::try_from(rows).map_err(|_| Error::Format("row count exceeds u32".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Format("column count exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(16 + 16 * row_major.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&rows32.to_le_bytes());
    buf.extend_from_slice(&cols32.to_le_bytes());
    for z in row_major {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(buf)
}

/// Returns `(rows, cols, row-major values)`.
pub fn decode_dump(magic: &[u8; 4], bytes: &[u8]) -> Result<(usize, usize, Vec<Complex64>)> {
    if bytes.len() < 16 {
        return Err(Error::Format("dump shorter than its header".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let payload = &bytes[16..];
    if payload.len() != rows * cols * 16 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header declares {rows}x{cols}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((rows, cols, values))
}

pub fn write_field(path: &Path, field: &FieldSet) -> Result<()> {
    write_matrix(path, &field.values)
}

pub fn write_matrix(path: &Path, m: &CMatrix) -> Result<()> {
    let bytes = encode_dump(FIELD_MAGIC, m.rows(), m.cols(), &m.to_row_major())?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<CMatrix> {
    let bytes = std::fs::read(path)?;
    let (rows, cols, values) = decode_dump(FIELD_MAGIC, &bytes)?;
    CMatrix::from_row_major(rows, cols, &values)
}

pub fn read_field(path: &Path, kind: FieldKind) -> Result<FieldSet> {
    Ok(FieldSet::new(kind, read_matrix(path)?))
}

pub fn write_contrast(path: &Path, map: &ContrastMap) -> Result<()> {
    let bytes = encode_dump(CONTRAST_MAGIC, map.grid(), map.grid(), map.values())?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_contrast(path: &Path) -> Result<ContrastMap> {
    let bytes = std::fs::read(path)?;
    let (rows, cols, values) = decode_dump(CONTRAST_MAGIC, &bytes)?;
    if rows != cols {
        return Err(Error::Format(format!("contrast dump is {rows}x{cols}, expected square")));
    }
    ContrastMap::new(rows, values)
}

/// Any per-cell complex vector (contrast variations may be negative), as an
/// `M x M` contrast dump.
pub fn write_cell_vector(path: &Path, grid: usize, values: &[Complex64]) -> Result<()> {
    let bytes = encode_dump(CONTRAST_MAGIC, grid, grid, values)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Returns `(M, values)` without the nonnegativity check of [`read_contrast`].
pub fn read_cell_vector(path: &Path) -> Result<(usize, Vec<Complex64>)> {
    let bytes = std::fs::read(path)?;
    let (rows, cols, values) = decode_dump(CONTRAST_MAGIC, &bytes)?;
    if rows != cols {
        return Err(Error::Format(format!("contrast dump is {rows}x{cols}, expected square")));
    }
    Ok((rows, values))
}

/// 8-bit binary PGM of `values` (row-major), mapped linearly from
/// `[0, display_max]` to `[0, 255]` and clipped.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], display_max: f64) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape("PGM payload", width * height, values.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let scale = if display_max > 0.0 { 255.0 / display_max } else { 0.0 };
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| (v * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_pgm_image(path: &Path, image: &GrayImage) -> Result<()> {
    write_pgm(path, image.width, image.height, &image.pixels, 1.0)
}

/// Preview of one channel of a contrast map.
pub fn write_contrast_pgm(path: &Path, map: &ContrastMap, display_max: f64, imaginary: bool) -> Result<()> {
    let values: Vec<f64> = map
        .values()
        .iter()
        .map(|z| if imaginary { z.im } else { z.re })
        .collect();
    write_pgm(path, map.grid(), map.grid(), &values, display_max)
}

/// Reads binary (P5) or ASCII (P2) PGM, 8- or 16-bit, normalized to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
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
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| -> Result<usize> { s.parse().map_err(|_| Error::Format(format!("bad PGM number {s:?}"))) };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM maxval {maxval}")));
    }
    let count = width * height;
    let pixels: Vec<f64> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let data = &bytes[(pos + 1).min(bytes.len())..];
            let wide = maxval > 255;
            let need = if wide { 2 * count } else { count };
            if data.len() < need {
                return Err(Error::Format("truncated PGM raster".into()));
            }
            if wide {
                data[..need]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
                    .collect()
            } else {
                data[..need].iter().map(|&b| b as f64 / maxval as f64).collect()
            }
        }
        "P2" => {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(num(token()?)? as f64 / maxval as f64);
            }
            out
        }
        other => return Err(Error::Format(format!("unsupported PGM magic {other:?}"))),
    };
    GrayImage::new(width, height, pixels.into_iter().map(|p| p.min(1.0)).collect())
}
