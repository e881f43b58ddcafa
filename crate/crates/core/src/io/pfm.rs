//! Grayscale PFM reader/writer (scale -1.0, little-endian).
//!
//! PFM stores rows bottom-to-top; this module converts so [`FloatMap`] rows
//! are top-to-bottom like every other raster in the crate. Invalid pixels are
//! conventionally stored as NaN.

use std::path::Path;

use super::{atomic_write, FormatError, Result};

/// Row-major (top-down) single-channel float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        Self {
            width,
            height,
            values,
        }
    }
}

/// Reads a grayscale (Pf) little-endian PFM.
pub fn read_pfm(path: &Path) -> Result<FloatMap> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    if bytes.len() < 2 || &bytes[0..2] != b"Pf" {
        return Err(FormatError::bad_magic(path, "Pf"));
    }
    let mut pos = 2;
    let width: usize = read_token(&bytes, &mut pos, path)?;
    let height: usize = read_token(&bytes, &mut pos, path)?;
    let scale: f64 = read_token(&bytes, &mut pos, path)?;
    if scale >= 0.0 {
        return Err(FormatError::malformed(
            path,
            "big-endian PFM (non-negative scale) not supported",
        ));
    }
    if width == 0 || height == 0 || width.saturating_mul(height) > i32::MAX as usize {
        return Err(FormatError::DimensionOverflow {
            path: path.display().to_string(),
        });
    }
    pos += 1; // single whitespace after the scale line
    let n = width * height;
    if bytes.len() < pos + 4 * n {
        return Err(FormatError::truncated(path));
    }
    let mut values = vec![0f32; n];
    for file_row in 0..height {
        let out_row = height - 1 - file_row; // bottom-up storage
        for x in 0..width {
            let off = pos + 4 * (file_row * width + x);
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            values[out_row * width + x] = v;
        }
    }
    Ok(FloatMap::new(width as u32, height as u32, values))
}

/// Writes a grayscale little-endian PFM (scale -1.0).
pub fn write_pfm(path: &Path, map: &FloatMap) -> Result<()> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    let (w, h) = (map.width as usize, map.height as usize);
    out.reserve(4 * w * h);
    for file_row in 0..h {
        let src_row = h - 1 - file_row;
        for x in 0..w {
            out.extend_from_slice(&map.values[src_row * w + x].to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

fn read_token<T: std::str::FromStr>(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<T> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::malformed(path, "bad header token"))
}
