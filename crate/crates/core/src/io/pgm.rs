//! Binary PGM (P5, 8-bit) reader/writer.

use std::path::Path;

use super::{atomic_write, FormatError, Result};
use crate::image::Image2D;

/// Reads an 8-bit binary PGM into an image with intensities in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Image2D> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(FormatError::bad_magic(path, "P5"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        *field = read_header_int(&bytes, &mut pos, path)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(FormatError::malformed(
            path,
            format!("only 8-bit PGM supported, maxval {maxval}"),
        ));
    }
    if width == 0 || height == 0 || width > i32::MAX as usize || height > i32::MAX as usize {
        return Err(FormatError::DimensionOverflow {
            path: path.display().to_string(),
        });
    }
    // Single whitespace byte separates the header from raster data.
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(FormatError::truncated(path));
    }
    Ok(Image2D::from_gray_u8(
        width as u32,
        height as u32,
        &bytes[pos..pos + n],
    ))
}

/// Writes an image as binary 8-bit PGM (intensities quantized from `[0, 1]`).
pub fn write_pgm(path: &Path, image: &Image2D) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(&image.to_gray_u8());
    atomic_write(path, &out)
}

/// Parses one whitespace-delimited ASCII integer, skipping '#' comments.
fn read_header_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(FormatError::malformed(path, "expected integer in header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::malformed(path, "bad integer in header"))
}
