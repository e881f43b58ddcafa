//! FMAP binary feature-map container.
//!
//! Layout (all little-endian): magic `FMAP`, u32 version (1), u32 height,
//! u32 width, u32 channels, u32 flags (bit 0 = unit-normalized), then
//! `h*w*c` f32 values row-major channel-interleaved, then `h*w` validity
//! bytes (0 or 1).
//!
//! Values are stored as f32; writing narrows the in-memory f64 features.

use std::path::Path;

use super::{atomic_write, ByteReader, FormatError, Result};
use crate::features::FeatureMap;

const FMAP_VERSION: u32 = 1;

/// Reads an FMAP feature map.
pub fn read_fmap(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    if r.take(4)? != b"FMAP" {
        return Err(FormatError::bad_magic(path, "FMAP"));
    }
    let version = r.read_u32()?;
    if version != FMAP_VERSION {
        return Err(FormatError::malformed(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let height = r.read_u32()?;
    let width = r.read_u32()?;
    let channels = r.read_u32()?;
    let flags = r.read_u32()?;
    let n_pixels = (height as u64) * (width as u64);
    let n_values = n_pixels * channels as u64;
    if width == 0 || height == 0 || channels == 0 || n_values > i32::MAX as u64 {
        return Err(FormatError::DimensionOverflow {
            path: path.display().to_string(),
        });
    }
    let mut values = Vec::with_capacity(n_values as usize);
    {
        let raw = r.take(4 * n_values as usize)?;
        for chunk in raw.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
    }
    let validity_bytes = r.take(n_pixels as usize)?;
    let valid = validity_bytes.iter().map(|&b| b != 0).collect();
    Ok(FeatureMap::new(
        width,
        height,
        channels,
        values,
        valid,
        flags & 1 != 0,
    ))
}

/// Writes an FMAP feature map (values narrowed to f32).
pub fn write_fmap(path: &Path, map: &FeatureMap) -> Result<()> {
    let n_values = map.values().len();
    let mut out = Vec::with_capacity(24 + 4 * n_values + map.validity().len());
    out.extend_from_slice(b"FMAP");
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    out.extend_from_slice(&map.height().to_le_bytes());
    out.extend_from_slice(&map.width().to_le_bytes());
    out.extend_from_slice(&map.channels().to_le_bytes());
    out.extend_from_slice(&u32::from(map.unit_normalized()).to_le_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend(map.validity().iter().map(|&v| u8::from(v)));
    atomic_write(path, &out)
}
