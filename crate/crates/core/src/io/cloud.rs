//! Point cloud formats: binary PCL1 and ASCII XYZ.
//!
//! PCL1 layout: magic `PCL1`, little-endian u64 point count, then that many
//! (x, y, z) f64 triples. XYZ is one `x y z` line per point.

use std::path::Path;

use nalgebra::Vector3;

use super::{atomic_write, ByteReader, FormatError, Result};

/// Reads a binary PCL1 point cloud.
pub fn read_point_cloud(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    if r.take(4)? != b"PCL1" {
        return Err(FormatError::bad_magic(path, "PCL1"));
    }
    let count = r.read_u64()?;
    if count > (usize::MAX / 24) as u64 || count * 24 != r.remaining() as u64 {
        return Err(FormatError::truncated(path));
    }
    let mut points = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let x = r.read_f64()?;
        let y = r.read_f64()?;
        let z = r.read_f64()?;
        points.push(Vector3::new(x, y, z));
    }
    Ok(points)
}

/// Writes a binary PCL1 point cloud.
pub fn write_point_cloud(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 24 * points.len());
    out.extend_from_slice(b"PCL1");
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
    }
    atomic_write(path, &out)
}

/// Reads an ASCII XYZ cloud: one `x y z` triple per line, `#` comments.
pub fn read_xyz(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut coord = [0.0f64; 3];
        for c in coord.iter_mut() {
            *c = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| {
                    FormatError::malformed(path, format!("line {}: expected 'x y z'", lineno + 1))
                })?;
        }
        if it.next().is_some() {
            return Err(FormatError::malformed(
                path,
                format!("line {}: trailing tokens", lineno + 1),
            ));
        }
        points.push(Vector3::new(coord[0], coord[1], coord[2]));
    }
    Ok(points)
}

/// Writes an ASCII XYZ cloud with full float precision.
pub fn write_xyz(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    let mut out = String::new();
    for p in points {
        out.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", p.x, p.y, p.z));
    }
    atomic_write(path, out.as_bytes())
}
