//! Plain-text camera list: one whitespace-separated record per camera.
//!
//! Record layout (18 tokens): id, focal, pp_x, pp_y, the 9 rotation entries
//! row-major, the 3 center coordinates, width, height. `#` starts a comment
//! running to end of line. Records may span lines.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::{atomic_write, FormatError, Result};
use crate::geometry::CameraPinhole;

/// A named camera, as stored in a camera list file.
#[derive(Debug, Clone)]
pub struct CameraRecord {
    pub id: String,
    pub camera: CameraPinhole,
}

/// Parses every camera record in the file.
pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let tokens: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .collect();
    if tokens.len() % 18 != 0 {
        return Err(FormatError::malformed(
            path,
            format!(
                "token count {} is not a multiple of 18 (one record per camera)",
                tokens.len()
            ),
        ));
    }
    let mut records = Vec::with_capacity(tokens.len() / 18);
    for chunk in tokens.chunks(18) {
        let id = chunk[0].to_string();
        let mut nums = [0.0f64; 15];
        for (i, tok) in chunk[1..16].iter().enumerate() {
            nums[i] = tok
                .parse()
                .map_err(|_| FormatError::malformed(path, format!("bad number '{tok}'")))?;
        }
        let parse_dim = |tok: &str| -> Result<u32> {
            tok.parse()
                .map_err(|_| FormatError::malformed(path, format!("bad image dimension '{tok}'")))
        };
        let width = parse_dim(chunk[16])?;
        let height = parse_dim(chunk[17])?;
        let rotation = Matrix3::new(
            nums[3], nums[4], nums[5], //
            nums[6], nums[7], nums[8], //
            nums[9], nums[10], nums[11],
        );
        let camera = CameraPinhole::new(
            nums[0],
            Vector2::new(nums[1], nums[2]),
            rotation,
            Vector3::new(nums[12], nums[13], nums[14]),
            width,
            height,
        )
        .map_err(|e| FormatError::malformed(path, format!("record '{id}': {e}")))?;
        records.push(CameraRecord { id, camera });
    }
    Ok(records)
}

/// Writes camera records, one per line, full float precision.
pub fn write_cameras(path: &Path, records: &[CameraRecord]) -> Result<()> {
    let mut out = String::from("# id focal pp_x pp_y r[3x3 row-major] center_xyz width height\n");
    for r in records {
        let c = &r.camera;
        let rot = c.rotation();
        let pp = c.principal_point();
        let ctr = c.center();
        out.push_str(&r.id);
        let mut push = |v: f64| out.push_str(&format!(" {v:.17e}"));
        push(c.focal());
        push(pp.x);
        push(pp.y);
        for row in 0..3 {
            for col in 0..3 {
                push(rot[(row, col)]);
            }
        }
        push(ctr.x);
        push(ctr.y);
        push(ctr.z);
        out.push_str(&format!(" {} {}\n", c.width(), c.height()));
    }
    atomic_write(path, out.as_bytes())
}
