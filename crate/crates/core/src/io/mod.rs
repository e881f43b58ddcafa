//! File formats: PGM images, PFM float maps, FMAP feature maps, MLPW model
//! weights, camera lists, point clouds, and atomic write helpers.
//!
//! All binary formats are little-endian. Writers go through [`atomic_write`]
//! so a crashed run never leaves a truncated file behind.

mod cameras;
mod cloud;
mod fmap;
mod mlpw;
mod pfm;
mod pgm;

pub use cameras::{read_cameras, write_cameras, CameraRecord};
pub use cloud::{read_point_cloud, read_xyz, write_point_cloud, write_xyz};
pub use fmap::{read_fmap, write_fmap};
pub use mlpw::{read_mlpw, write_mlpw};
pub use pfm::{read_pfm, write_pfm, FloatMap};
pub use pgm::{read_pgm, write_pgm};

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

/// Errors for unreadable, malformed, or unwritable files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: String, expected: String },
    #[error("{path}: truncated file")]
    Truncated { path: String },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: dimensions overflow supported range")]
    DimensionOverflow { path: String },
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn malformed(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Malformed {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn truncated(path: &Path) -> Self {
        FormatError::Truncated {
            path: path.display().to_string(),
        }
    }

    pub(crate) fn bad_magic(path: &Path, expected: &str) -> Self {
        FormatError::BadMagic {
            path: path.display().to_string(),
            expected: expected.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Writes `bytes` to `path` atomically: the content goes to a temporary file
/// in the same directory which is then renamed over the destination, so
/// readers never observe a partial file and reruns are idempotent.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(path, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp_path).map_err(|e| FormatError::io(&tmp_path, e))?;
        f.write_all(bytes).map_err(|e| FormatError::io(&tmp_path, e))?;
        f.sync_all().map_err(|e| FormatError::io(&tmp_path, e))?;
    }
    fs::rename(&tmp_path, path).map_err(|e| FormatError::io(path, e))
}

/// Cursor over a byte buffer with little-endian readers and uniform
/// truncation errors.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::truncated(self.path));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn read_f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("out.bin");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries.len(), 1, "temp file left behind: {entries:?}");
    }
}
