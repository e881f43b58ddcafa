//! Binary codec for MLP similarity weights.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "MLPW"
//! version u32      currently 1
//! layers  u32      number of weight layers L
//! L x:
//!   in    u32      input width of the layer
//!   out   u32      output width of the layer
//!   w     f32 * (out * in)   row-major, one row per output unit
//!   b     f32 * out
//! slope   f64      negative-side slope of the hidden activation
//! ```
//!
//! Parameters are held as `f64` in memory and narrowed to `f32` on write, so
//! a write/read round trip preserves exactly the `f32`-representable values.

use std::path::Path;

use super::{ByteReader, FormatError, Result};
use crate::simlearn::MlpParams;

pub const MLPW_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MLPW";

pub fn write_mlpw(path: &Path, params: &MlpParams) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&MLPW_VERSION.to_le_bytes());
    let layers = params.layer_count();
    bytes.extend_from_slice(&(layers as u32).to_le_bytes());
    for layer in 0..layers {
        let dims = params.layer_dims();
        bytes.extend_from_slice(&(dims[layer] as u32).to_le_bytes());
        bytes.extend_from_slice(&(dims[layer + 1] as u32).to_le_bytes());
        for &w in params.weights(layer) {
            bytes.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in params.biases(layer) {
            bytes.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    bytes.extend_from_slice(&params.leaky_slope().to_le_bytes());
    super::atomic_write(path, &bytes)
}

pub fn read_mlpw(path: &Path) -> Result<MlpParams> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let mut reader = ByteReader::new(&bytes, path);
    if reader.take(4)? != MAGIC {
        return Err(FormatError::bad_magic(path, "MLPW"));
    }
    let version = reader.read_u32()?;
    if version != MLPW_VERSION {
        return Err(FormatError::malformed(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let layers = reader.read_u32()? as usize;
    if layers == 0 || layers > 64 {
        return Err(FormatError::malformed(
            path,
            format!("implausible layer count {layers}"),
        ));
    }
    let mut layer_dims = Vec::with_capacity(layers + 1);
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for layer in 0..layers {
        let n_in = reader.read_u32()? as usize;
        let n_out = reader.read_u32()? as usize;
        if n_in == 0 || n_out == 0 || n_in.saturating_mul(n_out) > i32::MAX as usize {
            return Err(FormatError::malformed(
                path,
                format!("layer {layer}: implausible shape {n_in}x{n_out}"),
            ));
        }
        if layer == 0 {
            layer_dims.push(n_in);
        } else if layer_dims[layer] != n_in {
            return Err(FormatError::malformed(
                path,
                format!(
                    "layer {layer}: input width {n_in} does not chain from previous output {}",
                    layer_dims[layer]
                ),
            ));
        }
        layer_dims.push(n_out);
        let mut w = Vec::with_capacity(n_in * n_out);
        for _ in 0..n_in * n_out {
            w.push(reader.read_f32()? as f64);
        }
        let mut b = Vec::with_capacity(n_out);
        for _ in 0..n_out {
            b.push(reader.read_f32()? as f64);
        }
        weights.push(w);
        biases.push(b);
    }
    let slope = reader.read_f64()?;
    if reader.remaining() != 0 {
        return Err(FormatError::malformed(
            path,
            format!("{} trailing bytes after slope", reader.remaining()),
        ));
    }
    MlpParams::from_parts(layer_dims, weights, biases, slope)
        .map_err(|e| FormatError::malformed(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.mlpw");
        let mut params = MlpParams::new(vec![8, 8, 4, 1], 5).unwrap();
        // Force values through f32 first so the round trip is bit-exact.
        for layer in 0..params.layer_count() {
            for w in params.weights_mut(layer) {
                *w = *w as f32 as f64;
            }
            for b in params.biases_mut(layer) {
                *b = (*b + 0.125) as f32 as f64;
            }
        }
        write_mlpw(&path, &params).unwrap();
        let loaded = read_mlpw(&path).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_broken_chaining() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.mlpw");
        let params = MlpParams::new(vec![4, 2, 1], 0).unwrap();
        write_mlpw(&path, &params).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            read_mlpw(&path),
            Err(FormatError::BadMagic { .. })
        ));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            read_mlpw(&path),
            Err(FormatError::Truncated { .. })
        ));

        // Break the layer chaining: second layer claims input width 3.
        let mut broken = good.clone();
        // Offset: magic 4 + version 4 + layers 4 + (in 4 + out 4 + 8 w + 2 b) * 4 bytes.
        let second_layer_in = 12 + 8 + (8 + 2) * 4;
        broken[second_layer_in..second_layer_in + 4].copy_from_slice(&3u32.to_le_bytes());
        std::fs::write(&path, &broken).unwrap();
        assert!(matches!(
            read_mlpw(&path),
            Err(FormatError::Malformed { .. })
        ));
    }

    #[test]
    fn rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.mlpw");
        let params = MlpParams::new(vec![4, 1], 0).unwrap();
        write_mlpw(&path, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_mlpw(&path),
            Err(FormatError::Malformed { .. })
        ));
    }
}
