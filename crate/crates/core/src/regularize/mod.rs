//! Cost-volume regularization and depth extraction: semi-global smoothing
//! along scanline directions, winner selection with sub-step refinement, and
//! the coarse-to-fine pyramid driver that ties sweeping and regularization
//! together. Also home to [`DepthMap`], the scalar-field-plus-confidence
//! carrier used for depth, elevation, and disparity rasters throughout the
//! crate.

use nalgebra::Vector2;
use thiserror::Error;

use crate::features::{extract_patch_descriptors, FeatureError, FeatureMap};
use crate::geometry::{CameraPinhole, DepthSpec, GeometryError};
use crate::image::Image2D;
use crate::planesweep::{
    build_cost_volume, CostProducer, CostVolume, DepthHypotheses, HypothesisWindows, QueryView,
    RangeKind, SimilarityMode,
};

#[derive(Debug, Error)]
pub enum RegularizeError {
    #[error("size mismatch: expected {expected:?}, got {got:?}")]
    SizeMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("smoothness penalties must be finite and non-negative, got p1={p1} p2={p2}")]
    InvalidPenalties { p1: f64, p2: f64 },
    #[error("invalid pyramid configuration: {0}")]
    InvalidPyramid(String),
    #[error("semi-global smoothing needs at least 2 hypotheses, got {got}")]
    TooFewHypotheses { got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Sweep(#[from] crate::planesweep::SweepError),
    #[error("scratch file error: {0}")]
    Scratch(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RegularizeError>;

/// Dense scalar field with per-pixel validity and confidence.
///
/// The value semantics depend on context: ray depth along the viewing ray,
/// terrain elevation (world z), or column disparity between a rectified
/// pair. Confidence is in `[0, 1]`; invalid pixels keep value 0, confidence
/// 0 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
    confidence: Vec<f64>,
}

impl DepthMap {
    /// All-invalid map of the given shape.
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
            confidence: vec![0.0; n],
        }
    }

    pub fn from_parts(
        width: u32,
        height: u32,
        values: Vec<f64>,
        valid: Vec<bool>,
        confidence: Vec<f64>,
    ) -> Self {
        let n = width as usize * height as usize;
        assert_eq!(values.len(), n);
        assert_eq!(valid.len(), n);
        assert_eq!(confidence.len(), n);
        Self {
            width,
            height,
            values,
            valid,
            confidence,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.index(x, y)]
    }

    pub fn value_at(&self, x: u32, y: u32) -> f64 {
        self.values[self.index(x, y)]
    }

    pub fn confidence_at(&self, x: u32, y: u32) -> f64 {
        self.confidence[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64, confidence: f64) {
        let i = self.index(x, y);
        self.values[i] = value;
        self.valid[i] = true;
        self.confidence[i] = confidence;
    }

    pub fn invalidate(&mut self, x: u32, y: u32) {
        let i = self.index(x, y);
        self.values[i] = 0.0;
        self.valid[i] = false;
        self.confidence[i] = 0.0;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidence
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Reinterpret per-pixel ray depths as terrain elevations by backprojecting
/// each pixel and keeping the world-z of the surface point. Pixels whose
/// rays degenerate become invalid rather than failing the whole map.
pub fn ray_depth_to_elevation(map: &DepthMap, camera: &CameraPinhole) -> Result<DepthMap> {
    check_camera_size(map, camera)?;
    let mut out = DepthMap::new(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            if !map.is_valid(x, y) {
                continue;
            }
            let pixel = nalgebra::Vector2::new(x as f64, y as f64);
            match camera.backproject(pixel, DepthSpec::Ray(map.value_at(x, y))) {
                Ok(point) => out.set(x, y, point.z, map.confidence_at(x, y)),
                Err(_) => out.invalidate(x, y),
            }
        }
    }
    Ok(out)
}

/// Reinterpret per-pixel terrain elevations as ray depths by intersecting
/// each viewing ray with the pixel's elevation plane and reprojecting.
/// Pixels whose rays parallel the plane or land behind the camera become
/// invalid.
pub fn elevation_to_ray_depth(map: &DepthMap, camera: &CameraPinhole) -> Result<DepthMap> {
    check_camera_size(map, camera)?;
    let mut out = DepthMap::new(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            if !map.is_valid(x, y) {
                continue;
            }
            let pixel = nalgebra::Vector2::new(x as f64, y as f64);
            let depth = camera
                .backproject(pixel, DepthSpec::Elevation(map.value_at(x, y)))
                .and_then(|point| camera.project(&point))
                .map(|projection| projection.depth);
            match depth {
                Ok(d) => out.set(x, y, d, map.confidence_at(x, y)),
                Err(_) => out.invalidate(x, y),
            }
        }
    }
    Ok(out)
}

fn check_camera_size(map: &DepthMap, camera: &CameraPinhole) -> Result<()> {
    if camera.size() != map.size() {
        return Err(RegularizeError::SizeMismatch {
            expected: map.size(),
            got: camera.size(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod depth_map_tests {
    use super::*;
    use crate::geometry::nadir_camera;
    use approx::assert_relative_eq;

    #[test]
    fn new_map_is_fully_invalid() {
        let map = DepthMap::new(4, 3);
        assert_eq!(map.valid_count(), 0);
        assert_eq!(map.len(), 12);
    }

    #[test]
    fn set_and_invalidate_round_trip() {
        let mut map = DepthMap::new(4, 3);
        map.set(2, 1, 37.5, 0.8);
        assert!(map.is_valid(2, 1));
        assert_relative_eq!(map.value_at(2, 1), 37.5);
        assert_relative_eq!(map.confidence_at(2, 1), 0.8);
        map.invalidate(2, 1);
        assert!(!map.is_valid(2, 1));
        assert_eq!(map.value_at(2, 1), 0.0);
        assert_eq!(map.confidence_at(2, 1), 0.0);
    }

    /// For a straight-down camera at altitude A, a flat surface at elevation
    /// E sits at ray depth A - E for every pixel, so the conversions have a
    /// closed-form oracle.
    #[test]
    fn nadir_elevation_conversion_matches_closed_form() {
        let camera = nadir_camera(8, 6, 10.0, 100.0);
        let mut elev = DepthMap::new(8, 6);
        for y in 0..6 {
            for x in 0..8 {
                elev.set(x, y, 12.5, 1.0);
            }
        }
        let depth = elevation_to_ray_depth(&elev, &camera).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_relative_eq!(depth.value_at(x, y), 87.5, epsilon = 1e-9);
            }
        }
        let back = ray_depth_to_elevation(&depth, &camera).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_relative_eq!(back.value_at(x, y), 12.5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn conversions_preserve_confidence_and_validity() {
        let camera = nadir_camera(4, 4, 5.0, 50.0);
        let mut elev = DepthMap::new(4, 4);
        elev.set(1, 2, 3.0, 0.25);
        let depth = elevation_to_ray_depth(&elev, &camera).unwrap();
        assert_eq!(depth.valid_count(), 1);
        assert_relative_eq!(depth.confidence_at(1, 2), 0.25);
        assert!(!depth.is_valid(0, 0));
    }

    #[test]
    fn conversion_rejects_foreign_camera_size() {
        let camera = nadir_camera(4, 4, 5.0, 50.0);
        let map = DepthMap::new(5, 4);
        assert!(matches!(
            elevation_to_ray_depth(&map, &camera),
            Err(RegularizeError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn elevation_above_camera_becomes_invalid_not_an_error() {
        let camera = nadir_camera(4, 4, 5.0, 50.0);
        let mut elev = DepthMap::new(4, 4);
        elev.set(0, 0, 60.0, 1.0); // above the camera: ray hits it behind
        elev.set(1, 1, 10.0, 1.0);
        let depth = elevation_to_ray_depth(&elev, &camera).unwrap();
        assert!(!depth.is_valid(0, 0));
        assert!(depth.is_valid(1, 1));
    }
}

// ---------------------------------------------------------------------------
// Semi-global cost smoothing
// ---------------------------------------------------------------------------

/// Default adjacent-hypothesis penalty on the `[0, 1]` cost scale.
pub const DEFAULT_P1: f64 = 0.03;

/// Default jump penalty on the `[0, 1]` cost scale.
pub const DEFAULT_P2: f64 = 0.3;

/// Penalty scale applied when learned features or a learned similarity
/// drive the cost volume: their cost margins are about two orders of
/// magnitude tighter than patch-correlation costs.
pub const LEARNED_PENALTY_SCALE: f64 = 0.01;

/// Smoothing penalties and the scanline direction set.
#[derive(Debug, Clone)]
pub struct SgmConfig {
    /// Penalty for moving one hypothesis step between neighboring pixels.
    pub p1: f64,
    /// Penalty for larger hypothesis jumps; must be at least `p1`.
    pub p2: f64,
    /// Number of scanline directions, 4 (axis-aligned) or 8 (+ diagonals).
    pub directions: u32,
}

impl Default for SgmConfig {
    fn default() -> Self {
        Self {
            p1: DEFAULT_P1,
            p2: DEFAULT_P2,
            directions: 8,
        }
    }
}

impl SgmConfig {
    /// The default configuration with both penalties multiplied by
    /// `factor` (see [`LEARNED_PENALTY_SCALE`]).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            p1: self.p1 * factor,
            p2: self.p2 * factor,
            directions: self.directions,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p1.is_finite() && self.p2.is_finite() && 0.0 <= self.p1 && self.p1 <= self.p2)
        {
            return Err(RegularizeError::InvalidPenalties {
                p1: self.p1,
                p2: self.p2,
            });
        }
        if self.directions != 4 && self.directions != 8 {
            return Err(RegularizeError::InvalidPyramid(format!(
                "direction count must be 4 or 8, got {}",
                self.directions
            )));
        }
        Ok(())
    }
}

/// Scanline directions whose predecessor pixel precedes the current one in
/// raster order (forward pass) and in anti-raster order (backward pass).
/// `(dx, dy)` is the travel direction: the predecessor of `p` is `p - d`.
const PASS_A_AXES: [(i32, i32); 2] = [(1, 0), (0, 1)];
const PASS_B_AXES: [(i32, i32); 2] = [(-1, 0), (0, -1)];
const PASS_A_DIAGONALS: [(i32, i32); 2] = [(1, 1), (-1, 1)];
const PASS_B_DIAGONALS: [(i32, i32); 2] = [(-1, -1), (1, -1)];

/// One smoothed cell: `out[d] = cost[d] + min(prev[d], prev[d∓1] + p1,
/// min_k prev[k] + p2) - min_k prev[k]`. The correction term is computed
/// before adding so the zero-penalty case is the exact identity.
fn sgm_cell(cost: &[f64], prev: &[f64], p1: f64, p2: f64, out: &mut [f64]) {
    let depth = cost.len();
    let min_all = prev.iter().copied().fold(f64::INFINITY, f64::min);
    for d in 0..depth {
        let mut best = prev[d];
        if d > 0 {
            best = best.min(prev[d - 1] + p1);
        }
        if d + 1 < depth {
            best = best.min(prev[d + 1] + p1);
        }
        best = best.min(min_all + p2);
        out[d] = cost[d] + (best - min_all);
    }
}

/// Advances one direction over one row. `prev_row` is this direction's
/// smoothed previous row (`None` on the first row of a pass); horizontal
/// directions chain within `cur` itself. `reverse` scans right-to-left.
fn direction_row(
    (dx, dy): (i32, i32),
    p1: f64,
    p2: f64,
    width: usize,
    depth: usize,
    costs: &[f64],
    prev_row: Option<&[f64]>,
    cur: &mut [f64],
    reverse: bool,
) {
    for step in 0..width {
        let x = if reverse { width - 1 - step } else { step };
        let ci = x * depth;
        let px = x as i32 - dx;
        let in_range = px >= 0 && (px as usize) < width;
        if dy == 0 {
            if !in_range {
                cur[ci..ci + depth].copy_from_slice(&costs[ci..ci + depth]);
                continue;
            }
            let pi = px as usize * depth;
            if pi < ci {
                let (head, tail) = cur.split_at_mut(ci);
                sgm_cell(
                    &costs[ci..ci + depth],
                    &head[pi..pi + depth],
                    p1,
                    p2,
                    &mut tail[..depth],
                );
            } else {
                let (head, tail) = cur.split_at_mut(pi);
                sgm_cell(
                    &costs[ci..ci + depth],
                    &tail[..depth],
                    p1,
                    p2,
                    &mut head[ci..ci + depth],
                );
            }
        } else {
            match prev_row {
                Some(prev) if in_range => {
                    let pi = px as usize * depth;
                    sgm_cell(
                        &costs[ci..ci + depth],
                        &prev[pi..pi + depth],
                        p1,
                        p2,
                        &mut cur[ci..ci + depth],
                    );
                }
                _ => cur[ci..ci + depth].copy_from_slice(&costs[ci..ci + depth]),
            }
        }
    }
}

/// Row-addressable store for the forward pass's partial direction sums.
trait RowScratch {
    fn write_row(&mut self, y: u32, row: &[f64]) -> std::io::Result<()>;
    fn read_row(&mut self, y: u32, row: &mut [f64]) -> std::io::Result<()>;
}

struct MemoryScratch {
    rows: Vec<f64>,
    row_len: usize,
}

impl MemoryScratch {
    fn new(height: u32, row_len: usize) -> Self {
        Self {
            rows: vec![0.0; height as usize * row_len],
            row_len,
        }
    }
}

impl RowScratch for MemoryScratch {
    fn write_row(&mut self, y: u32, row: &[f64]) -> std::io::Result<()> {
        let base = y as usize * self.row_len;
        self.rows[base..base + self.row_len].copy_from_slice(row);
        Ok(())
    }

    fn read_row(&mut self, y: u32, row: &mut [f64]) -> std::io::Result<()> {
        let base = y as usize * self.row_len;
        row.copy_from_slice(&self.rows[base..base + self.row_len]);
        Ok(())
    }
}

/// Pass-A sums spilled to an unlinked temporary file, for volumes over the
/// memory cap.
struct FileScratch {
    file: std::fs::File,
    buf: Vec<u8>,
}

impl FileScratch {
    fn new(row_len: usize) -> std::io::Result<Self> {
        Ok(Self {
            file: tempfile::tempfile()?,
            buf: vec![0u8; row_len * std::mem::size_of::<f64>()],
        })
    }
}

impl RowScratch for FileScratch {
    fn write_row(&mut self, y: u32, row: &[f64]) -> std::io::Result<()> {
        use std::io::{Seek, SeekFrom, Write};
        for (chunk, value) in self.buf.chunks_exact_mut(8).zip(row) {
            chunk.copy_from_slice(&value.to_le_bytes());
        }
        self.file
            .seek(SeekFrom::Start(y as u64 * self.buf.len() as u64))?;
        self.file.write_all(&self.buf)
    }

    fn read_row(&mut self, y: u32, row: &mut [f64]) -> std::io::Result<()> {
        use std::io::{Read, Seek, SeekFrom};
        self.file
            .seek(SeekFrom::Start(y as u64 * self.buf.len() as u64))?;
        self.file.read_exact(&mut self.buf)?;
        for (value, chunk) in row.iter_mut().zip(self.buf.chunks_exact(8)) {
            *value = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

struct DirectionState {
    prev: Vec<f64>,
    cur: Vec<f64>,
}

/// Sums the pass's direction rows pairwise (`(a+b)+(c+d)`), so equal inputs
/// stay exact and the streamed and in-memory paths agree bit for bit.
fn tree_sum_rows(states: &[DirectionState], out: &mut [f64]) {
    match states {
        [a, b] => {
            for i in 0..out.len() {
                out[i] = a.cur[i] + b.cur[i];
            }
        }
        [a, b, c, d] => {
            for i in 0..out.len() {
                out[i] = (a.cur[i] + b.cur[i]) + (c.cur[i] + d.cur[i]);
            }
        }
        _ => unreachable!("direction passes hold 2 or 4 directions"),
    }
}

/// Two-pass semi-global sweep: a raster pass accumulates the forward
/// directions into `scratch`, an anti-raster pass adds the backward
/// directions, divides by the direction count, and hands each finished row
/// to `consume` (rows arrive bottom-up). `fill` must produce identical rows
/// when called twice for the same `y`.
fn sweep_rows<F, C>(
    width: u32,
    height: u32,
    depth: usize,
    config: &SgmConfig,
    scratch: &mut dyn RowScratch,
    mut fill: F,
    mut consume: C,
) -> Result<()>
where
    F: FnMut(u32, &mut [f64], &mut [bool]) -> Result<()>,
    C: FnMut(u32, &[f64], &[bool]) -> Result<()>,
{
    let w = width as usize;
    let row_len = w * depth;
    let directions: Vec<(i32, i32)> = if config.directions == 8 {
        PASS_A_AXES.iter().chain(&PASS_A_DIAGONALS).copied().collect()
    } else {
        PASS_A_AXES.to_vec()
    };
    let mut costs = vec![0.0; row_len];
    let mut defined = vec![false; row_len];
    let mut sum = vec![0.0; row_len];
    let mut states: Vec<DirectionState> = directions
        .iter()
        .map(|_| DirectionState {
            prev: vec![0.0; row_len],
            cur: vec![0.0; row_len],
        })
        .collect();

    // Forward (raster) pass.
    for y in 0..height {
        fill(y, &mut costs, &mut defined)?;
        for (state, &dir) in states.iter_mut().zip(&directions) {
            let prev_row = (y > 0).then_some(state.prev.as_slice());
            direction_row(
                dir, config.p1, config.p2, w, depth, &costs, prev_row, &mut state.cur, false,
            );
        }
        tree_sum_rows(&states, &mut sum);
        scratch.write_row(y, &sum)?;
        for state in &mut states {
            std::mem::swap(&mut state.prev, &mut state.cur);
        }
    }

    // Backward (anti-raster) pass.
    let directions: Vec<(i32, i32)> = if config.directions == 8 {
        PASS_B_AXES.iter().chain(&PASS_B_DIAGONALS).copied().collect()
    } else {
        PASS_B_AXES.to_vec()
    };
    let inv = 1.0 / config.directions as f64;
    let mut total = vec![0.0; row_len];
    for y in (0..height).rev() {
        fill(y, &mut costs, &mut defined)?;
        for (state, &dir) in states.iter_mut().zip(&directions) {
            let prev_row = (y + 1 < height).then_some(state.prev.as_slice());
            direction_row(
                dir, config.p1, config.p2, w, depth, &costs, prev_row, &mut state.cur, true,
            );
        }
        tree_sum_rows(&states, &mut sum);
        scratch.read_row(y, &mut total)?;
        for i in 0..row_len {
            total[i] = (total[i] + sum[i]) * inv;
        }
        consume(y, &total, &defined)?;
        for state in &mut states {
            std::mem::swap(&mut state.prev, &mut state.cur);
        }
    }
    Ok(())
}

/// Smooths a cost volume along scanline directions.
///
/// Per direction `r`: `L_r(p, d) = C(p, d) + min(L_r(p-r, d),
/// L_r(p-r, d±1) + p1, min_k L_r(p-r, k) + p2) - min_k L_r(p-r, k)`; the
/// output is the mean over directions. Undefined cells participate with
/// their stored [`crate::planesweep::UNDEFINED_COST`] and stay flagged
/// undefined. With `p1 = p2 = 0` the result equals the input exactly.
pub fn sgm(volume: &CostVolume, config: &SgmConfig) -> Result<CostVolume> {
    config.validate()?;
    let depth = volume.depth_count();
    if depth < 2 {
        return Err(RegularizeError::TooFewHypotheses { got: depth });
    }
    let (width, height) = volume.size();
    let row_len = width as usize * depth;
    let mut out = CostVolume::new(width, height, volume.hypotheses().clone());
    out.defined_mut().copy_from_slice(volume.defined());
    let costs = volume.costs();
    let defined = volume.defined();
    let out_costs = out.costs_mut();
    let mut scratch = MemoryScratch::new(height, row_len);
    sweep_rows(
        width,
        height,
        depth,
        config,
        &mut scratch,
        |y, cost_row, defined_row| {
            let base = y as usize * row_len;
            cost_row.copy_from_slice(&costs[base..base + row_len]);
            for (slot, &flag) in defined_row.iter_mut().zip(&defined[base..base + row_len]) {
                *slot = flag;
            }
            Ok(())
        },
        |y, total, _| {
            let base = y as usize * row_len;
            out_costs[base..base + row_len].copy_from_slice(total);
            Ok(())
        },
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Depth extraction
// ---------------------------------------------------------------------------

/// Winner for one pixel: depth (optionally parabola-refined between
/// neighboring hypotheses) and the clamped runner-up margin as confidence.
fn extract_pixel(
    hypotheses: &DepthHypotheses,
    costs: &[f64],
    defined: &[bool],
    subpixel: bool,
) -> Option<(f64, f64)> {
    let mut best = usize::MAX;
    let mut best_cost = f64::INFINITY;
    let mut second = f64::INFINITY;
    for (d, (&cost, &ok)) in costs.iter().zip(defined).enumerate() {
        if !ok {
            continue;
        }
        if cost < best_cost {
            second = best_cost;
            best_cost = cost;
            best = d;
        } else if cost < second {
            second = cost;
        }
    }
    if best == usize::MAX {
        return None;
    }
    let mut depth = hypotheses.value(best);
    if subpixel && best > 0 && best + 1 < costs.len() && defined[best - 1] && defined[best + 1] {
        let (below, center, above) = (costs[best - 1], costs[best], costs[best + 1]);
        let curvature = below - 2.0 * center + above;
        if curvature > 0.0 {
            let delta = ((below - above) / (2.0 * curvature)).clamp(-0.5, 0.5);
            depth += if delta >= 0.0 {
                delta * (hypotheses.value(best + 1) - hypotheses.value(best))
            } else {
                delta * (hypotheses.value(best) - hypotheses.value(best - 1))
            };
        }
    }
    let confidence = if second.is_finite() {
        (second - best_cost).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Some((depth, confidence))
}

/// Extracts the per-pixel winning hypothesis from a (typically smoothed)
/// cost volume: argmin over defined cells, an optional parabola fit over
/// the two neighbors refining within ±0.5 steps, and confidence
/// `clamp(second_best - best, 0, 1)`. Pixels with no defined cell are
/// invalid.
pub fn extract_depth(volume: &CostVolume, subpixel: bool) -> DepthMap {
    let (width, height) = volume.size();
    let mut out = DepthMap::new(width, height);
    for y in 0..height {
        for x in 0..width {
            if let Some((depth, confidence)) = extract_pixel(
                volume.hypotheses(),
                volume.cost_slice(x, y),
                volume.defined_slice(x, y),
                subpixel,
            ) {
                out.set(x, y, depth, confidence);
            }
        }
    }
    out
}

/// Cost computation, smoothing, and extraction fused row by row, with the
/// forward-pass sums spilled to a temporary file: the full volume never
/// materializes. Produces exactly what `build_cost_volume` + [`sgm`] +
/// [`extract_depth`] would.
fn match_streamed(
    producer: &CostProducer<'_>,
    config: &SgmConfig,
    subpixel: bool,
) -> Result<DepthMap> {
    let depth = producer.depth_count();
    if depth < 2 {
        return Err(RegularizeError::TooFewHypotheses { got: depth });
    }
    let (width, height) = (producer.width(), producer.height());
    let mut scratch = FileScratch::new(producer.row_len())?;
    let mut out = DepthMap::new(width, height);
    let hypotheses = producer.hypotheses();
    sweep_rows(
        width,
        height,
        depth,
        config,
        &mut scratch,
        |y, costs, defined| {
            producer.fill_row(y, costs, defined)?;
            Ok(())
        },
        |y, total, defined| {
            for x in 0..width as usize {
                let cell = x * depth;
                if let Some((value, confidence)) = extract_pixel(
                    hypotheses,
                    &total[cell..cell + depth],
                    &defined[cell..cell + depth],
                    subpixel,
                ) {
                    out.set(x as u32, y, value, confidence);
                }
            }
            Ok(())
        },
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Coarse-to-fine pyramid driver
// ---------------------------------------------------------------------------

/// Default pyramid downscale factors, coarsest first.
pub const DEFAULT_LEVELS: [u32; 4] = [8, 4, 2, 1];

/// Factor at and below which supplied external features (and a learned
/// similarity) engage; coarser levels always match with built-in patch
/// descriptors under cosine similarity.
pub const DEFAULT_FEATURE_SWITCH_LEVEL: u32 = 4;

/// Half-width, in hypothesis steps, of the per-pixel search window around
/// the upsampled predecessor depth. Successive levels roughly halve the
/// step, so the window must absorb a few predecessor steps of carried
/// error — plus snapping and room for the sub-step parabola — before it
/// pins minima to its edges, where refinement cannot fire. Windows only
/// narrow ladders longer than `2 × envelope_steps + 1`, leaving short
/// ladders effectively exhaustive.
pub const DEFAULT_ENVELOPE_STEPS: u32 = 8;

/// Target projected motion of one hypothesis step, in pixels at the
/// current level. Well-textured patches localize the cost minimum to a
/// small fraction of a pixel, so the ladder samples distinctly finer than
/// whole-pixel parallax to keep quantization below the matching noise.
pub const DEFAULT_STEP_PX: f64 = 0.125;

/// Gaussian smoothing applied to every view before matching, in native
/// pixels. Bilinear warping attenuates white sensor noise by an amount that
/// depends on the sub-pixel phase of the sampling (a half-pixel phase
/// averages four pixels, an integer phase passes one through), so normalized
/// scores on noisy images systematically favour hypotheses whose warp lands
/// mid-pixel — on near-constant-parallax scenes the whole map drifts the
/// same way. Band-limiting the inputs first makes the noise transfer nearly
/// phase-uniform and removes most of that pull at a small cost in peak
/// sharpness on noise-free inputs.
pub const DEFAULT_PRESMOOTH_SIGMA_PX: f64 = 1.0;

/// Cost volumes above this in-memory footprint stream through the
/// row-fused path instead of materializing.
pub const DEFAULT_MEMORY_CAP_BYTES: usize = 256 << 20;

/// Patch radius of the built-in descriptor used at coarse levels (clamped
/// down when a level is too small to fit the patch).
pub const BUILTIN_PATCH_RADIUS: usize = 2;

/// Upper bound on hypotheses per level, guarding degenerate step estimates.
pub const MAX_HYPOTHESES: usize = 4096;

/// Multi-resolution schedule for [`pyramid_match`].
#[derive(Debug, Clone)]
pub struct PyramidConfig {
    /// Downscale factors, strictly decreasing and ending at 1.
    pub levels: Vec<u32>,
    /// See [`DEFAULT_FEATURE_SWITCH_LEVEL`].
    pub feature_switch_level: u32,
    /// See [`DEFAULT_ENVELOPE_STEPS`].
    pub envelope_steps: u32,
    /// See [`DEFAULT_STEP_PX`].
    pub step_px: f64,
    /// See [`DEFAULT_PRESMOOTH_SIGMA_PX`]. Zero disables input smoothing.
    pub presmooth_sigma_px: f64,
    /// See [`DEFAULT_MEMORY_CAP_BYTES`].
    pub memory_cap_bytes: usize,
    /// Parabolic sub-step refinement of extracted minima (on by default).
    pub subpixel: bool,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            feature_switch_level: DEFAULT_FEATURE_SWITCH_LEVEL,
            envelope_steps: DEFAULT_ENVELOPE_STEPS,
            step_px: DEFAULT_STEP_PX,
            presmooth_sigma_px: DEFAULT_PRESMOOTH_SIGMA_PX,
            memory_cap_bytes: DEFAULT_MEMORY_CAP_BYTES,
            subpixel: true,
        }
    }
}

impl PyramidConfig {
    fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(RegularizeError::InvalidPyramid(message));
        if self.levels.is_empty() {
            return bad("level list is empty".into());
        }
        if !self.levels.windows(2).all(|pair| pair[0] > pair[1]) {
            return bad(format!("levels must strictly decrease, got {:?}", self.levels));
        }
        if *self.levels.last().unwrap() != 1 {
            return bad(format!("levels must end at full resolution, got {:?}", self.levels));
        }
        if !self.levels.contains(&self.feature_switch_level) {
            return bad(format!(
                "feature switch level {} is not one of the levels {:?}",
                self.feature_switch_level, self.levels
            ));
        }
        if self.envelope_steps == 0 {
            return bad("envelope must span at least 1 step".into());
        }
        if !(self.step_px.is_finite() && self.step_px > 0.0) {
            return bad(format!("step size must be positive, got {} px", self.step_px));
        }
        if !(self.presmooth_sigma_px.is_finite() && self.presmooth_sigma_px >= 0.0) {
            return bad(format!(
                "input smoothing sigma must be non-negative, got {} px",
                self.presmooth_sigma_px
            ));
        }
        Ok(())
    }
}

/// One image with its calibrated camera.
#[derive(Debug, Clone)]
pub struct MatchView {
    pub image: Image2D,
    pub camera: CameraPinhole,
}

/// A reference view, the query views to match it against, and the depth
/// (or elevation) interval to search.
#[derive(Debug, Clone, Copy)]
pub struct MatchRequest<'a> {
    pub reference: &'a MatchView,
    pub queries: &'a [MatchView],
    pub kind: RangeKind,
    pub z_min: f64,
    pub z_max: f64,
}

/// Per-level feature source: called with the view index (0 = reference,
/// then queries in order), the level-scaled image, and its camera.
pub type FeatureProvider<'a> =
    dyn Fn(usize, &Image2D, &CameraPinhole) -> std::result::Result<FeatureMap, FeatureError>
        + Sync
        + 'a;

/// Built-in coarse-level descriptor: patch correlation features with the
/// radius clamped to what the raster can hold; rasters too small for any
/// patch yield an all-invalid map instead of an error.
fn builtin_features(image: &Image2D) -> Result<FeatureMap> {
    let min_dim = image.width().min(image.height()) as usize;
    if min_dim < 3 {
        return Ok(FeatureMap::invalid(image.width(), image.height(), 1, true));
    }
    let radius = BUILTIN_PATCH_RADIUS.min((min_dim - 1) / 2);
    Ok(extract_patch_descriptors(image, radius)?)
}

/// Hypothesis spacing that moves query projections by `step_px` pixels:
/// probes the projection's sensitivity `|∂pixel/∂z|` numerically over a
/// grid of reference pixels and depths, and divides `step_px` by the
/// largest sensitivity found.
pub fn hypothesis_step(
    reference: &CameraPinhole,
    queries: &[&CameraPinhole],
    kind: RangeKind,
    z_min: f64,
    z_max: f64,
    step_px: f64,
) -> Result<f64> {
    let (width, height) = reference.size();
    let spec_for = |z: f64| match kind {
        RangeKind::Ray => DepthSpec::Ray(z),
        RangeKind::Elevation => DepthSpec::Elevation(z),
    };
    let probe = ((z_max - z_min) * 1e-3).max(1e-9);
    let mut max_slope: f64 = 0.0;
    for &(fx, fy) in &[(0.5, 0.5), (0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
        let pixel = Vector2::new(fx * (width - 1) as f64, fy * (height - 1) as f64);
        for t in [0.25, 0.5, 0.75] {
            let z = z_min + t * (z_max - z_min);
            let Ok(near) = reference.backproject(pixel, spec_for(z)) else {
                continue;
            };
            let Ok(far) = reference.backproject(pixel, spec_for(z + probe)) else {
                continue;
            };
            for query in queries {
                let (Ok(a), Ok(b)) = (query.project(&near), query.project(&far)) else {
                    continue;
                };
                max_slope = max_slope.max((b.pixel - a.pixel).norm() / probe);
            }
        }
    }
    if max_slope <= f64::MIN_POSITIVE {
        return Err(RegularizeError::InvalidPyramid(
            "query projections are insensitive to the search range; cannot size hypothesis steps"
                .into(),
        ));
    }
    Ok(step_px / max_slope)
}

/// Per-pixel hypothesis windows from the previous (coarser) level's depth:
/// the ladder indices within `envelope_steps` of the upsampled predecessor
/// value. Pixels whose predecessor is invalid keep the full ladder.
fn envelope_windows(
    predecessor: &DepthMap,
    predecessor_factor: u32,
    factor: u32,
    hypotheses: &DepthHypotheses,
    envelope_steps: u32,
    width: u32,
    height: u32,
) -> HypothesisWindows {
    let depth_count = hypotheses.len() as u32;
    let mut windows = HypothesisWindows::full(width, height, depth_count);
    let values = hypotheses.values();
    let z_min = values[0];
    let step = if values.len() > 1 {
        (values[values.len() - 1] - z_min) / (values.len() - 1) as f64
    } else {
        1.0
    };
    let (coarse_w, coarse_h) = predecessor.size();
    let ratio = factor as f64 / predecessor_factor as f64;
    for y in 0..height {
        let cy = (((y as f64 + 0.5) * ratio) as u32).min(coarse_h - 1);
        for x in 0..width {
            let cx = (((x as f64 + 0.5) * ratio) as u32).min(coarse_w - 1);
            if !predecessor.is_valid(cx, cy) {
                continue;
            }
            let center = ((predecessor.value_at(cx, cy) - z_min) / step)
                .round()
                .clamp(0.0, (depth_count - 1) as f64) as u32;
            let lo = center.saturating_sub(envelope_steps);
            let hi = (center + envelope_steps + 1).min(depth_count);
            windows.set_range(x, y, lo, hi);
        }
    }
    windows
}

/// Matches the reference view against the query views coarse-to-fine.
///
/// Inputs are first band-limited with a small Gaussian (see
/// [`DEFAULT_PRESMOOTH_SIGMA_PX`]) so that resampling noise cannot bias the
/// hypothesis search. Each level downscales images (box average) and cameras, sizes a linear
/// hypothesis ladder over `[z_min, z_max]` via [`hypothesis_step`], sweeps
/// the views into a cost volume (windowed around the previous level's
/// depths after the first level), smooths it with [`sgm`], and extracts
/// sub-step depths. Coarser levels than `feature_switch_level` always use
/// built-in patch descriptors with cosine similarity; at and below it the
/// supplied `mode` and `features` take over, with the smoothing penalties
/// scaled by [`LEARNED_PENALTY_SCALE`]. Levels whose volume exceeds the
/// memory cap stream row-fused with bit-identical results.
pub fn pyramid_match(
    request: &MatchRequest<'_>,
    pyramid: &PyramidConfig,
    sgm_config: &SgmConfig,
    mode: SimilarityMode<'_>,
    features: Option<&FeatureProvider<'_>>,
) -> Result<DepthMap> {
    pyramid.validate()?;
    sgm_config.validate()?;
    if !(request.z_min.is_finite() && request.z_max.is_finite() && request.z_min < request.z_max)
    {
        return Err(RegularizeError::InvalidPyramid(format!(
            "search range [{}, {}] is not a proper interval",
            request.z_min, request.z_max
        )));
    }
    if request.queries.is_empty() {
        return Err(crate::planesweep::SweepError::EmptyViewList.into());
    }
    for view in std::iter::once(request.reference).chain(request.queries) {
        if view.image.size() != view.camera.size() {
            return Err(RegularizeError::SizeMismatch {
                expected: view.camera.size(),
                got: view.image.size(),
            });
        }
        for &factor in &pyramid.levels {
            let (w, h) = view.image.size();
            if w % factor != 0 || h % factor != 0 {
                return Err(RegularizeError::InvalidPyramid(format!(
                    "image size {w}x{h} is not divisible by pyramid factor {factor}"
                )));
            }
        }
    }

    let reference_native = request.reference.image.smooth(pyramid.presmooth_sigma_px);
    let query_natives: Vec<Image2D> = request
        .queries
        .iter()
        .map(|view| view.image.smooth(pyramid.presmooth_sigma_px))
        .collect();

    let mut predecessor: Option<(DepthMap, u32)> = None;
    for &factor in &pyramid.levels {
        let reference_image = reference_native.downscale(factor)?;
        let reference_camera = request.reference.camera.downscaled(factor)?;
        let mut query_images = Vec::with_capacity(request.queries.len());
        let mut query_cameras = Vec::with_capacity(request.queries.len());
        for (view, image) in request.queries.iter().zip(&query_natives) {
            query_images.push(image.downscale(factor)?);
            query_cameras.push(view.camera.downscaled(factor)?);
        }
        let (width, height) = reference_camera.size();

        let camera_refs: Vec<&CameraPinhole> = query_cameras.iter().collect();
        let step = hypothesis_step(
            &reference_camera,
            &camera_refs,
            request.kind,
            request.z_min,
            request.z_max,
            pyramid.step_px,
        )?;
        let count = (((request.z_max - request.z_min) / step).ceil() as usize + 1)
            .clamp(2, MAX_HYPOTHESES);
        let hypotheses = DepthHypotheses::linear(request.kind, request.z_min, request.z_max, count)?;

        let engaged = factor <= pyramid.feature_switch_level;
        let provider = if engaged { features } else { None };
        let level_mode = if engaged { mode } else { SimilarityMode::Cosine };
        let learned = provider.is_some() || matches!(level_mode, SimilarityMode::Mlp(_));
        let level_sgm = if learned {
            sgm_config.scaled(LEARNED_PENALTY_SCALE)
        } else {
            sgm_config.clone()
        };

        let features_for = |index: usize, image: &Image2D, camera: &CameraPinhole| match provider
        {
            Some(f) => Ok(f(index, image, camera)?),
            None => builtin_features(image),
        };
        let reference_features = features_for(0, &reference_image, &reference_camera)?;
        let mut views = Vec::with_capacity(query_images.len());
        for (i, (image, camera)) in query_images.iter().zip(&query_cameras).enumerate() {
            views.push(QueryView {
                camera: camera.clone(),
                features: features_for(i + 1, image, camera)?,
            });
        }

        let windows = predecessor.as_ref().map(|(previous, previous_factor)| {
            envelope_windows(
                previous,
                *previous_factor,
                factor,
                &hypotheses,
                pyramid.envelope_steps,
                width,
                height,
            )
        });

        let level_map = if CostVolume::memory_bytes(width, height, count)
            <= pyramid.memory_cap_bytes
        {
            let volume = build_cost_volume(
                &reference_camera,
                &reference_features,
                &views,
                &hypotheses,
                level_mode,
                windows.as_ref(),
            )?;
            extract_depth(&sgm(&volume, &level_sgm)?, pyramid.subpixel)
        } else {
            let producer = CostProducer::new(
                &reference_camera,
                &reference_features,
                &views,
                &hypotheses,
                level_mode,
                windows.as_ref(),
            )?;
            match_streamed(&producer, &level_sgm, pyramid.subpixel)?
        };
        log::debug!(
            "pyramid level /{factor}: {width}x{height}, {count} hypotheses, {} valid",
            level_map.valid_count()
        );
        predecessor = Some((level_map, factor));
    }
    Ok(predecessor.expect("levels validated non-empty").0)
}
