//! Plane-sweep similarity aggregation: backproject every reference pixel
//! onto a ladder of depth hypotheses, sample each query view's features at
//! the reprojected positions, score the pairs, and average the scores into a
//! matching-cost volume.
//!
//! The separable operations ([`build_grid`], [`sample_features`],
//! [`similarity_map`], [`aggregate_scores`], [`score_to_cost`]) define the
//! semantics one stage at a time; [`build_cost_volume`] fuses them into a
//! single per-pixel pass that produces identical numbers (the fused loop
//! accumulates views in the same order), which the tests pin down.

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::FeatureMap;
use crate::geometry::{CameraPinhole, DepthSpec, GeometryError};
use crate::simlearn::{mlp_forward, LearnError, MlpParams};

/// Cost stored in cells no view could score. Far above the defined range
/// `[0, 1]`, so regularization treats such cells as strongly disfavored.
pub const UNDEFINED_COST: f64 = 10.0;

/// Query-frame margin (pixels) a reprojection must keep to count as
/// sampleable; one pixel guarantees full bilinear support.
pub const SAMPLING_MARGIN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no query views supplied")]
    EmptyViewList,
    #[error("hypothesis ladder is empty")]
    EmptyHypotheses,
    #[error("hypothesis values must be finite and strictly increasing")]
    NonMonotonicHypotheses,
    #[error("ray-depth hypotheses must be positive, got {0}")]
    InvalidRayDepth(f64),
    #[error("size mismatch: expected {expected:?}, got {got:?}")]
    SizeMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("feature channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: u32, got: u32 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("window [{lo}, {hi}) at pixel ({x}, {y}) exceeds depth count {depth_count}")]
    BadWindow {
        x: u32,
        y: u32,
        lo: u32,
        hi: u32,
        depth_count: u32,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

pub type Result<T> = std::result::Result<T, SweepError>;

/// Whether hypothesis values are depths along the viewing ray or world-z
/// elevations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeKind {
    Ray,
    Elevation,
}

/// Strictly increasing ladder of depth hypotheses, all of one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    kind: RangeKind,
    values: Vec<f64>,
}

impl DepthHypotheses {
    pub fn new(kind: RangeKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SweepError::EmptyHypotheses);
        }
        if values.iter().any(|v| !v.is_finite())
            || values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SweepError::NonMonotonicHypotheses);
        }
        if kind == RangeKind::Ray && values[0] <= crate::geometry::MIN_RAY_DEPTH {
            return Err(SweepError::InvalidRayDepth(values[0]));
        }
        Ok(Self { kind, values })
    }

    /// Evenly spaced ladder over `[min, max]`, endpoints included.
    pub fn linear(kind: RangeKind, min: f64, max: f64, count: usize) -> Result<Self> {
        let values = if count == 1 {
            vec![min]
        } else {
            (0..count)
                .map(|i| min + i as f64 * (max - min) / (count - 1) as f64)
                .collect()
        };
        Self::new(kind, values)
    }

    pub fn kind(&self) -> RangeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn spec(&self, index: usize) -> DepthSpec {
        match self.kind {
            RangeKind::Ray => DepthSpec::Ray(self.values[index]),
            RangeKind::Elevation => DepthSpec::Elevation(self.values[index]),
        }
    }

    /// Spacing between adjacent hypotheses around `index`.
    pub fn step_at(&self, index: usize) -> f64 {
        if self.values.len() < 2 {
            return 0.0;
        }
        if index + 1 < self.values.len() {
            self.values[index + 1] - self.values[index]
        } else {
            self.values[index] - self.values[index - 1]
        }
    }
}

/// One query view: its calibrated camera and the features to sample.
#[derive(Debug, Clone)]
pub struct QueryView {
    pub camera: CameraPinhole,
    pub features: FeatureMap,
}

/// Per-reference-pixel sampling positions in one query view for a single
/// hypothesis. Cells are valid only when the reprojection succeeded and
/// kept [`SAMPLING_MARGIN`] inside the query frame.
#[derive(Debug, Clone)]
pub struct SamplingGrid {
    width: u32,
    height: u32,
    xs: Vec<f64>,
    ys: Vec<f64>,
    valid: Vec<bool>,
}

impl SamplingGrid {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[(y * self.width + x) as usize]
    }

    /// Query-image sampling position, `None` for invalid cells.
    pub fn position(&self, x: u32, y: u32) -> Option<(f64, f64)> {
        let i = (y * self.width + x) as usize;
        self.valid[i].then(|| (self.xs[i], self.ys[i]))
    }
}

/// Computes where reference pixel `(x, y)` lands in the query view when the
/// scene is assumed to lie at `hypothesis`. Pixels whose rays degenerate or
/// land outside the query margin become invalid cells.
pub fn build_grid(
    reference: &CameraPinhole,
    query: &CameraPinhole,
    hypothesis: DepthSpec,
) -> SamplingGrid {
    let (width, height) = reference.size();
    let n = width as usize * height as usize;
    let mut grid = SamplingGrid {
        width,
        height,
        xs: vec![0.0; n],
        ys: vec![0.0; n],
        valid: vec![false; n],
    };
    for y in 0..height {
        for x in 0..width {
            let i = (y * width + x) as usize;
            let pixel = Vector2::new(x as f64, y as f64);
            let Ok(world) = reference.backproject(pixel, hypothesis) else {
                continue;
            };
            let Ok(projection) = query.project(&world) else {
                continue;
            };
            if !query.in_frame(projection.pixel, SAMPLING_MARGIN) {
                continue;
            }
            grid.xs[i] = projection.pixel.x;
            grid.ys[i] = projection.pixel.y;
            grid.valid[i] = true;
        }
    }
    grid
}

/// Bilinearly samples query features at the grid positions, producing a map
/// aligned to the reference raster. Cells invalid in the grid, or whose
/// bilinear support touches invalid query pixels, come out invalid.
pub fn sample_features(query: &FeatureMap, grid: &SamplingGrid) -> FeatureMap {
    let channels = query.channels();
    let mut out = FeatureMap::invalid(grid.width, grid.height, channels, query.unit_normalized());
    let mut sample = vec![0.0; channels as usize];
    for y in 0..grid.height {
        for x in 0..grid.width {
            if let Some((qx, qy)) = grid.position(x, y) {
                if query.sample_bilinear_into(qx, qy, &mut sample) {
                    out.set_vector(x, y, &sample, true);
                }
            }
        }
    }
    out
}

/// Similarity scoring backend.
#[derive(Debug, Clone, Copy)]
pub enum SimilarityMode<'a> {
    /// Re-normalized cosine over descriptor pairs, in `[-1, 1]`.
    Cosine,
    /// Learned MLP score over the concatenated pair, in `(0, 1)`.
    Mlp(&'a MlpParams),
}

impl SimilarityMode<'_> {
    fn validate_channels(&self, channels: u32) -> Result<()> {
        if let SimilarityMode::Mlp(params) = self {
            let expected = params.input_dim();
            if expected != 2 * channels as usize {
                return Err(SweepError::Learn(LearnError::DimensionMismatch {
                    expected,
                    got: 2 * channels as usize,
                }));
            }
        }
        Ok(())
    }
}

/// Scores one descriptor pair. Returns `Ok(None)` when the pair cannot be
/// scored (zero-norm vector under cosine). `concat` must hold `2 * dim`
/// scratch values for the MLP path.
fn similarity_value(
    mode: &SimilarityMode,
    a: &[f64],
    b: &[f64],
    concat: &mut [f64],
) -> Result<Option<f64>> {
    match mode {
        SimilarityMode::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (&x, &y) in a.iter().zip(b) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            let (na, nb) = (na.sqrt(), nb.sqrt());
            if na < 1e-12 || nb < 1e-12 {
                return Ok(None);
            }
            Ok(Some(dot / (na * nb)))
        }
        SimilarityMode::Mlp(params) => {
            let dim = a.len();
            concat[..dim].copy_from_slice(a);
            concat[dim..].copy_from_slice(b);
            Ok(Some(mlp_forward(params, concat)?))
        }
    }
}

/// Per-pixel similarity between two aligned feature maps. Pixels invalid in
/// either map (or unscorable pairs) come out invalid with score 0.
pub fn similarity_map(
    reference: &FeatureMap,
    sampled: &FeatureMap,
    mode: &SimilarityMode,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if reference.size() != sampled.size() {
        return Err(SweepError::SizeMismatch {
            expected: reference.size(),
            got: sampled.size(),
        });
    }
    if reference.channels() != sampled.channels() {
        return Err(SweepError::ChannelMismatch {
            expected: reference.channels(),
            got: sampled.channels(),
        });
    }
    mode.validate_channels(reference.channels())?;
    let n = reference.len();
    let mut scores = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut concat = vec![0.0; 2 * reference.channels() as usize];
    for y in 0..reference.height() {
        for x in 0..reference.width() {
            if !reference.is_valid(x, y) || !sampled.is_valid(x, y) {
                continue;
            }
            let i = reference.pixel_index(x, y);
            if let Some(s) = similarity_value(
                mode,
                reference.vector_at(x, y),
                sampled.vector_at(x, y),
                &mut concat,
            )? {
                scores[i] = s;
                valid[i] = true;
            }
        }
    }
    Ok((scores, valid))
}

/// Averages per-view similarity maps pixel-wise over the views that scored
/// each pixel. Returns the mean scores and the contributing-view counts
/// (mean is 0 where the count is 0).
pub fn aggregate_scores(views: &[(Vec<f64>, Vec<bool>)]) -> Result<(Vec<f64>, Vec<u32>)> {
    let Some(first) = views.first() else {
        return Err(SweepError::EmptyViewList);
    };
    let n = first.0.len();
    for (scores, valid) in views {
        if scores.len() != n || valid.len() != n {
            return Err(SweepError::LengthMismatch {
                expected: n,
                got: scores.len().min(valid.len()),
            });
        }
    }
    let mut sums = vec![0.0; n];
    let mut counts = vec![0u32; n];
    for (scores, valid) in views {
        for i in 0..n {
            if valid[i] {
                sums[i] += scores[i];
                counts[i] += 1;
            }
        }
    }
    for i in 0..n {
        if counts[i] > 0 {
            sums[i] /= counts[i] as f64;
        }
    }
    Ok((sums, counts))
}

/// Maps an aggregated similarity to a matching cost in `[0, 1]`:
/// `1 - s` for MLP scores (already in `(0, 1)`), `(1 - s) / 2` for cosine
/// scores (in `[-1, 1]`), clamped in either case.
pub fn score_to_cost(mode: &SimilarityMode, score: f64) -> f64 {
    let cost = match mode {
        SimilarityMode::Mlp(_) => 1.0 - score,
        SimilarityMode::Cosine => (1.0 - score) / 2.0,
    };
    cost.clamp(0.0, 1.0)
}

/// Optional per-pixel restriction of the hypothesis ladder: half-open index
/// ranges `[lo, hi)` into the ladder; cells outside stay undefined and cost
/// no work.
#[derive(Debug, Clone)]
pub struct HypothesisWindows {
    width: u32,
    height: u32,
    ranges: Vec<(u32, u32)>,
}

impl HypothesisWindows {
    /// Unrestricted windows covering the whole ladder.
    pub fn full(width: u32, height: u32, depth_count: u32) -> Self {
        Self {
            width,
            height,
            ranges: vec![(0, depth_count); width as usize * height as usize],
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

    pub fn range(&self, x: u32, y: u32) -> (u32, u32) {
        self.ranges[(y * self.width + x) as usize]
    }

    pub fn set_range(&mut self, x: u32, y: u32, lo: u32, hi: u32) {
        self.ranges[(y * self.width + x) as usize] = (lo, hi);
    }
}

/// Validated inputs for cost computation, able to fill any raster row. The
/// pyramid driver uses this directly to stream rows without materializing a
/// full volume.
pub(crate) struct CostProducer<'a> {
    reference: &'a CameraPinhole,
    reference_features: &'a FeatureMap,
    views: &'a [QueryView],
    hypotheses: &'a DepthHypotheses,
    mode: SimilarityMode<'a>,
    windows: Option<&'a HypothesisWindows>,
}

impl<'a> CostProducer<'a> {
    pub(crate) fn new(
        reference: &'a CameraPinhole,
        reference_features: &'a FeatureMap,
        views: &'a [QueryView],
        hypotheses: &'a DepthHypotheses,
        mode: SimilarityMode<'a>,
        windows: Option<&'a HypothesisWindows>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(SweepError::EmptyViewList);
        }
        if reference_features.size() != reference.size() {
            return Err(SweepError::SizeMismatch {
                expected: reference.size(),
                got: reference_features.size(),
            });
        }
        let channels = reference_features.channels();
        for view in views {
            if view.features.size() != view.camera.size() {
                return Err(SweepError::SizeMismatch {
                    expected: view.camera.size(),
                    got: view.features.size(),
                });
            }
            if view.features.channels() != channels {
                return Err(SweepError::ChannelMismatch {
                    expected: channels,
                    got: view.features.channels(),
                });
            }
        }
        mode.validate_channels(channels)?;
        if let Some(w) = windows {
            if w.size() != reference.size() {
                return Err(SweepError::SizeMismatch {
                    expected: reference.size(),
                    got: w.size(),
                });
            }
            let depth_count = hypotheses.len() as u32;
            for y in 0..w.height() {
                for x in 0..w.width() {
                    let (lo, hi) = w.range(x, y);
                    if lo > hi || hi > depth_count {
                        return Err(SweepError::BadWindow {
                            x,
                            y,
                            lo,
                            hi,
                            depth_count,
                        });
                    }
                }
            }
        }
        Ok(Self {
            reference,
            reference_features,
            views,
            hypotheses,
            mode,
            windows,
        })
    }

    pub(crate) fn width(&self) -> u32 {
        self.reference.size().0
    }

    pub(crate) fn height(&self) -> u32 {
        self.reference.size().1
    }

    pub(crate) fn depth_count(&self) -> usize {
        self.hypotheses.len()
    }

    pub(crate) fn hypotheses(&self) -> &DepthHypotheses {
        self.hypotheses
    }

    /// Cost layout length of one raster row.
    pub(crate) fn row_len(&self) -> usize {
        self.width() as usize * self.depth_count()
    }

    /// Fills row `y`: `costs` and `defined` must each hold
    /// `width * depth_count` cells laid out `[x][d]`.
    pub(crate) fn fill_row(&self, y: u32, costs: &mut [f64], defined: &mut [bool]) -> Result<()> {
        let width = self.width();
        let depth_count = self.depth_count();
        assert_eq!(costs.len(), self.row_len());
        assert_eq!(defined.len(), self.row_len());
        costs.fill(UNDEFINED_COST);
        defined.fill(false);
        let channels = self.reference_features.channels() as usize;
        let mut sampled = vec![0.0; channels];
        let mut concat = vec![0.0; 2 * channels];
        for x in 0..width {
            if !self.reference_features.is_valid(x, y) {
                continue;
            }
            let anchor = self.reference_features.vector_at(x, y);
            let (lo, hi) = self
                .windows
                .map_or((0, depth_count as u32), |w| w.range(x, y));
            let pixel = Vector2::new(x as f64, y as f64);
            for d in lo as usize..hi as usize {
                let Ok(world) = self.reference.backproject(pixel, self.hypotheses.spec(d)) else {
                    continue;
                };
                let mut sum = 0.0;
                let mut count = 0u32;
                for view in self.views {
                    let Ok(projection) = view.camera.project(&world) else {
                        continue;
                    };
                    if !view.camera.in_frame(projection.pixel, SAMPLING_MARGIN) {
                        continue;
                    }
                    if !view.features.sample_bilinear_into(
                        projection.pixel.x,
                        projection.pixel.y,
                        &mut sampled,
                    ) {
                        continue;
                    }
                    if let Some(s) = similarity_value(&self.mode, anchor, &sampled, &mut concat)? {
                        sum += s;
                        count += 1;
                    }
                }
                if count > 0 {
                    let cell = x as usize * depth_count + d;
                    costs[cell] = score_to_cost(&self.mode, sum / count as f64);
                    defined[cell] = true;
                }
            }
        }
        Ok(())
    }
}

/// Matching-cost volume over the reference raster: cell `(x, y, d)` holds
/// the cost of hypothesis `d` at pixel `(x, y)`, stored depth-contiguous
/// (`(y * width + x) * depth_count + d`). Undefined cells carry
/// [`UNDEFINED_COST`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: u32,
    height: u32,
    hypotheses: DepthHypotheses,
    costs: Vec<f64>,
    defined: Vec<bool>,
}

impl CostVolume {
    pub fn new(width: u32, height: u32, hypotheses: DepthHypotheses) -> Self {
        let n = width as usize * height as usize * hypotheses.len();
        Self {
            width,
            height,
            hypotheses,
            costs: vec![UNDEFINED_COST; n],
            defined: vec![false; n],
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

    pub fn depth_count(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn hypotheses(&self) -> &DepthHypotheses {
        &self.hypotheses
    }

    fn cell(&self, x: u32, y: u32, d: usize) -> usize {
        ((y * self.width + x) as usize) * self.depth_count() + d
    }

    pub fn cost_at(&self, x: u32, y: u32, d: usize) -> f64 {
        self.costs[self.cell(x, y, d)]
    }

    pub fn defined_at(&self, x: u32, y: u32, d: usize) -> bool {
        self.defined[self.cell(x, y, d)]
    }

    pub fn set_cell(&mut self, x: u32, y: u32, d: usize, cost: f64) {
        let i = self.cell(x, y, d);
        self.costs[i] = cost;
        self.defined[i] = true;
    }

    /// Per-pixel cost slice over all hypotheses.
    pub fn cost_slice(&self, x: u32, y: u32) -> &[f64] {
        let base = self.cell(x, y, 0);
        &self.costs[base..base + self.depth_count()]
    }

    pub fn defined_slice(&self, x: u32, y: u32) -> &[bool] {
        let base = self.cell(x, y, 0);
        &self.defined[base..base + self.depth_count()]
    }

    pub fn pixel_defined_count(&self, x: u32, y: u32) -> usize {
        self.defined_slice(x, y).iter().filter(|&&d| d).count()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn defined(&self) -> &[bool] {
        &self.defined
    }

    pub(crate) fn costs_mut(&mut self) -> &mut [f64] {
        &mut self.costs
    }

    pub(crate) fn defined_mut(&mut self) -> &mut [bool] {
        &mut self.defined
    }

    /// Debug export: the volume as a feature map with one channel per
    /// hypothesis (same memory layout), pixel validity = any defined cell.
    pub fn to_feature_map(&self) -> FeatureMap {
        let depth_count = self.depth_count();
        let valid: Vec<bool> = self
            .defined
            .chunks(depth_count)
            .map(|cells| cells.iter().any(|&d| d))
            .collect();
        FeatureMap::new(
            self.width,
            self.height,
            depth_count as u32,
            self.costs.clone(),
            valid,
            false,
        )
    }

    /// In-memory footprint of the cost and defined lattices, in bytes.
    pub fn memory_bytes(width: u32, height: u32, depth_count: usize) -> usize {
        let cells = width as usize * height as usize * depth_count;
        cells * (std::mem::size_of::<f64>() + std::mem::size_of::<bool>())
    }
}

/// Builds the full matching-cost volume: for every pixel and every
/// (windowed) hypothesis, the mean similarity over the query views that
/// could score it, mapped through [`score_to_cost`]. Rows are filled in
/// parallel; the result is independent of thread count.
pub fn build_cost_volume(
    reference: &CameraPinhole,
    reference_features: &FeatureMap,
    views: &[QueryView],
    hypotheses: &DepthHypotheses,
    mode: SimilarityMode,
    windows: Option<&HypothesisWindows>,
) -> Result<CostVolume> {
    let producer = CostProducer::new(
        reference,
        reference_features,
        views,
        hypotheses,
        mode,
        windows,
    )?;
    let mut volume = CostVolume::new(producer.width(), producer.height(), hypotheses.clone());
    let row_len = producer.row_len();
    volume
        .costs
        .par_chunks_mut(row_len)
        .zip(volume.defined.par_chunks_mut(row_len))
        .enumerate()
        .try_for_each(|(y, (costs, defined))| producer.fill_row(y as u32, costs, defined))?;
    Ok(volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::nadir_camera;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    /// Rig used throughout: reference at the origin, one query `baseline`
    /// east, both straight down from `altitude`.
    fn nadir_pair(
        width: u32,
        height: u32,
        focal: f64,
        altitude: f64,
        baseline: f64,
    ) -> (CameraPinhole, CameraPinhole) {
        let reference = nadir_camera(width, height, focal, altitude);
        let query = CameraPinhole::new(
            focal,
            reference.principal_point(),
            *reference.rotation(),
            Vector3::new(baseline, 0.0, altitude),
            width,
            height,
        )
        .unwrap();
        (reference, query)
    }

    fn smooth_map(width: u32, height: u32, channels: u32, phase: f64) -> FeatureMap {
        let mut map = FeatureMap::invalid(width, height, channels, false);
        let mut vector = vec![0.0; channels as usize];
        for y in 0..height {
            for x in 0..width {
                for (c, v) in vector.iter_mut().enumerate() {
                    *v = ((x as f64 * 0.37 + c as f64) + phase).sin()
                        + (y as f64 * 0.23 - c as f64 * 0.5).cos();
                }
                map.set_vector(x, y, &vector, true);
            }
        }
        map
    }

    #[test]
    fn hypothesis_ladder_is_validated() {
        assert!(matches!(
            DepthHypotheses::new(RangeKind::Ray, vec![]),
            Err(SweepError::EmptyHypotheses)
        ));
        assert!(matches!(
            DepthHypotheses::new(RangeKind::Ray, vec![1.0, 1.0]),
            Err(SweepError::NonMonotonicHypotheses)
        ));
        assert!(matches!(
            DepthHypotheses::new(RangeKind::Ray, vec![0.0, 1.0]),
            Err(SweepError::InvalidRayDepth(_))
        ));
        // Elevations may be negative.
        let elev = DepthHypotheses::new(RangeKind::Elevation, vec![-5.0, 0.0, 5.0]).unwrap();
        assert_eq!(elev.len(), 3);
        let lin = DepthHypotheses::linear(RangeKind::Ray, 10.0, 20.0, 5).unwrap();
        assert_eq!(lin.values(), &[10.0, 12.5, 15.0, 17.5, 20.0]);
        assert_relative_eq!(lin.step_at(0), 2.5);
        assert_relative_eq!(lin.step_at(4), 2.5);
    }

    /// For a nadir pair with baseline B at altitude H, a flat plane at
    /// elevation E maps reference pixel x to query pixel
    /// `x - f * B / (H - E)` on the same row.
    #[test]
    fn grid_matches_flat_plane_disparity_oracle() {
        let (reference, query) = nadir_pair(64, 32, 100.0, 50.0, 2.0);
        let elevation = 10.0;
        let disparity = 100.0 * 2.0 / (50.0 - 10.0); // 5 px
        let grid = build_grid(&reference, &query, DepthSpec::Elevation(elevation));
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..64 {
                let Some((qx, qy)) = grid.position(x, y) else {
                    continue;
                };
                assert_relative_eq!(qx, x as f64 - disparity, epsilon = 1e-9);
                assert_relative_eq!(qy, y as f64, epsilon = 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 1000);
        // Pixels whose reprojection would leave the margin are invalid:
        // x - 5 >= 1 requires x >= 6.
        assert!(!grid.is_valid(5, 10));
        assert!(grid.is_valid(6, 10));
    }

    #[test]
    fn sample_features_reads_exactly_where_the_grid_points() {
        let (reference, query) = nadir_pair(32, 8, 100.0, 50.0, 2.0);
        // Disparity 4 px at elevation 0: query features shifted by -4.
        let mut query_features = FeatureMap::invalid(32, 8, 1, false);
        for y in 0..8 {
            for x in 0..32 {
                query_features.set_vector(x, y, &[x as f64 * 10.0 + y as f64], true);
            }
        }
        let grid = build_grid(&reference, &query, DepthSpec::Elevation(0.0));
        let sampled = sample_features(&query_features, &grid);
        for y in 0..8 {
            for x in 0..32 {
                if grid.is_valid(x, y) {
                    assert!(sampled.is_valid(x, y));
                    assert_relative_eq!(
                        sampled.vector_at(x, y)[0],
                        (x as f64 - 4.0) * 10.0 + y as f64,
                        epsilon = 1e-9
                    );
                } else {
                    assert!(!sampled.is_valid(x, y));
                }
            }
        }
    }

    #[test]
    fn cosine_similarity_matches_dot_oracle_and_flags_zero_vectors() {
        let mut a = FeatureMap::invalid(4, 1, 3, true);
        let mut b = FeatureMap::invalid(4, 1, 3, true);
        a.set_vector(0, 0, &[1.0, 0.0, 0.0], true);
        b.set_vector(0, 0, &[0.6, 0.8, 0.0], true);
        a.set_vector(1, 0, &[0.0, 1.0, 0.0], true);
        b.set_vector(1, 0, &[0.0, -1.0, 0.0], true);
        a.set_vector(2, 0, &[0.0, 0.0, 0.0], true); // zero vector
        b.set_vector(2, 0, &[1.0, 0.0, 0.0], true);
        // Pixel 3 invalid in b.
        a.set_vector(3, 0, &[1.0, 0.0, 0.0], true);
        let (scores, valid) = similarity_map(&a, &b, &SimilarityMode::Cosine).unwrap();
        assert_relative_eq!(scores[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(scores[1], -1.0, epsilon = 1e-12);
        assert!(!valid[2], "zero vector cannot be scored");
        assert!(!valid[3], "invalid input pixel cannot be scored");
        assert!(valid[0] && valid[1]);
    }

    #[test]
    fn aggregation_means_over_scoring_views_only() {
        let views = vec![
            (vec![0.8, 0.2, 0.5], vec![true, true, false]),
            (vec![0.4, 0.0, 0.1], vec![true, false, false]),
        ];
        let (means, counts) = aggregate_scores(&views).unwrap();
        assert_relative_eq!(means[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(means[1], 0.2, epsilon = 1e-12);
        assert_eq!(counts, vec![2, 1, 0]);
        assert_eq!(means[2], 0.0);

        // Permutation invariance within summation tolerance.
        let swapped = vec![views[1].clone(), views[0].clone()];
        let (means_swapped, counts_swapped) = aggregate_scores(&swapped).unwrap();
        assert_eq!(counts, counts_swapped);
        for (a, b) in means.iter().zip(&means_swapped) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn score_to_cost_formulas_and_clamping() {
        let params = MlpParams::new(vec![2, 1], 0).unwrap();
        let mlp = SimilarityMode::Mlp(&params);
        assert_relative_eq!(score_to_cost(&mlp, 0.75), 0.25, epsilon = 1e-15);
        assert_relative_eq!(score_to_cost(&SimilarityMode::Cosine, 1.0), 0.0);
        assert_relative_eq!(score_to_cost(&SimilarityMode::Cosine, -1.0), 1.0);
        assert_relative_eq!(score_to_cost(&SimilarityMode::Cosine, 0.0), 0.5);
        // Out-of-range scores clamp into [0, 1].
        assert_eq!(score_to_cost(&SimilarityMode::Cosine, -3.0), 1.0);
        assert_eq!(score_to_cost(&mlp, 2.0), 0.0);
    }

    /// The fused volume builder must agree with the composition of the
    /// separable operations bit for bit (same arithmetic in the same order).
    #[test]
    fn fused_volume_equals_ops_composition() {
        let (reference, query_east) = nadir_pair(24, 12, 60.0, 40.0, 1.5);
        let query_west = CameraPinhole::new(
            60.0,
            reference.principal_point(),
            *reference.rotation(),
            Vector3::new(-1.0, 0.3, 40.0),
            24,
            12,
        )
        .unwrap();
        let reference_features = smooth_map(24, 12, 3, 0.0);
        let views = vec![
            QueryView {
                camera: query_east,
                features: smooth_map(24, 12, 3, 0.4),
            },
            QueryView {
                camera: query_west,
                features: smooth_map(24, 12, 3, 1.1),
            },
        ];
        let hypotheses = DepthHypotheses::linear(RangeKind::Elevation, 0.0, 12.0, 7).unwrap();
        let volume = build_cost_volume(
            &reference,
            &reference_features,
            &views,
            &hypotheses,
            SimilarityMode::Cosine,
            None,
        )
        .unwrap();

        for d in 0..hypotheses.len() {
            let per_view: Vec<(Vec<f64>, Vec<bool>)> = views
                .iter()
                .map(|view| {
                    let grid = build_grid(&reference, &view.camera, hypotheses.spec(d));
                    let sampled = sample_features(&view.features, &grid);
                    similarity_map(&reference_features, &sampled, &SimilarityMode::Cosine).unwrap()
                })
                .collect();
            let (means, counts) = aggregate_scores(&per_view).unwrap();
            for y in 0..12 {
                for x in 0..24 {
                    let i = (y * 24 + x) as usize;
                    if counts[i] > 0 {
                        assert!(volume.defined_at(x, y, d));
                        let expected = score_to_cost(&SimilarityMode::Cosine, means[i]);
                        assert_eq!(volume.cost_at(x, y, d), expected, "cell ({x},{y},{d})");
                    } else {
                        assert!(!volume.defined_at(x, y, d));
                        assert_eq!(volume.cost_at(x, y, d), UNDEFINED_COST);
                    }
                }
            }
        }
    }

    /// A query image that is an exact integer-shifted copy of the reference
    /// makes the true elevation's cost exactly zero (cosine 1).
    #[test]
    fn cost_minimum_sits_at_the_true_elevation() {
        let width = 48;
        let height = 16;
        let focal = 96.0;
        let altitude = 50.0;
        let baseline = 2.0;
        let (reference, query) = nadir_pair(width, height, focal, altitude, baseline);
        let mut image = crate::image::Image2D::new(
            width,
            height,
            (0..width as usize * height as usize)
                .map(|i| {
                    let (x, y) = ((i % width as usize) as f64, (i / width as usize) as f64);
                    0.5 + 0.2 * (x * 0.41).sin() + 0.15 * (y * 0.31 + x * 0.17).cos()
                })
                .collect(),
        );
        image
            .pixels_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, 1.0));
        let mut shifted = crate::image::Image2D::filled(width, height, 0.0);
        for y in 0..height {
            for x in 0..width {
                let sx = x + 4;
                if sx < width {
                    shifted.set(x, y, image.get(sx, y));
                } else {
                    shifted.set_valid(x, y, false);
                }
            }
        }
        let reference_features = crate::features::extract_patch_descriptors(&image, 1).unwrap();
        let query_features = crate::features::extract_patch_descriptors(&shifted, 1).unwrap();
        let views = vec![QueryView {
            camera: query,
            features: query_features,
        }];
        // Five hypotheses bracketing the truth, 1 px of disparity apart.
        let values: Vec<f64> = (2..=6)
            .map(|d| altitude - focal * baseline / d as f64)
            .collect();
        let hypotheses = DepthHypotheses::new(RangeKind::Elevation, values).unwrap();
        let volume = build_cost_volume(
            &reference,
            &reference_features,
            &views,
            &hypotheses,
            SimilarityMode::Cosine,
            None,
        )
        .unwrap();
        let true_index = 2; // d = 4 in (2..=6)
        let mut checked = 0;
        for y in 2..height - 2 {
            for x in 10..width - 10 {
                if volume.pixel_defined_count(x, y) < hypotheses.len() {
                    continue;
                }
                let slice = volume.cost_slice(x, y);
                let argmin = slice
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(argmin, true_index, "pixel ({x},{y}): {slice:?}");
                assert!(slice[true_index] < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn windows_skip_cells_and_match_the_full_run_inside() {
        let (reference, query) = nadir_pair(24, 12, 60.0, 40.0, 1.5);
        let reference_features = smooth_map(24, 12, 2, 0.0);
        let views = vec![QueryView {
            camera: query,
            features: smooth_map(24, 12, 2, 0.7),
        }];
        let hypotheses = DepthHypotheses::linear(RangeKind::Elevation, 0.0, 12.0, 9).unwrap();
        let full = build_cost_volume(
            &reference,
            &reference_features,
            &views,
            &hypotheses,
            SimilarityMode::Cosine,
            None,
        )
        .unwrap();
        let mut windows = HypothesisWindows::full(24, 12, 9);
        for y in 0..12 {
            for x in 0..24 {
                let lo = (x % 5) as u32;
                windows.set_range(x, y, lo, lo + 3);
            }
        }
        let windowed = build_cost_volume(
            &reference,
            &reference_features,
            &views,
            &hypotheses,
            SimilarityMode::Cosine,
            Some(&windows),
        )
        .unwrap();
        for y in 0..12 {
            for x in 0..24 {
                let (lo, hi) = windows.range(x, y);
                for d in 0..9 {
                    if (d as u32) >= lo && (d as u32) < hi {
                        assert_eq!(windowed.cost_at(x, y, d), full.cost_at(x, y, d));
                        assert_eq!(windowed.defined_at(x, y, d), full.defined_at(x, y, d));
                    } else {
                        assert!(!windowed.defined_at(x, y, d));
                        assert_eq!(windowed.cost_at(x, y, d), UNDEFINED_COST);
                    }
                }
            }
        }
    }

    #[test]
    fn mlp_mode_produces_costs_in_unit_range() {
        let (reference, query) = nadir_pair(16, 8, 40.0, 30.0, 1.0);
        let reference_features = smooth_map(16, 8, 2, 0.0);
        let views = vec![QueryView {
            camera: query,
            features: smooth_map(16, 8, 2, 0.5),
        }];
        let hypotheses = DepthHypotheses::linear(RangeKind::Elevation, 0.0, 8.0, 4).unwrap();
        let params = MlpParams::new(vec![4, 4, 2, 1], 8).unwrap();
        let volume = build_cost_volume(
            &reference,
            &reference_features,
            &views,
            &hypotheses,
            SimilarityMode::Mlp(&params),
            None,
        )
        .unwrap();
        let mut defined = 0;
        for y in 0..8 {
            for x in 0..16 {
                for d in 0..4 {
                    if volume.defined_at(x, y, d) {
                        let c = volume.cost_at(x, y, d);
                        assert!((0.0..=1.0).contains(&c));
                        defined += 1;
                    }
                }
            }
        }
        assert!(defined > 0);
    }

    #[test]
    fn input_validation_errors() {
        let (reference, query) = nadir_pair(16, 8, 40.0, 30.0, 1.0);
        let reference_features = smooth_map(16, 8, 2, 0.0);
        let hypotheses = DepthHypotheses::linear(RangeKind::Elevation, 0.0, 8.0, 4).unwrap();
        assert!(matches!(
            build_cost_volume(
                &reference,
                &reference_features,
                &[],
                &hypotheses,
                SimilarityMode::Cosine,
                None
            ),
            Err(SweepError::EmptyViewList)
        ));
        let views = vec![QueryView {
            camera: query.clone(),
            features: smooth_map(16, 8, 3, 0.0),
        }];
        assert!(matches!(
            build_cost_volume(
                &reference,
                &reference_features,
                &views,
                &hypotheses,
                SimilarityMode::Cosine,
                None
            ),
            Err(SweepError::ChannelMismatch { .. })
        ));
        let views = vec![QueryView {
            camera: query.clone(),
            features: smooth_map(16, 8, 2, 0.0),
        }];
        let params = MlpParams::new(vec![6, 1], 0).unwrap();
        assert!(matches!(
            build_cost_volume(
                &reference,
                &reference_features,
                &views,
                &hypotheses,
                SimilarityMode::Mlp(&params),
                None
            ),
            Err(SweepError::Learn(LearnError::DimensionMismatch { .. }))
        ));
        let mut windows = HypothesisWindows::full(16, 8, 4);
        windows.set_range(3, 3, 2, 7);
        assert!(matches!(
            build_cost_volume(
                &reference,
                &reference_features,
                &views,
                &hypotheses,
                SimilarityMode::Cosine,
                Some(&windows)
            ),
            Err(SweepError::BadWindow { .. })
        ));
    }

    #[test]
    fn volume_export_shares_layout_with_feature_map() {
        let hypotheses = DepthHypotheses::linear(RangeKind::Ray, 1.0, 2.0, 3).unwrap();
        let mut volume = CostVolume::new(4, 2, hypotheses);
        volume.set_cell(1, 0, 2, 0.25);
        volume.set_cell(3, 1, 0, 0.75);
        let map = volume.to_feature_map();
        assert_eq!(map.channels(), 3);
        assert!(map.is_valid(1, 0));
        assert!(map.is_valid(3, 1));
        assert!(!map.is_valid(0, 0));
        assert_eq!(map.vector_at(1, 0), &[UNDEFINED_COST, UNDEFINED_COST, 0.25]);
    }
}
