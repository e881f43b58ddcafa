//! Ground-truth depth rasters from survey-style point clouds: project the
//! cloud into a camera, discard points hidden by nearer surface (a
//! visibility filter over planar neighborhoods), keep the closest return
//! per pixel, and densify the surviving samples over a triangulation.

mod delaunay;

pub use delaunay::{triangulate, Triangulation};

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraPinhole, GeometryError};
use crate::regularize::DepthMap;

/// Neighborhood size of the visibility filter, query point included.
pub const VISIBILITY_NEIGHBORS: usize = 27;

/// Points with visibility below this are considered occluded. The farthest
/// point of a mixed neighborhood scores exactly `exp(-1)` (about 0.368), so
/// it always falls below this threshold.
pub const VISIBILITY_THRESHOLD: f64 = 0.76;

/// Visibility filtering stops after this many removal rounds even if it has
/// not reached a fixpoint.
pub const MAX_VISIBILITY_ROUNDS: usize = 10;

/// Depth ranges tighter than this count as flat: every point visible.
pub const FLAT_RANGE_EPSILON: f64 = 1e-6;

/// Returns within this distance of a pixel's closest depth are averaged
/// into the selected value (same units as the depths, typically meters).
pub const SELECTION_DEPTH_TOLERANCE: f64 = 0.2;

/// Triangles with any edge longer than this (pixels) are not interpolated.
pub const MAX_TRIANGLE_EDGE_PX: f64 = 30.0;

#[derive(Debug, Error)]
pub enum GroundTruthError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no cloud point projects into the camera frame")]
    NoVisiblePoints,
    #[error("too few samples: needed {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input points are collinear; no triangulation exists")]
    CollinearInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, GroundTruthError>;

/// One cloud point seen by the camera.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedSample {
    /// Index into the original cloud.
    pub index: usize,
    pub pixel: Vector2<f64>,
    /// Depth along the viewing ray.
    pub depth: f64,
}

/// Projects the cloud, keeping points with positive ray depth that land
/// inside the frame.
pub fn project_cloud(camera: &CameraPinhole, cloud: &[Vector3<f64>]) -> Result<Vec<ProjectedSample>> {
    if cloud.is_empty() {
        return Err(GroundTruthError::EmptyCloud);
    }
    let mut samples = Vec::new();
    for (index, point) in cloud.iter().enumerate() {
        let Ok(projection) = camera.project(point) else {
            continue;
        };
        if !camera.in_frame(projection.pixel, 0.0) {
            continue;
        }
        samples.push(ProjectedSample {
            index,
            pixel: projection.pixel,
            depth: projection.depth,
        });
    }
    if samples.is_empty() {
        return Err(GroundTruthError::NoVisiblePoints);
    }
    Ok(samples)
}

/// Visibility-filter settings; defaults match the module constants.
#[derive(Debug, Clone, Copy)]
pub struct VisibilityConfig {
    pub neighbors: usize,
    pub threshold: f64,
    pub max_rounds: usize,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            neighbors: VISIBILITY_NEIGHBORS,
            threshold: VISIBILITY_THRESHOLD,
            max_rounds: MAX_VISIBILITY_ROUNDS,
        }
    }
}

impl VisibilityConfig {
    fn validate(&self) -> Result<()> {
        if self.neighbors < 2 {
            return Err(GroundTruthError::InvalidConfig(
                "visibility neighborhood needs at least 2 points".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(GroundTruthError::InvalidConfig(format!(
                "visibility threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Uniform bucket grid over sample pixel positions for k-nearest queries.
struct BucketGrid {
    min_x: f64,
    min_y: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl BucketGrid {
    fn build(xs: &[f64], ys: &[f64], members: &[u32], target_per_cell: usize) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &i in members {
            min_x = min_x.min(xs[i as usize]);
            min_y = min_y.min(ys[i as usize]);
            max_x = max_x.max(xs[i as usize]);
            max_y = max_y.max(ys[i as usize]);
        }
        let width = (max_x - min_x).max(1e-9);
        let height = (max_y - min_y).max(1e-9);
        let cell = (width * height * target_per_cell as f64 / members.len() as f64)
            .sqrt()
            .max(1e-9);
        let cols = ((width / cell).ceil() as usize + 1).max(1);
        let rows = ((height / cell).ceil() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); cols * rows];
        for &i in members {
            let c = (((xs[i as usize] - min_x) / cell) as usize).min(cols - 1);
            let r = (((ys[i as usize] - min_y) / cell) as usize).min(rows - 1);
            buckets[r * cols + c].push(i);
        }
        Self {
            min_x,
            min_y,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// Indices of the `k` nearest members to `(x, y)` (the query sample
    /// itself included when it is a member). Ties break on index so the
    /// result is deterministic.
    fn k_nearest(&self, xs: &[f64], ys: &[f64], x: f64, y: f64, k: usize) -> Vec<u32> {
        let qc = (((x - self.min_x) / self.cell).floor().max(0.0) as usize).min(self.cols - 1);
        let qr = (((y - self.min_y) / self.cell).floor().max(0.0) as usize).min(self.rows - 1);
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(4 * k);
        let max_ring = self.cols.max(self.rows);
        for ring in 0..=max_ring {
            // Once k candidates are closer than anything an unvisited ring
            // can hold, the search is complete.
            if found.len() >= k {
                let mut dists: Vec<f64> = found.iter().map(|f| f.0).collect();
                dists.sort_by(f64::total_cmp);
                let kth = dists[k - 1];
                let ring_floor = (ring as f64 - 1.0).max(0.0) * self.cell;
                if kth <= ring_floor * ring_floor {
                    break;
                }
            }
            let mut any_cell = false;
            for r in qr.saturating_sub(ring)..=(qr + ring).min(self.rows - 1) {
                for c in qc.saturating_sub(ring)..=(qc + ring).min(self.cols - 1) {
                    let on_ring = r.abs_diff(qr).max(c.abs_diff(qc)) == ring;
                    if !on_ring {
                        continue;
                    }
                    any_cell = true;
                    for &i in &self.buckets[r * self.cols + c] {
                        let dx = xs[i as usize] - x;
                        let dy = ys[i as usize] - y;
                        found.push((dx * dx + dy * dy, i));
                    }
                }
            }
            if !any_cell && found.len() >= k {
                break;
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(k);
        found.into_iter().map(|(_, i)| i).collect()
    }
}

/// Flags the samples that survive iterative visibility filtering.
///
/// Each round scores every surviving sample against its `neighbors` nearest
/// surviving samples in the pixel plane (itself included): with `d_min` and
/// `d_max` the neighborhood depth extremes, visibility is
/// `exp(-((d - d_min) / (d_max - d_min))^2)`, or 1 when the range is
/// flatter than [`FLAT_RANGE_EPSILON`]. Samples below `threshold` are
/// removed in a batch; rounds repeat until a fixpoint or `max_rounds`.
pub fn visibility_filter(samples: &[ProjectedSample], config: &VisibilityConfig) -> Result<Vec<bool>> {
    config.validate()?;
    let n = samples.len();
    let xs: Vec<f64> = samples.iter().map(|s| s.pixel.x).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.pixel.y).collect();
    let depths: Vec<f64> = samples.iter().map(|s| s.depth).collect();
    let mut keep = vec![true; n];
    for _ in 0..config.max_rounds {
        let members: Vec<u32> = (0..n as u32).filter(|&i| keep[i as usize]).collect();
        if members.len() <= 1 {
            break;
        }
        let grid = BucketGrid::build(&xs, &ys, &members, config.neighbors);
        let mut removals = Vec::new();
        for &i in &members {
            let neighborhood = grid.k_nearest(
                &xs,
                &ys,
                xs[i as usize],
                ys[i as usize],
                config.neighbors,
            );
            let mut d_min = f64::INFINITY;
            let mut d_max = f64::NEG_INFINITY;
            for &j in &neighborhood {
                d_min = d_min.min(depths[j as usize]);
                d_max = d_max.max(depths[j as usize]);
            }
            let range = d_max - d_min;
            let visibility = if range < FLAT_RANGE_EPSILON {
                1.0
            } else {
                let t = (depths[i as usize] - d_min) / range;
                (-t * t).exp()
            };
            if visibility < config.threshold {
                removals.push(i);
            }
        }
        if removals.is_empty() {
            break;
        }
        for i in removals {
            keep[i as usize] = false;
        }
    }
    Ok(keep)
}

/// Keeps, per pixel, the closest projected return: samples round to their
/// nearest pixel; within each pixel the depths within `depth_tolerance` of
/// the minimum are averaged. Produces a sparse map (confidence 1 where set).
pub fn closest_selection(
    samples: &[ProjectedSample],
    width: u32,
    height: u32,
    depth_tolerance: f64,
) -> DepthMap {
    let n = width as usize * height as usize;
    let mut min_depth = vec![f64::INFINITY; n];
    let pixel_of = |s: &ProjectedSample| -> Option<usize> {
        let x = s.pixel.x.round();
        let y = s.pixel.y.round();
        (x >= 0.0 && y >= 0.0 && (x as u32) < width && (y as u32) < height)
            .then(|| y as usize * width as usize + x as usize)
    };
    for s in samples {
        if let Some(i) = pixel_of(s) {
            min_depth[i] = min_depth[i].min(s.depth);
        }
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0u32; n];
    for s in samples {
        if let Some(i) = pixel_of(s) {
            if s.depth <= min_depth[i] + depth_tolerance {
                sum[i] += s.depth;
                count[i] += 1;
            }
        }
    }
    let mut out = DepthMap::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let i = y as usize * width as usize + x as usize;
            if count[i] > 0 {
                out.set(x, y, sum[i] / count[i] as f64, 1.0);
            }
        }
    }
    out
}

/// Densifies a sparse map by interpolating across its Delaunay
/// triangulation. Triangles with an edge longer than `max_edge_px` are left
/// unfilled (they bridge data gaps, not surface); vertex pixels keep their
/// exact sparse values.
pub fn densify(sparse: &DepthMap, max_edge_px: f64) -> Result<DepthMap> {
    let (width, height) = sparse.size();
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut confidences = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if sparse.is_valid(x, y) {
                points.push((x as f64, y as f64));
                values.push(sparse.value_at(x, y));
                confidences.push(sparse.confidence_at(x, y));
            }
        }
    }
    if points.len() < 3 {
        return Err(GroundTruthError::TooFewSamples {
            needed: 3,
            got: points.len(),
        });
    }
    let triangulation = triangulate(&points)?;
    let mut out = DepthMap::new(width, height);
    for tri in &triangulation.triangles {
        let [a, b, c] = *tri;
        let (pa, pb, pc) = (points[a], points[b], points[c]);
        let edge = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        if edge(pa, pb) > max_edge_px || edge(pb, pc) > max_edge_px || edge(pc, pa) > max_edge_px {
            continue;
        }
        let denom = (pb.0 - pa.0) * (pc.1 - pa.1) - (pb.1 - pa.1) * (pc.0 - pa.0);
        if denom.abs() < 1e-12 {
            continue;
        }
        let x_lo = pa.0.min(pb.0).min(pc.0).ceil().max(0.0) as u32;
        let x_hi = pa.0.max(pb.0).max(pc.0).floor().min((width - 1) as f64) as u32;
        let y_lo = pa.1.min(pb.1).min(pc.1).ceil().max(0.0) as u32;
        let y_hi = pa.1.max(pb.1).max(pc.1).floor().min((height - 1) as f64) as u32;
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let p = (px as f64, py as f64);
                let w0 = ((pb.0 - p.0) * (pc.1 - p.1) - (pb.1 - p.1) * (pc.0 - p.0)) / denom;
                let w1 = ((pc.0 - p.0) * (pa.1 - p.1) - (pc.1 - p.1) * (pa.0 - p.0)) / denom;
                let w2 = 1.0 - w0 - w1;
                if w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12 {
                    continue;
                }
                let depth = w0 * values[a] + w1 * values[b] + w2 * values[c];
                let confidence =
                    w0 * confidences[a] + w1 * confidences[b] + w2 * confidences[c];
                out.set(px, py, depth, confidence.clamp(0.0, 1.0));
            }
        }
    }
    // Vertices carry measured values: write them last, exactly.
    for (i, &(x, y)) in points.iter().enumerate() {
        out.set(x as u32, y as u32, values[i], confidences[i]);
    }
    Ok(out)
}

/// End-to-end settings for ground-truth rasterization.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthConfig {
    pub visibility: VisibilityConfig,
    pub selection_depth_tolerance: f64,
    pub max_triangle_edge_px: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            visibility: VisibilityConfig::default(),
            selection_depth_tolerance: SELECTION_DEPTH_TOLERANCE,
            max_triangle_edge_px: MAX_TRIANGLE_EDGE_PX,
        }
    }
}

/// Sparse ground truth: project, filter hidden points, select per pixel.
/// Values are ray depths in the given camera.
pub fn sparse_ground_truth(
    camera: &CameraPinhole,
    cloud: &[Vector3<f64>],
    config: &GroundTruthConfig,
) -> Result<DepthMap> {
    let samples = project_cloud(camera, cloud)?;
    let keep = visibility_filter(&samples, &config.visibility)?;
    let survivors: Vec<ProjectedSample> = samples
        .iter()
        .zip(&keep)
        .filter_map(|(s, &k)| k.then_some(*s))
        .collect();
    let (width, height) = camera.size();
    Ok(closest_selection(
        &survivors,
        width,
        height,
        config.selection_depth_tolerance,
    ))
}

/// Dense ground truth: the sparse map interpolated over its triangulation.
pub fn dense_ground_truth(
    camera: &CameraPinhole,
    cloud: &[Vector3<f64>],
    config: &GroundTruthConfig,
) -> Result<DepthMap> {
    let sparse = sparse_ground_truth(camera, cloud, config)?;
    densify(&sparse, config.max_triangle_edge_px)
}
