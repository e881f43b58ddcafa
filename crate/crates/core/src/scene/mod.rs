//! Synthetic aerial scenes with exact ground truth.
//!
//! A scene is a square terrain patch — a base plane, optional axis-aligned
//! box buildings, and band-limited value noise — textured with a
//! multi-octave albedo field and photographed by a nadir camera rig flying
//! a straight line. Images are rendered by marching each pixel ray to its
//! terrain intersection, so every pixel carries the exact surface elevation
//! alongside its intensity: the renderer doubles as the ground-truth
//! generator for end-to-end verification of the matching pipeline.
//!
//! Texture wavelengths are validated against the native pixel size so that
//! the coarsest pyramid level still samples them cleanly, and all
//! randomness is hash-derived from the spec seed, making synthesis
//! bit-identical across runs.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{rectify_calibrated, CameraPinhole, DepthSpec, GeometryError};
use crate::image::Image2D;
use crate::io::{
    atomic_write, read_cameras, read_pfm, read_pgm, write_cameras, write_pfm, write_pgm,
    CameraRecord, FloatMap, FormatError,
};
use crate::regularize::{DepthMap, MatchView};

pub type Result<T> = std::result::Result<T, SceneError>;

/// Shortest texture wavelength, in native pixels. The smooth lattice noise
/// needs a few samples per period at full resolution; shorter waves than
/// the coarse pyramid levels can resolve are simply averaged away by their
/// box filters, so the floor is set by the native sampling alone.
pub const MIN_TEXTURE_WAVELENGTH_PX: f64 = 4.0;
/// Longest texture wavelength, in native pixels; octave `k` halves it.
pub const TEXTURE_BASE_WAVELENGTH_PX: f64 = 64.0;
/// Amplitude falloff per texture octave. Chosen shallow so the finest
/// octaves keep enough contrast for sub-pixel patch matching while the
/// long waves still dominate heavily downscaled views.
pub const TEXTURE_PERSISTENCE: f64 = 0.75;
/// Ray/terrain intersections are bisected to this vertical resolution.
pub const RAY_BISECTION_TOLERANCE_M: f64 = 1e-4;
/// Baseline-to-height ratio of each consecutive camera pair; the full rig
/// span is `(views − 1)` times this. Keeping the pair ratio fixed keeps
/// matching accuracy in ground-sample units independent of the focal
/// length, since elevation error per pixel of disparity is `gsd / ratio`.
pub const PAIR_BASELINE_RATIO: f64 = 0.06;
/// A reference pixel is flagged occluded when the query view sees a
/// surface at least this much higher at the projected location.
pub const OCCLUSION_ELEVATION_TOLERANCE_M: f64 = 0.5;

const TERRAIN_NOISE_OCTAVES: usize = 2;
const SALT_BUILDINGS: u64 = 0x0b1d;
const SALT_TERRAIN: u64 = 0x7e44;
const SALT_TEXTURE: u64 = 0x7e87;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("ray at pixel ({x}, {y}) left the terrain extent without touching ground")]
    RayMissesTerrain { x: u32, y: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// An axis-aligned box standing on the base plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    /// Footprint center in world meters.
    pub center: (f64, f64),
    /// Footprint side lengths in meters.
    pub size: (f64, f64),
    /// Roof height above the base elevation.
    pub height: f64,
}

#[derive(Debug, Clone)]
pub enum Buildings {
    /// Seed-derived placement within the central region of the extent.
    Random {
        count: usize,
        height_range: (f64, f64),
        size_range: (f64, f64),
    },
    Explicit(Vec<Building>),
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    /// Side length of the square terrain patch, in meters.
    pub extent_m: f64,
    pub base_elevation_m: f64,
    pub buildings: Buildings,
    /// Peak amplitude of the band-limited terrain undulation.
    pub noise_amplitude_m: f64,
    /// Albedo octaves, halving the wavelength from
    /// [`TEXTURE_BASE_WAVELENGTH_PX`] downwards.
    pub texture_octaves: usize,
    /// Number of rig cameras (2 to 5); the rig span grows by one pair
    /// baseline per extra view.
    pub views: usize,
    /// Flying height of all cameras.
    pub altitude_m: f64,
    pub image_size: (u32, u32),
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            extent_m: 120.0,
            base_elevation_m: 20.0,
            buildings: Buildings::Random {
                count: 4,
                height_range: (6.0, 14.0),
                size_range: (12.0, 28.0),
            },
            noise_amplitude_m: 0.4,
            texture_octaves: 5,
            views: 3,
            altitude_m: 300.0,
            image_size: (256, 256),
        }
    }
}

fn rig_span_ratio(views: usize) -> Result<f64> {
    if !(2..=5).contains(&views) {
        return Err(SceneError::InvalidSpec(format!(
            "rig supports 2 to 5 views, got {views}"
        )));
    }
    Ok(PAIR_BASELINE_RATIO * (views - 1) as f64)
}

impl SceneSpec {
    /// Tallest possible surface height above the base plane.
    fn max_building_height(&self) -> f64 {
        match &self.buildings {
            Buildings::Random { count, height_range, .. } => {
                if *count == 0 {
                    0.0
                } else {
                    height_range.1
                }
            }
            Buildings::Explicit(list) => {
                list.iter().map(|b| b.height).fold(0.0, f64::max)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SceneError::InvalidSpec(msg));
        if !(self.extent_m.is_finite() && self.extent_m > 0.0) {
            return fail(format!("extent must be positive, got {}", self.extent_m));
        }
        if !self.base_elevation_m.is_finite() || !self.altitude_m.is_finite() {
            return fail("base elevation and altitude must be finite".into());
        }
        let (width, height) = self.image_size;
        if width < 16 || height < 16 {
            return fail(format!("images must be at least 16x16, got {width}x{height}"));
        }
        if !(self.noise_amplitude_m.is_finite() && self.noise_amplitude_m >= 0.0) {
            return fail(format!(
                "noise amplitude must be non-negative, got {}",
                self.noise_amplitude_m
            ));
        }
        if self.texture_octaves == 0 {
            return fail("at least one texture octave is required".into());
        }
        let min_wavelength =
            TEXTURE_BASE_WAVELENGTH_PX / (1 << (self.texture_octaves - 1)) as f64;
        if min_wavelength < MIN_TEXTURE_WAVELENGTH_PX {
            return fail(format!(
                "{} texture octaves reach a wavelength of {min_wavelength} px, \
                 below the {MIN_TEXTURE_WAVELENGTH_PX} px band limit",
                self.texture_octaves
            ));
        }
        match &self.buildings {
            Buildings::Random { count, height_range, size_range } => {
                if *count > 32 {
                    return fail(format!("at most 32 random buildings, got {count}"));
                }
                if *count > 0 {
                    if !(height_range.0 > 0.0 && height_range.0 <= height_range.1) {
                        return fail(format!("bad building height range {height_range:?}"));
                    }
                    if !(size_range.0 > 0.0 && size_range.0 <= size_range.1) {
                        return fail(format!("bad building size range {size_range:?}"));
                    }
                    if size_range.1 > self.extent_m / 3.0 {
                        return fail(format!(
                            "building size {} exceeds a third of the extent",
                            size_range.1
                        ));
                    }
                }
            }
            Buildings::Explicit(list) => {
                for b in list {
                    if !(b.height >= 0.0 && b.size.0 > 0.0 && b.size.1 > 0.0) {
                        return fail(format!("bad explicit building {b:?}"));
                    }
                    let half = self.extent_m / 2.0;
                    if b.center.0.abs() + b.size.0 / 2.0 > half
                        || b.center.1.abs() + b.size.1 / 2.0 > half
                    {
                        return fail(format!("building {b:?} leaves the extent"));
                    }
                }
            }
        }
        let z_top = self.base_elevation_m + self.noise_amplitude_m + self.max_building_height();
        if self.altitude_m < z_top + 5.0 {
            return fail(format!(
                "altitude {} is too close to the highest surface at {z_top}",
                self.altitude_m
            ));
        }
        self.rig_geometry().map(|_| ())
    }

    /// Focal length, ground sampling distance, and vertical bounds implied
    /// by the spec. The focal length is chosen so that even the outermost
    /// camera, looking down to the deepest valley, keeps its footprint
    /// inside the terrain extent.
    fn rig_geometry(&self) -> Result<RigGeometry> {
        let ratio = rig_span_ratio(self.views)?;
        let total_baseline = ratio * self.altitude_m;
        let z_floor = self.base_elevation_m - self.noise_amplitude_m;
        let z_top = self.base_elevation_m + self.noise_amplitude_m + self.max_building_height();
        let pad = self.extent_m / 64.0;
        let room = self.extent_m - total_baseline - 2.0 * pad;
        if room < self.extent_m / 4.0 {
            return Err(SceneError::InvalidSpec(format!(
                "total baseline {total_baseline:.1} m leaves only {room:.1} m of \
                 the {} m extent for the camera footprint",
                self.extent_m
            )));
        }
        let focal = (self.altitude_m - z_floor) * self.image_size.0 as f64 / room;
        Ok(RigGeometry {
            focal,
            gsd: (self.altitude_m - self.base_elevation_m) / focal,
            total_baseline,
            z_floor,
            z_ceiling: z_top + 1.0,
        })
    }
}

struct RigGeometry {
    focal: f64,
    gsd: f64,
    total_baseline: f64,
    z_floor: f64,
    z_ceiling: f64,
}

/// 64-bit finalizer mixing a seed with a salt or coordinate.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic lattice value in [-1, 1).
fn lattice_hash(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(mix(seed, ix as u64), (iy as u64).rotate_left(17));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated value noise with the given wavelength.
fn value_noise(seed: u64, x: f64, y: f64, wavelength: f64) -> f64 {
    let u = x / wavelength;
    let v = y / wavelength;
    let ix = u.floor();
    let iy = v.floor();
    let fu = smoothstep(u - ix);
    let fv = smoothstep(v - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice_hash(seed, ix, iy);
    let v10 = lattice_hash(seed, ix + 1, iy);
    let v01 = lattice_hash(seed, ix, iy + 1);
    let v11 = lattice_hash(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * fu;
    let bottom = v01 + (v11 - v01) * fu;
    top + (bottom - top) * fv
}

/// Evaluated scene surface: elevation and albedo as pure functions of the
/// world position, fully determined by the spec.
struct Terrain {
    base: f64,
    buildings: Vec<Building>,
    noise_amplitude: f64,
    noise_wavelengths: Vec<f64>,
    texture_wavelengths: Vec<f64>,
    seed: u64,
}

impl Terrain {
    fn from_spec(spec: &SceneSpec, gsd: f64) -> Self {
        let buildings = match &spec.buildings {
            Buildings::Explicit(list) => list.clone(),
            Buildings::Random { count, height_range, size_range } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, SALT_BUILDINGS));
                (0..*count)
                    .map(|_| {
                        let size = (
                            rng.random_range(size_range.0..=size_range.1),
                            rng.random_range(size_range.0..=size_range.1),
                        );
                        // Keep the footprint inside the central 80%.
                        let inset_x = 0.4 * spec.extent_m - size.0 / 2.0;
                        let inset_y = 0.4 * spec.extent_m - size.1 / 2.0;
                        Building {
                            center: (
                                rng.random_range(-inset_x.max(0.0)..=inset_x.max(0.0)),
                                rng.random_range(-inset_y.max(0.0)..=inset_y.max(0.0)),
                            ),
                            size,
                            height: rng.random_range(height_range.0..=height_range.1),
                        }
                    })
                    .collect()
            }
        };
        let noise_wavelengths = (0..TERRAIN_NOISE_OCTAVES)
            .map(|k| spec.extent_m / 4.0 / (1 << k) as f64)
            .collect();
        let texture_wavelengths = (0..spec.texture_octaves)
            .map(|k| TEXTURE_BASE_WAVELENGTH_PX * gsd / (1 << k) as f64)
            .collect();
        Self {
            base: spec.base_elevation_m,
            buildings,
            noise_amplitude: spec.noise_amplitude_m,
            noise_wavelengths,
            texture_wavelengths,
            seed: spec.seed,
        }
    }

    fn elevation(&self, x: f64, y: f64) -> f64 {
        let mut e = self.base;
        for b in &self.buildings {
            if (x - b.center.0).abs() <= b.size.0 / 2.0
                && (y - b.center.1).abs() <= b.size.1 / 2.0
            {
                e = e.max(self.base + b.height);
            }
        }
        if self.noise_amplitude > 0.0 {
            let mut sum = 0.0;
            let mut weight = 0.0;
            for (k, wavelength) in self.noise_wavelengths.iter().enumerate() {
                let amp = 0.5f64.powi(k as i32);
                sum += amp
                    * value_noise(mix(self.seed, SALT_TERRAIN + k as u64), x, y, *wavelength);
                weight += amp;
            }
            e += self.noise_amplitude * sum / weight;
        }
        e
    }

    /// Albedo in [0, 1].
    fn albedo(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut weight = 0.0;
        for (k, wavelength) in self.texture_wavelengths.iter().enumerate() {
            let amp = TEXTURE_PERSISTENCE.powi(k as i32);
            sum += amp * value_noise(mix(self.seed, SALT_TEXTURE + k as u64), x, y, *wavelength);
            weight += amp;
        }
        0.5 + 0.5 * sum / weight
    }
}

/// World-space bounds a marched ray must stay inside.
struct MarchBounds {
    x_half: f64,
    y_half: f64,
    z_ceiling: f64,
    z_floor: f64,
}

/// Walks a descending ray to its first terrain crossing: fixed vertical
/// steps to bracket the surface, then bisection to
/// [`RAY_BISECTION_TOLERANCE_M`]. The returned point carries the exact
/// terrain elevation at the hit's plan position.
fn march_ray(
    terrain: &Terrain,
    bounds: &MarchBounds,
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    step_m: f64,
    pixel: (u32, u32),
) -> Result<Vector3<f64>> {
    let miss = || SceneError::RayMissesTerrain {
        x: pixel.0,
        y: pixel.1,
    };
    let dz = direction.z;
    if dz >= -1e-9 {
        return Err(miss());
    }
    let at = |t: f64| origin + direction * t;
    let gap = |p: &Vector3<f64>| p.z - terrain.elevation(p.x, p.y);
    // Skip straight down to just above the highest possible surface.
    let mut t = ((origin.z - bounds.z_ceiling) / -dz).max(0.0);
    let dt = step_m / -dz;
    loop {
        let next = t + dt;
        let p = at(next);
        if p.x.abs() > bounds.x_half || p.y.abs() > bounds.y_half {
            return Err(miss());
        }
        if gap(&p) <= 0.0 {
            let (mut lo, mut hi) = (t, next);
            while (hi - lo) * -dz > RAY_BISECTION_TOLERANCE_M {
                let mid = 0.5 * (lo + hi);
                if gap(&at(mid)) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let p = at(0.5 * (lo + hi));
            return Ok(Vector3::new(p.x, p.y, terrain.elevation(p.x, p.y)));
        }
        if p.z < bounds.z_floor {
            return Err(miss());
        }
        t = next;
    }
}

/// One rendered view: intensity image, camera, and per-pixel ground-truth
/// surface elevation.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub image: Image2D,
    pub camera: CameraPinhole,
    pub ground_truth: DepthMap,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub views: Vec<SceneView>,
    /// Index of the reference (middle) view.
    pub reference: usize,
    /// Recommended elevation search bounds for matching.
    pub z_min: f64,
    pub z_max: f64,
    /// Ground sampling distance at the base elevation, meters per pixel.
    pub gsd_m: f64,
}

fn render_view(
    terrain: &Terrain,
    bounds: &MarchBounds,
    camera: &CameraPinhole,
    step_m: f64,
    gsd: f64,
) -> Result<(Image2D, DepthMap)> {
    let (width, height) = camera.size();
    let mut pixels = Vec::with_capacity((width * height) as usize);
    let mut ground_truth = DepthMap::new(width, height);
    let center = camera.center();
    for y in 0..height {
        for x in 0..width {
            let pixel = Vector2::new(x as f64, y as f64);
            let probe = camera.backproject(pixel, DepthSpec::Ray(1.0))?;
            let direction = (probe - center).normalize();
            let hit = march_ray(terrain, bounds, &center, &direction, step_m, (x, y))?;
            pixels.push(terrain.albedo(hit.x, hit.y));
            ground_truth.set(x, y, hit.z, 1.0);
        }
    }
    let mut image = Image2D::new(width, height, pixels);
    image.set_gsd(Some(gsd));
    Ok((image, ground_truth))
}

/// Renders the full scene: terrain, rig cameras, images, and ground truth.
pub fn synthesize(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let rig = spec.rig_geometry()?;
    let terrain = Terrain::from_spec(spec, rig.gsd);
    let bounds = MarchBounds {
        x_half: spec.extent_m / 2.0,
        y_half: spec.extent_m / 2.0,
        z_ceiling: rig.z_ceiling,
        z_floor: rig.z_floor - 1.0,
    };
    let (width, height) = spec.image_size;
    let pp = Vector2::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let rotation = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let spacing = rig.total_baseline / (spec.views - 1) as f64;
    let mut views = Vec::with_capacity(spec.views);
    for i in 0..spec.views {
        let x = -rig.total_baseline / 2.0 + i as f64 * spacing;
        let camera = CameraPinhole::new(
            rig.focal,
            pp,
            rotation,
            Vector3::new(x, 0.0, spec.altitude_m),
            width,
            height,
        )?;
        let (image, ground_truth) = render_view(&terrain, &bounds, &camera, rig.gsd / 2.0, rig.gsd)?;
        views.push(SceneView {
            image,
            camera,
            ground_truth,
        });
    }
    Ok(Scene {
        spec: spec.clone(),
        views,
        reference: (spec.views - 1) / 2,
        z_min: rig.z_floor - 1.0,
        z_max: rig.z_ceiling,
        gsd_m: rig.gsd,
    })
}

/// A row-aligned stereo pair with exact column disparities, rendered
/// directly from the rectified cameras; feeds similarity training.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub left: Image2D,
    pub right: Image2D,
    pub left_camera: CameraPinhole,
    pub right_camera: CameraPinhole,
    /// Ground-truth column disparity: the match of left pixel `(x, y)` is
    /// `(x - d, y)` in the right image.
    pub disparity: DepthMap,
    /// Row-major flags: true where the right view cannot see the left
    /// pixel's surface point.
    pub occluded: Vec<bool>,
    /// Largest epipolar row misalignment observed while projecting the
    /// left surface points into the right camera.
    pub max_row_residual_px: f64,
}

/// Renders a rectified pair of the reference view against one query view.
pub fn rectified_training_pair(scene: &Scene, query: usize) -> Result<TrainingPair> {
    if query >= scene.views.len() || query == scene.reference {
        return Err(SceneError::InvalidSpec(format!(
            "query view {query} is out of range or the reference itself"
        )));
    }
    let rig = scene.spec.rig_geometry()?;
    let terrain = Terrain::from_spec(&scene.spec, rig.gsd);
    let bounds = MarchBounds {
        x_half: scene.spec.extent_m / 2.0,
        y_half: scene.spec.extent_m / 2.0,
        z_ceiling: rig.z_ceiling,
        z_floor: rig.z_floor - 1.0,
    };
    let pair = rectify_calibrated(
        &scene.views[scene.reference].camera,
        &scene.views[query].camera,
    )?;
    let (left, left_gt) =
        render_view(&terrain, &bounds, &pair.camera_a, rig.gsd / 2.0, rig.gsd)?;
    let (right, right_gt) =
        render_view(&terrain, &bounds, &pair.camera_b, rig.gsd / 2.0, rig.gsd)?;

    let (width, height) = pair.camera_a.size();
    let mut disparity = DepthMap::new(width, height);
    let mut occluded = vec![false; (width * height) as usize];
    let mut max_row_residual = 0.0f64;
    for y in 0..height {
        for x in 0..width {
            let elevation = left_gt.value_at(x, y);
            let world = pair
                .camera_a
                .backproject(Vector2::new(x as f64, y as f64), DepthSpec::Elevation(elevation))?;
            let Ok(projection) = pair.camera_b.project(&world) else {
                occluded[disparity.index(x, y)] = true;
                continue;
            };
            max_row_residual = max_row_residual.max((projection.pixel.y - y as f64).abs());
            disparity.set(x, y, x as f64 - projection.pixel.x, 1.0);
            let index = disparity.index(x, y);
            if !pair.camera_b.in_frame(projection.pixel, 0.0) {
                occluded[index] = true;
                continue;
            }
            let qx = projection.pixel.x.round() as i64;
            let qy = projection.pixel.y.round() as i64;
            let qx = qx.clamp(0, width as i64 - 1) as u32;
            let qy = qy.clamp(0, height as i64 - 1) as u32;
            if right_gt.value_at(qx, qy) > elevation + OCCLUSION_ELEVATION_TOLERANCE_M {
                occluded[index] = true;
            }
        }
    }
    Ok(TrainingPair {
        left,
        right,
        left_camera: pair.camera_a,
        right_camera: pair.camera_b,
        disparity,
        occluded,
        max_row_residual_px: max_row_residual,
    })
}

/// Converts a depth map to a float raster; invalid pixels become NaN.
pub fn depth_to_float(map: &DepthMap) -> FloatMap {
    let (width, height) = map.size();
    let values = map
        .values()
        .iter()
        .zip(map.validity())
        .map(|(v, ok)| if *ok { *v as f32 } else { f32::NAN })
        .collect();
    FloatMap::new(width, height, values)
}

/// Converts a float raster to a depth map; non-finite pixels are invalid.
pub fn float_to_depth(map: &FloatMap) -> DepthMap {
    let mut out = DepthMap::new(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            let v = map.values[(y * map.width + x) as usize];
            if v.is_finite() {
                out.set(x, y, v as f64, 1.0);
            }
        }
    }
    out
}

/// Paths and metadata of a scene on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub images: Vec<PathBuf>,
    pub ground_truth: Vec<PathBuf>,
    pub camera_list: PathBuf,
    pub reference: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub gsd_m: f64,
    /// (reference, query) match pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Writes images (PGM), ground truth (PFM), cameras, and a key-value
/// manifest into `dir`; returns the manifest with resolved paths.
pub fn write_scene(scene: &Scene, dir: &Path) -> std::result::Result<SceneManifest, FormatError> {
    let mut images = Vec::new();
    let mut ground_truth = Vec::new();
    let mut records = Vec::new();
    let mut body = String::new();
    body.push_str(&format!("views {}\n", scene.views.len()));
    body.push_str(&format!("reference {}\n", scene.reference));
    body.push_str(&format!("z_min {}\n", scene.z_min));
    body.push_str(&format!("z_max {}\n", scene.z_max));
    body.push_str(&format!("gsd {}\n", scene.gsd_m));
    body.push_str("camera_list cameras.txt\n");
    for (i, view) in scene.views.iter().enumerate() {
        let image_name = format!("view{i}.pgm");
        let gt_name = format!("gt{i}.pfm");
        write_pgm(&dir.join(&image_name), &view.image)?;
        write_pfm(&dir.join(&gt_name), &depth_to_float(&view.ground_truth))?;
        body.push_str(&format!("image {i} {image_name}\n"));
        body.push_str(&format!("ground_truth {i} {gt_name}\n"));
        records.push(CameraRecord {
            id: format!("view{i}"),
            camera: view.camera.clone(),
        });
        images.push(dir.join(&image_name));
        ground_truth.push(dir.join(&gt_name));
    }
    let mut pairs = Vec::new();
    for i in 0..scene.views.len() {
        if i != scene.reference {
            body.push_str(&format!("pair {} {i}\n", scene.reference));
            pairs.push((scene.reference, i));
        }
    }
    write_cameras(&dir.join("cameras.txt"), &records)?;
    atomic_write(&dir.join("manifest.txt"), body.as_bytes())?;
    Ok(SceneManifest {
        images,
        ground_truth,
        camera_list: dir.join("cameras.txt"),
        reference: scene.reference,
        z_min: scene.z_min,
        z_max: scene.z_max,
        gsd_m: scene.gsd_m,
        pairs,
    })
}

/// Parses a manifest; relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> std::result::Result<SceneManifest, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let malformed = |msg: String| FormatError::malformed(path, msg);
    let mut views: Option<usize> = None;
    let mut reference = None;
    let mut z_min = None;
    let mut z_max = None;
    let mut gsd = None;
    let mut camera_list = None;
    let mut images: Vec<(usize, PathBuf)> = Vec::new();
    let mut ground_truth: Vec<(usize, PathBuf)> = Vec::new();
    let mut pairs = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().expect("non-empty line has a first token");
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| malformed(format!("line {}: missing {what}", line_no + 1)))
        };
        let parse_usize = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| malformed(format!("line {}: bad integer {t:?}", line_no + 1)))
        };
        let parse_f64 = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| malformed(format!("line {}: bad number {t:?}", line_no + 1)))
        };
        match key {
            "views" => views = Some(parse_usize(next("count")?)?),
            "reference" => reference = Some(parse_usize(next("index")?)?),
            "z_min" => z_min = Some(parse_f64(next("value")?)?),
            "z_max" => z_max = Some(parse_f64(next("value")?)?),
            "gsd" => gsd = Some(parse_f64(next("value")?)?),
            "camera_list" => camera_list = Some(dir.join(next("path")?)),
            "image" => {
                let index = parse_usize(next("index")?)?;
                images.push((index, dir.join(next("path")?)));
            }
            "ground_truth" => {
                let index = parse_usize(next("index")?)?;
                ground_truth.push((index, dir.join(next("path")?)));
            }
            "pair" => {
                let a = parse_usize(next("reference index")?)?;
                let b = parse_usize(next("query index")?)?;
                pairs.push((a, b));
            }
            other => {
                return Err(malformed(format!(
                    "line {}: unknown key {other:?}",
                    line_no + 1
                )))
            }
        }
    }
    let views = views.ok_or_else(|| malformed("missing views".into()))?;
    let reference = reference.ok_or_else(|| malformed("missing reference".into()))?;
    if reference >= views {
        return Err(malformed(format!(
            "reference {reference} out of range for {views} views"
        )));
    }
    let collect = |mut entries: Vec<(usize, PathBuf)>, what: &str| {
        entries.sort_by_key(|(i, _)| *i);
        if entries.len() != views || entries.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(malformed(format!(
                "expected {what} entries 0..{views}, got indices {:?}",
                entries.iter().map(|(i, _)| *i).collect::<Vec<_>>()
            )));
        }
        Ok(entries.into_iter().map(|(_, p)| p).collect::<Vec<_>>())
    };
    Ok(SceneManifest {
        images: collect(images, "image")?,
        ground_truth: collect(ground_truth, "ground_truth")?,
        camera_list: camera_list.ok_or_else(|| malformed("missing camera_list".into()))?,
        reference,
        z_min: z_min.ok_or_else(|| malformed("missing z_min".into()))?,
        z_max: z_max.ok_or_else(|| malformed("missing z_max".into()))?,
        gsd_m: gsd.ok_or_else(|| malformed("missing gsd".into()))?,
        pairs,
    })
}

/// A scene reloaded from disk, ready for matching and evaluation.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub views: Vec<MatchView>,
    pub ground_truth: Vec<DepthMap>,
    pub reference: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub gsd_m: f64,
    pub pairs: Vec<(usize, usize)>,
}

/// Loads every file the manifest points to.
pub fn load_scene(manifest: &SceneManifest) -> std::result::Result<LoadedScene, FormatError> {
    let records = read_cameras(&manifest.camera_list)?;
    let mut views = Vec::with_capacity(manifest.images.len());
    for (i, path) in manifest.images.iter().enumerate() {
        let mut image = read_pgm(path)?;
        image.set_gsd(Some(manifest.gsd_m));
        let id = format!("view{i}");
        let record = records.iter().find(|r| r.id == id).ok_or_else(|| {
            FormatError::malformed(
                &manifest.camera_list,
                format!("no camera with id {id:?}"),
            )
        })?;
        views.push(MatchView {
            image,
            camera: record.camera.clone(),
        });
    }
    let mut ground_truth = Vec::with_capacity(manifest.ground_truth.len());
    for path in &manifest.ground_truth {
        ground_truth.push(float_to_depth(&read_pfm(path)?));
    }
    Ok(LoadedScene {
        views,
        ground_truth,
        reference: manifest.reference,
        z_min: manifest.z_min,
        z_max: manifest.z_max,
        gsd_m: manifest.gsd_m,
        pairs: manifest.pairs.clone(),
    })
}
