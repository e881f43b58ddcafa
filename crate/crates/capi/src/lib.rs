//! C ABI for the matching engine.
//!
//! Every entry point returns an [`SmStatus`]; results come back through out
//! parameters. Handles are opaque pointers owned by the library — release
//! them with the matching `*_free` function exactly once. On any failure the
//! offending thread keeps a human-readable message retrievable with
//! [`sm_last_error_message`]. All functions catch panics and convert them to
//! [`SmStatus::Panic`] instead of unwinding across the boundary.
//!
//! The companion header `include/sweepmatch.h` is regenerated by the build
//! script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sweepmatch::eval::{evaluate, EvalConfig, EvalReport};
use sweepmatch::fusion::{fuse, FusionConfig};
use sweepmatch::io::{read_pfm, write_pfm};
use sweepmatch::planesweep::{RangeKind, SimilarityMode};
use sweepmatch::regularize::{hypothesis_step, pyramid_match, MatchRequest, MatchView};
use sweepmatch::scene::{
    depth_to_float, float_to_depth, load_scene, read_manifest, synthesize, SceneSpec,
};
use sweepmatch::regularize::{PyramidConfig, SgmConfig};
use sweepmatch::{DepthMap, Error};

/// Result of every C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was malformed (bad index, bad path encoding, bad file
    /// contents, invalid configuration).
    InvalidArgument = 2,
    /// The operating system reported an I/O failure.
    Io = 3,
    /// The pipeline itself failed (degenerate geometry, divergence, ...).
    Pipeline = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// An in-memory dataset: calibrated views plus the elevation search range.
pub struct SmScene {
    views: Vec<MatchView>,
    ground_truth: Vec<DepthMap>,
    reference: usize,
    z_min: f64,
    z_max: f64,
    gsd_m: f64,
}

/// A depth (elevation) raster with per-pixel confidence and validity.
pub struct SmDepthMap {
    inner: DepthMap,
}

/// Accuracy metrics of one depth map against ground truth.
pub struct SmReport {
    inner: EvalReport,
}

/// Flat copy of the headline metrics in [`SmReport`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmSummary {
    /// Pixels valid in both the map under test and the ground truth.
    pub compared: usize,
    /// Pixels valid in the ground truth.
    pub gt_valid: usize,
    /// Compared pixels whose absolute error is under the inlier threshold.
    pub inliers: usize,
    /// Mean absolute error over inliers, meters.
    pub mean_abs_error_m: f64,
    /// Population standard deviation of inlier errors, meters.
    pub std_dev_m: f64,
    /// Median absolute error over inliers, meters.
    pub median_abs_error_m: f64,
    /// Normalized median absolute deviation over inliers, meters.
    pub nmad_m: f64,
    /// Inliers as a percentage of valid ground-truth pixels.
    pub completeness_percent: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|cell| {
        *cell.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped");
    });
}

fn fail(error: &Error) -> SmStatus {
    set_last_error(&error.to_string());
    match error {
        Error::Io(_) => SmStatus::Io,
        Error::Format(_) => SmStatus::InvalidArgument,
        _ => SmStatus::Pipeline,
    }
}

fn fail_invalid(message: &str) -> SmStatus {
    set_last_error(message);
    SmStatus::InvalidArgument
}

/// Runs a fallible body, translating panics into [`SmStatus::Panic`].
fn guarded(body: impl FnOnce() -> SmStatus) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&message);
            SmStatus::Panic
        }
    }
}

/// # Safety
/// `path` must point to a NUL-terminated string; the pointer must stay valid
/// for the duration of the call.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, SmStatus> {
    if path.is_null() {
        set_last_error("path is null");
        return Err(SmStatus::NullArgument);
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail_invalid("path is not valid UTF-8")),
    }
}

fn store<T>(out: *mut *mut T, value: T) -> SmStatus {
    // Caller guarantees `out` is non-null and writable (checked before).
    unsafe { *out = Box::into_raw(Box::new(value)) };
    SmStatus::Ok
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buffer` (truncated to
/// `capacity - 1` bytes, always NUL-terminated when `capacity > 0`) and
/// returns the full message length in bytes, excluding the terminator.
///
/// # Safety
/// `buffer` must point to at least `capacity` writable bytes, or be null
/// (then only the required length is returned).
#[no_mangle]
pub unsafe extern "C" fn sm_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|cell| {
        let message = cell.borrow();
        let bytes = message.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        bytes.len()
    })
}

// ---------------------------------------------------------------------------
// scenes

/// Loads a dataset from its manifest file.
///
/// # Safety
/// `manifest_path` must be a valid NUL-terminated string and `out_scene` a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_load(
    manifest_path: *const c_char,
    out_scene: *mut *mut SmScene,
) -> SmStatus {
    guarded(|| {
        if out_scene.is_null() {
            set_last_error("out_scene is null");
            return SmStatus::NullArgument;
        }
        let path = match path_arg(manifest_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let loaded = match read_manifest(path).and_then(|m| load_scene(&m)) {
            Ok(scene) => scene,
            Err(e) => return fail(&Error::from(e)),
        };
        store(
            out_scene,
            SmScene {
                views: loaded.views,
                ground_truth: loaded.ground_truth,
                reference: loaded.reference,
                z_min: loaded.z_min,
                z_max: loaded.z_max,
                gsd_m: loaded.gsd_m,
            },
        )
    })
}

/// Synthesizes an in-memory test scene: `views` cameras on a strip over a
/// textured terrain, rendered at `width` x `height`.
///
/// # Safety
/// `out_scene` must be a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_synthesize(
    seed: u64,
    views: usize,
    width: u32,
    height: u32,
    out_scene: *mut *mut SmScene,
) -> SmStatus {
    guarded(|| {
        if out_scene.is_null() {
            set_last_error("out_scene is null");
            return SmStatus::NullArgument;
        }
        let spec = SceneSpec {
            seed,
            views,
            image_size: (width, height),
            ..SceneSpec::default()
        };
        let scene = match synthesize(&spec) {
            Ok(scene) => scene,
            Err(e) => return fail(&Error::from(e)),
        };
        store(
            out_scene,
            SmScene {
                views: scene
                    .views
                    .iter()
                    .map(|v| MatchView {
                        image: v.image.clone(),
                        camera: v.camera.clone(),
                    })
                    .collect(),
                ground_truth: scene.views.into_iter().map(|v| v.ground_truth).collect(),
                reference: scene.reference,
                z_min: scene.z_min,
                z_max: scene.z_max,
                gsd_m: scene.gsd_m,
            },
        )
    })
}

/// Releases a scene handle.
///
/// # Safety
/// `scene` must have come from this library and not been freed before; null
/// is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_free(scene: *mut SmScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of views in the scene.
///
/// # Safety
/// `scene` must be a live scene handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_view_count(
    scene: *const SmScene,
    out_count: *mut usize,
) -> SmStatus {
    guarded(|| {
        if scene.is_null() || out_count.is_null() {
            set_last_error("scene or out_count is null");
            return SmStatus::NullArgument;
        }
        *out_count = (*scene).views.len();
        SmStatus::Ok
    })
}

/// Index of the reference view.
///
/// # Safety
/// `scene` must be a live scene handle; `out_reference` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_reference(
    scene: *const SmScene,
    out_reference: *mut usize,
) -> SmStatus {
    guarded(|| {
        if scene.is_null() || out_reference.is_null() {
            set_last_error("scene or out_reference is null");
            return SmStatus::NullArgument;
        }
        *out_reference = (*scene).reference;
        SmStatus::Ok
    })
}

/// Ground sampling distance of the scene in meters per pixel.
///
/// # Safety
/// `scene` must be a live scene handle; `out_gsd_m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_gsd(scene: *const SmScene, out_gsd_m: *mut f64) -> SmStatus {
    guarded(|| {
        if scene.is_null() || out_gsd_m.is_null() {
            set_last_error("scene or out_gsd_m is null");
            return SmStatus::NullArgument;
        }
        *out_gsd_m = (*scene).gsd_m;
        SmStatus::Ok
    })
}

/// Copies the stored ground-truth elevation map of one view.
///
/// # Safety
/// `scene` must be a live scene handle; `out_map` must be a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn sm_scene_ground_truth(
    scene: *const SmScene,
    view: usize,
    out_map: *mut *mut SmDepthMap,
) -> SmStatus {
    guarded(|| {
        if scene.is_null() || out_map.is_null() {
            set_last_error("scene or out_map is null");
            return SmStatus::NullArgument;
        }
        let scene = &*scene;
        let Some(map) = scene.ground_truth.get(view) else {
            return fail_invalid(&format!(
                "view {view} is out of range ({} views)",
                scene.views.len()
            ));
        };
        store(out_map, SmDepthMap { inner: map.clone() })
    })
}

// ---------------------------------------------------------------------------
// matching

fn run_match(scene: &SmScene, queries: &[MatchView]) -> Result<DepthMap, Error> {
    let request = MatchRequest {
        reference: &scene.views[scene.reference],
        queries,
        kind: RangeKind::Elevation,
        z_min: scene.z_min,
        z_max: scene.z_max,
    };
    Ok(pyramid_match(
        &request,
        &PyramidConfig::default(),
        &SgmConfig::default(),
        SimilarityMode::Cosine,
        None,
    )?)
}

/// Matches the reference view against one query view with the default
/// multi-resolution schedule (built-in features, cosine similarity).
///
/// # Safety
/// `scene` must be a live scene handle; `out_map` must be a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn sm_match(
    scene: *const SmScene,
    query: usize,
    out_map: *mut *mut SmDepthMap,
) -> SmStatus {
    guarded(|| {
        if scene.is_null() || out_map.is_null() {
            set_last_error("scene or out_map is null");
            return SmStatus::NullArgument;
        }
        let scene = &*scene;
        if query >= scene.views.len() || query == scene.reference {
            return fail_invalid(&format!(
                "query {query} is not a valid non-reference view index"
            ));
        }
        let queries = vec![scene.views[query].clone()];
        match run_match(scene, &queries) {
            Ok(map) => store(out_map, SmDepthMap { inner: map }),
            Err(e) => fail(&e),
        }
    })
}

/// Matches the reference view against every other view. With
/// `late_fusion = false` all views share one sweep; otherwise each pair is
/// matched separately and the maps are median-fused.
///
/// # Safety
/// `scene` must be a live scene handle; `out_map` must be a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn sm_mvs(
    scene: *const SmScene,
    late_fusion: bool,
    out_map: *mut *mut SmDepthMap,
) -> SmStatus {
    guarded(|| {
        if scene.is_null() || out_map.is_null() {
            set_last_error("scene or out_map is null");
            return SmStatus::NullArgument;
        }
        let scene = &*scene;
        let queries: Vec<MatchView> = scene
            .views
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != scene.reference)
            .map(|(_, v)| v.clone())
            .collect();
        if queries.is_empty() {
            return fail_invalid("scene has no query views");
        }
        let result = if late_fusion {
            (|| {
                let mut maps = Vec::with_capacity(queries.len());
                for view in &queries {
                    maps.push(run_match(scene, std::slice::from_ref(view))?);
                }
                let cameras: Vec<&_> = queries.iter().map(|v| &v.camera).collect();
                let fine_step = hypothesis_step(
                    &scene.views[scene.reference].camera,
                    &cameras,
                    RangeKind::Elevation,
                    scene.z_min,
                    scene.z_max,
                    PyramidConfig::default().step_px,
                )?;
                Ok::<DepthMap, Error>(fuse(&maps, &FusionConfig::for_step(fine_step))?)
            })()
        } else {
            run_match(scene, &queries)
        };
        match result {
            Ok(map) => store(out_map, SmDepthMap { inner: map }),
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// depth maps

/// Releases a depth-map handle.
///
/// # Safety
/// `map` must have come from this library and not been freed before; null is
/// a no-op.
#[no_mangle]
pub unsafe extern "C" fn sm_depth_map_free(map: *mut SmDepthMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Raster dimensions of a depth map.
///
/// # Safety
/// `map` must be a live depth-map handle; `out_width` and `out_height` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_depth_map_size(
    map: *const SmDepthMap,
    out_width: *mut u32,
    out_height: *mut u32,
) -> SmStatus {
    guarded(|| {
        if map.is_null() || out_width.is_null() || out_height.is_null() {
            set_last_error("map or out pointer is null");
            return SmStatus::NullArgument;
        }
        let (w, h) = (*map).inner.size();
        *out_width = w;
        *out_height = h;
        SmStatus::Ok
    })
}

/// Number of valid pixels in a depth map.
///
/// # Safety
/// `map` must be a live depth-map handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_depth_map_valid_count(
    map: *const SmDepthMap,
    out_count: *mut usize,
) -> SmStatus {
    guarded(|| {
        if map.is_null() || out_count.is_null() {
            set_last_error("map or out_count is null");
            return SmStatus::NullArgument;
        }
        *out_count = (*map).inner.valid_count();
        SmStatus::Ok
    })
}

/// Reads one pixel: value, confidence, and whether it is valid. Invalid
/// pixels report value 0 and confidence 0.
///
/// # Safety
/// `map` must be a live depth-map handle; non-null out pointers must be
/// writable. Any out pointer may be null to skip that field.
#[no_mangle]
pub unsafe extern "C" fn sm_depth_map_at(
    map: *const SmDepthMap,
    x: u32,
    y: u32,
    out_value: *mut f64,
    out_confidence: *mut f64,
    out_valid: *mut bool,
) -> SmStatus {
    guarded(|| {
        if map.is_null() {
            set_last_error("map is null");
            return SmStatus::NullArgument;
        }
        let inner = &(*map).inner;
        if x >= inner.width() || y >= inner.height() {
            return fail_invalid(&format!(
                "pixel ({x}, {y}) is outside the {}x{} raster",
                inner.width(),
                inner.height()
            ));
        }
        if !out_value.is_null() {
            *out_value = inner.value_at(x, y);
        }
        if !out_confidence.is_null() {
            *out_confidence = inner.confidence_at(x, y);
        }
        if !out_valid.is_null() {
            *out_valid = inner.is_valid(x, y);
        }
        SmStatus::Ok
    })
}

/// Writes a depth map as a PFM file (invalid pixels NaN).
///
/// # Safety
/// `map` must be a live depth-map handle and `path` a valid NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn sm_depth_map_write_pfm(
    map: *const SmDepthMap,
    path: *const c_char,
) -> SmStatus {
    guarded(|| {
        if map.is_null() {
            set_last_error("map is null");
            return SmStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_pfm(path, &depth_to_float(&(*map).inner)) {
            Ok(()) => SmStatus::Ok,
            Err(e) => fail(&Error::from(e)),
        }
    })
}

/// Loads a depth map from a PFM file (NaN pixels become invalid).
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_map` a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sm_depth_map_read_pfm(
    path: *const c_char,
    out_map: *mut *mut SmDepthMap,
) -> SmStatus {
    guarded(|| {
        if out_map.is_null() {
            set_last_error("out_map is null");
            return SmStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match read_pfm(path) {
            Ok(floats) => store(
                out_map,
                SmDepthMap {
                    inner: float_to_depth(&floats),
                },
            ),
            Err(e) => fail(&Error::from(e)),
        }
    })
}

// ---------------------------------------------------------------------------
// evaluation

/// Scores a depth map against ground truth at the given ground sampling
/// distance, with the default inlier threshold and accuracy bands.
///
/// # Safety
/// `depth` and `truth` must be live depth-map handles; `out_report` must be
/// a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sm_evaluate(
    depth: *const SmDepthMap,
    truth: *const SmDepthMap,
    gsd_m: f64,
    out_report: *mut *mut SmReport,
) -> SmStatus {
    guarded(|| {
        if depth.is_null() || truth.is_null() || out_report.is_null() {
            set_last_error("depth, truth, or out_report is null");
            return SmStatus::NullArgument;
        }
        let config = EvalConfig::new(gsd_m);
        match evaluate(&(*depth).inner, &(*truth).inner, &config) {
            Ok(report) => store(out_report, SmReport { inner: report }),
            Err(e) => fail(&Error::from(e)),
        }
    })
}

/// Releases a report handle.
///
/// # Safety
/// `report` must have come from this library and not been freed before; null
/// is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sm_report_free(report: *mut SmReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Copies the headline metrics out of a report.
///
/// # Safety
/// `report` must be a live report handle; `out_summary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_report_summary(
    report: *const SmReport,
    out_summary: *mut SmSummary,
) -> SmStatus {
    guarded(|| {
        if report.is_null() || out_summary.is_null() {
            set_last_error("report or out_summary is null");
            return SmStatus::NullArgument;
        }
        let inner = &(*report).inner;
        *out_summary = SmSummary {
            compared: inner.compared,
            gt_valid: inner.gt_valid,
            inliers: inner.inliers,
            mean_abs_error_m: inner.mean_abs_error_m,
            std_dev_m: inner.std_dev_m,
            median_abs_error_m: inner.median_abs_error_m,
            nmad_m: inner.nmad_m,
            completeness_percent: inner.completeness_percent,
        };
        SmStatus::Ok
    })
}
