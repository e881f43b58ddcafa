//! Key-value run configuration.
//!
//! A config file holds one `key value` pair per line; `#` starts a comment.
//! Every tunable constant of the pipeline is exposed under a dotted key,
//! defaulting to the library's built-in value. Command-line flags override
//! file values via [`Config::set`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sweepmatch::eval::{EvalConfig, DEFAULT_GSD_MULTIPLES, DEFAULT_INLIER_THRESHOLD_M};
use sweepmatch::fusion::{FusionConfig, FusionMethod, DEFAULT_AGREEMENT_STEPS};
use sweepmatch::groundtruth::{
    GroundTruthConfig, VisibilityConfig, MAX_TRIANGLE_EDGE_PX, MAX_VISIBILITY_ROUNDS,
    SELECTION_DEPTH_TOLERANCE, VISIBILITY_NEIGHBORS, VISIBILITY_THRESHOLD,
};
use sweepmatch::io::FormatError;
use sweepmatch::regularize::{
    PyramidConfig, SgmConfig, BUILTIN_PATCH_RADIUS, DEFAULT_ENVELOPE_STEPS,
    DEFAULT_FEATURE_SWITCH_LEVEL, DEFAULT_LEVELS, DEFAULT_MEMORY_CAP_BYTES, DEFAULT_P1,
    DEFAULT_P2, DEFAULT_PRESMOOTH_SIGMA_PX, DEFAULT_STEP_PX,
};
use sweepmatch::scene::{Buildings, SceneSpec};
use sweepmatch::simlearn::{MiningConfig, TrainConfig};

type Result<T> = std::result::Result<T, FormatError>;

/// Every key a config file or override may use.
pub const ALLOWED_KEYS: &[&str] = &[
    "eval.gsd_multiples",
    "eval.inlier_threshold_m",
    "features.patch_radius",
    "fusion.agreement_steps",
    "fusion.agreement_window_m",
    "fusion.method",
    "fusion.min_views",
    "gt.max_edge_px",
    "gt.max_rounds",
    "gt.neighbors",
    "gt.selection_tolerance_m",
    "gt.visibility_threshold",
    "match.subpixel",
    "pyramid.envelope_steps",
    "pyramid.feature_switch_level",
    "pyramid.levels",
    "pyramid.memory_cap_bytes",
    "pyramid.presmooth_sigma_px",
    "pyramid.step_px",
    "scene.altitude_m",
    "scene.base_elevation_m",
    "scene.building_count",
    "scene.building_height_max",
    "scene.building_height_min",
    "scene.building_size_max",
    "scene.building_size_min",
    "scene.extent_m",
    "scene.image_height",
    "scene.image_width",
    "scene.noise_amplitude_m",
    "scene.seed",
    "scene.texture_octaves",
    "scene.views",
    "sgm.directions",
    "sgm.p1",
    "sgm.p2",
    "train.epochs",
    "train.learning_rate",
    "train.offset_max",
    "train.offset_min",
];

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    origin: PathBuf,
}

impl Config {
    pub fn empty() -> Self {
        Self {
            values: BTreeMap::new(),
            origin: PathBuf::from("<defaults>"),
        }
    }

    /// Parses a config file, rejecting unknown and duplicate keys.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        let mut values = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let key = tokens.next().expect("non-empty line has a first token");
            let Some(value) = tokens.next() else {
                return Err(FormatError::malformed(
                    path,
                    format!("line {}: key {key:?} has no value", line_no + 1),
                ));
            };
            if let Some(extra) = tokens.next() {
                return Err(FormatError::malformed(
                    path,
                    format!("line {}: unexpected trailing token {extra:?}", line_no + 1),
                ));
            }
            if ALLOWED_KEYS.binary_search(&key).is_err() {
                return Err(FormatError::malformed(
                    path,
                    format!("line {}: unknown key {key:?}", line_no + 1),
                ));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(FormatError::malformed(
                    path,
                    format!("line {}: duplicate key {key:?}", line_no + 1),
                ));
            }
        }
        Ok(Self {
            values,
            origin: path.to_path_buf(),
        })
    }

    /// Applies a command-line override; the key must be a known one.
    pub fn set(&mut self, key: &str, value: impl Display) {
        debug_assert!(ALLOWED_KEYS.binary_search(&key).is_ok(), "unknown key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|e| {
                FormatError::malformed(&self.origin, format!("key {key}: {e} (got {raw:?})"))
            }),
        }
    }

    fn get_list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|t| {
                    t.trim().parse().map_err(|e| {
                        FormatError::malformed(
                            &self.origin,
                            format!("key {key}: {e} (got {t:?})"),
                        )
                    })
                })
                .collect(),
        }
    }
}

pub fn sgm_config(cfg: &Config) -> Result<SgmConfig> {
    Ok(SgmConfig {
        p1: cfg.get("sgm.p1", DEFAULT_P1)?,
        p2: cfg.get("sgm.p2", DEFAULT_P2)?,
        directions: cfg.get("sgm.directions", 8u32)?,
    })
}

pub fn pyramid_config(cfg: &Config) -> Result<PyramidConfig> {
    Ok(PyramidConfig {
        levels: cfg.get_list("pyramid.levels", &DEFAULT_LEVELS)?,
        feature_switch_level: cfg.get(
            "pyramid.feature_switch_level",
            DEFAULT_FEATURE_SWITCH_LEVEL,
        )?,
        envelope_steps: cfg.get("pyramid.envelope_steps", DEFAULT_ENVELOPE_STEPS)?,
        step_px: cfg.get("pyramid.step_px", DEFAULT_STEP_PX)?,
        presmooth_sigma_px: cfg.get("pyramid.presmooth_sigma_px", DEFAULT_PRESMOOTH_SIGMA_PX)?,
        memory_cap_bytes: cfg.get("pyramid.memory_cap_bytes", DEFAULT_MEMORY_CAP_BYTES)?,
        subpixel: cfg.get("match.subpixel", true)?,
    })
}

pub fn patch_radius(cfg: &Config) -> Result<usize> {
    cfg.get("features.patch_radius", BUILTIN_PATCH_RADIUS)
}

/// Fusion settings; the agreement window defaults to
/// [`DEFAULT_AGREEMENT_STEPS`] fine hypothesis steps unless overridden in
/// meters.
pub fn fusion_config(cfg: &Config, fine_step_m: f64) -> Result<FusionConfig> {
    let method = match cfg.get("fusion.method", "median".to_string())?.as_str() {
        "median" => FusionMethod::Median,
        "weighted-mean" => FusionMethod::ConfidenceWeightedMean,
        other => {
            return Err(FormatError::malformed(
                &cfg.origin,
                format!("key fusion.method: expected median or weighted-mean, got {other:?}"),
            ))
        }
    };
    let steps = cfg.get("fusion.agreement_steps", DEFAULT_AGREEMENT_STEPS)?;
    Ok(FusionConfig {
        method,
        min_views: cfg.get("fusion.min_views", 1usize)?,
        agreement_window_m: cfg.get("fusion.agreement_window_m", steps * fine_step_m)?,
    })
}

pub fn eval_config(cfg: &Config, gsd_m: f64) -> Result<EvalConfig> {
    Ok(EvalConfig {
        inlier_threshold_m: cfg.get("eval.inlier_threshold_m", DEFAULT_INLIER_THRESHOLD_M)?,
        gsd_m,
        gsd_multiples: cfg.get_list("eval.gsd_multiples", &DEFAULT_GSD_MULTIPLES)?,
    })
}

pub fn ground_truth_config(cfg: &Config) -> Result<GroundTruthConfig> {
    Ok(GroundTruthConfig {
        visibility: VisibilityConfig {
            neighbors: cfg.get("gt.neighbors", VISIBILITY_NEIGHBORS)?,
            threshold: cfg.get("gt.visibility_threshold", VISIBILITY_THRESHOLD)?,
            max_rounds: cfg.get("gt.max_rounds", MAX_VISIBILITY_ROUNDS)?,
        },
        selection_depth_tolerance: cfg.get(
            "gt.selection_tolerance_m",
            SELECTION_DEPTH_TOLERANCE,
        )?,
        max_triangle_edge_px: cfg.get("gt.max_edge_px", MAX_TRIANGLE_EDGE_PX)?,
    })
}

pub fn scene_spec(cfg: &Config) -> Result<SceneSpec> {
    let defaults = SceneSpec::default();
    let (default_count, default_heights, default_sizes) = match &defaults.buildings {
        Buildings::Random {
            count,
            height_range,
            size_range,
        } => (*count, *height_range, *size_range),
        Buildings::Explicit(_) => unreachable!("default spec uses random buildings"),
    };
    Ok(SceneSpec {
        seed: cfg.get("scene.seed", defaults.seed)?,
        extent_m: cfg.get("scene.extent_m", defaults.extent_m)?,
        base_elevation_m: cfg.get("scene.base_elevation_m", defaults.base_elevation_m)?,
        buildings: Buildings::Random {
            count: cfg.get("scene.building_count", default_count)?,
            height_range: (
                cfg.get("scene.building_height_min", default_heights.0)?,
                cfg.get("scene.building_height_max", default_heights.1)?,
            ),
            size_range: (
                cfg.get("scene.building_size_min", default_sizes.0)?,
                cfg.get("scene.building_size_max", default_sizes.1)?,
            ),
        },
        noise_amplitude_m: cfg.get("scene.noise_amplitude_m", defaults.noise_amplitude_m)?,
        texture_octaves: cfg.get("scene.texture_octaves", defaults.texture_octaves)?,
        views: cfg.get("scene.views", defaults.views)?,
        altitude_m: cfg.get("scene.altitude_m", defaults.altitude_m)?,
        image_size: (
            cfg.get("scene.image_width", defaults.image_size.0)?,
            cfg.get("scene.image_height", defaults.image_size.1)?,
        ),
    })
}

pub fn training_config(cfg: &Config) -> Result<(TrainConfig, MiningConfig)> {
    let train_defaults = TrainConfig::default();
    let mining_defaults = MiningConfig::default();
    Ok((
        TrainConfig {
            learning_rate: cfg.get("train.learning_rate", train_defaults.learning_rate)?,
            epochs: cfg.get("train.epochs", train_defaults.epochs)?,
        },
        MiningConfig {
            offset_min: cfg.get("train.offset_min", mining_defaults.offset_min)?,
            offset_max: cfg.get("train.offset_max", mining_defaults.offset_max)?,
        },
    ))
}
