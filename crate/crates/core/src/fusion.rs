//! Late fusion of depth maps that share a common reference frame.
//!
//! Each pixel gathers the valid candidate depths across all input maps. The
//! candidate with the highest confidence leads; candidates within the
//! agreement window of the leader are combined (median or
//! confidence-weighted mean), the rest are discarded as outliers. Pixels
//! with fewer valid candidates than `min_views` become invalid, and the
//! fused confidence is the mean confidence of the agreeing candidates.

use thiserror::Error;

use crate::regularize::DepthMap;

pub type Result<T> = std::result::Result<T, FusionError>;

/// Default agreement window, in multiples of the fine hypothesis step.
pub const DEFAULT_AGREEMENT_STEPS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no depth maps to fuse")]
    EmptyList,
    #[error("map {index} is {got_w}x{got_h} but map 0 is {want_w}x{want_h}")]
    FrameMismatch {
        index: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMethod {
    Median,
    ConfidenceWeightedMean,
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    pub method: FusionMethod,
    /// Pixels with fewer valid candidates than this become invalid.
    pub min_views: usize,
    /// Candidates farther than this (in meters) from the
    /// confidence-leading candidate are discarded.
    pub agreement_window_m: f64,
}

impl FusionConfig {
    /// Median fusion with the agreement window sized from the fine
    /// hypothesis step of the maps being fused.
    pub fn for_step(fine_step_m: f64) -> Self {
        Self {
            method: FusionMethod::Median,
            min_views: 1,
            agreement_window_m: DEFAULT_AGREEMENT_STEPS * fine_step_m,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_views == 0 {
            return Err(FusionError::InvalidConfig(
                "min_views must be at least 1".into(),
            ));
        }
        if !(self.agreement_window_m.is_finite() && self.agreement_window_m >= 0.0) {
            return Err(FusionError::InvalidConfig(format!(
                "agreement window must be non-negative, got {}",
                self.agreement_window_m
            )));
        }
        Ok(())
    }
}

/// Fuses depth maps defined over the same pixel grid.
pub fn fuse(maps: &[DepthMap], config: &FusionConfig) -> Result<DepthMap> {
    config.validate()?;
    let Some(first) = maps.first() else {
        return Err(FusionError::EmptyList);
    };
    let (width, height) = first.size();
    for (index, map) in maps.iter().enumerate() {
        let (got_w, got_h) = map.size();
        if (got_w, got_h) != (width, height) {
            return Err(FusionError::FrameMismatch {
                index,
                got_w,
                got_h,
                want_w: width,
                want_h: height,
            });
        }
    }

    let mut fused = DepthMap::new(width, height);
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(maps.len());
    for y in 0..height {
        for x in 0..width {
            candidates.clear();
            for map in maps {
                if map.is_valid(x, y) {
                    candidates.push((map.value_at(x, y), map.confidence_at(x, y)));
                }
            }
            if candidates.len() < config.min_views {
                continue;
            }
            // Sorting by depth first makes every downstream accumulation
            // independent of the order the maps were supplied in.
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let leader = candidates
                .iter()
                .copied()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
                .expect("candidate list is non-empty");
            let agreeing: Vec<(f64, f64)> = candidates
                .iter()
                .copied()
                .filter(|(depth, _)| (depth - leader.0).abs() <= config.agreement_window_m)
                .collect();
            let value = match config.method {
                FusionMethod::Median => {
                    let n = agreeing.len();
                    if n % 2 == 1 {
                        agreeing[n / 2].0
                    } else {
                        (agreeing[n / 2 - 1].0 + agreeing[n / 2].0) / 2.0
                    }
                }
                FusionMethod::ConfidenceWeightedMean => {
                    let weight_sum: f64 = agreeing.iter().map(|(_, c)| c).sum();
                    if weight_sum > 0.0 {
                        agreeing.iter().map(|(d, c)| d * c).sum::<f64>() / weight_sum
                    } else {
                        agreeing.iter().map(|(d, _)| d).sum::<f64>() / agreeing.len() as f64
                    }
                }
            };
            let confidence =
                agreeing.iter().map(|(_, c)| c).sum::<f64>() / agreeing.len() as f64;
            fused.set(x, y, value, confidence);
        }
    }
    Ok(fused)
}
