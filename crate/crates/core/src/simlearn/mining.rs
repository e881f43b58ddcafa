//! Training-sample mining from a rectified feature-map pair and its
//! ground-truth column disparity.
//!
//! For every reference pixel with a finite ground-truth disparity, the true
//! match sits `d` columns to the left in the query map. Non-occluded pixels
//! yield an (anchor, positive, negative) triple with the negative drawn a
//! few columns off the match; occluded pixels yield the anchor plus two
//! negatives at distinct offsets. Offsets come from a per-pixel RNG seeded
//! from the epoch seed and the pixel index alone, so each pixel's draw is
//! independent of scan order, of which other pixels participate, and of the
//! batch schedule.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{LearnError, Result, SampleBatch};
use crate::features::FeatureMap;
use crate::regularize::DepthMap;

/// Offset band for negative samples, in whole pixels either side of the
/// ground-truth match column.
#[derive(Debug, Clone, Copy)]
pub struct MiningConfig {
    pub offset_min: u32,
    pub offset_max: u32,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            offset_min: 1,
            offset_max: 4,
        }
    }
}

impl MiningConfig {
    fn validate(&self) -> Result<()> {
        if self.offset_min == 0 || self.offset_max < self.offset_min {
            return Err(LearnError::InvalidOffsets {
                min: self.offset_min,
                max: self.offset_max,
            });
        }
        Ok(())
    }

    /// All signed offsets in the band, negative side first.
    fn signed_offsets(&self) -> Vec<i64> {
        let mut all = Vec::with_capacity(2 * (self.offset_max - self.offset_min + 1) as usize);
        for magnitude in self.offset_min..=self.offset_max {
            all.push(-(magnitude as i64));
        }
        for magnitude in self.offset_min..=self.offset_max {
            all.push(magnitude as i64);
        }
        all
    }
}

/// 64-bit finalizer giving well-mixed per-pixel stream seeds.
fn mix_seed(epoch_seed: u64, pixel_index: u64) -> u64 {
    let mut z = epoch_seed ^ pixel_index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mines a training batch from a rectified pair.
///
/// `disparity` holds the ground-truth column disparity per reference pixel:
/// the match of reference pixel `(x, y)` is query position `(x - d, y)`.
/// `occluded` flags reference pixels whose match is hidden in the query
/// view; they participate (with two negatives) only where the disparity is
/// still valid and finite. Pixels whose required samples fall outside the
/// query map or on invalid features are skipped. Errors with
/// [`LearnError::NoValidSamples`] only if *both* batch parts come out empty.
pub fn mine_samples(
    reference: &FeatureMap,
    query: &FeatureMap,
    disparity: &DepthMap,
    occluded: &[bool],
    config: &MiningConfig,
    epoch_seed: u64,
) -> Result<SampleBatch> {
    config.validate()?;
    if reference.channels() != query.channels() {
        return Err(LearnError::DimensionMismatch {
            expected: reference.channels() as usize,
            got: query.channels() as usize,
        });
    }
    if disparity.size() != reference.size() {
        return Err(LearnError::DimensionMismatch {
            expected: reference.len(),
            got: disparity.len(),
        });
    }
    if occluded.len() != reference.len() {
        return Err(LearnError::DimensionMismatch {
            expected: reference.len(),
            got: occluded.len(),
        });
    }

    let dim = reference.channels() as usize;
    let mut batch = SampleBatch::new(dim);
    let mut sample = vec![0.0; dim];
    for y in 0..reference.height() {
        for x in 0..reference.width() {
            let idx = reference.pixel_index(x, y);
            if !reference.is_valid(x, y) || !disparity.is_valid(x, y) {
                continue;
            }
            let d = disparity.value_at(x, y);
            if !d.is_finite() {
                continue;
            }
            let match_x = x as f64 - d;
            let match_y = y as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, idx as u64));
            if occluded[idx] {
                // Two negatives at distinct offsets; walk a shuffled
                // candidate list so the draw stays uniform over valid pairs.
                let mut candidates = config.signed_offsets();
                candidates.shuffle(&mut rng);
                let mut found: Vec<Vec<f64>> = Vec::with_capacity(2);
                for &offset in &candidates {
                    if found.len() == 2 {
                        break;
                    }
                    if query.sample_bilinear_into(match_x + offset as f64, match_y, &mut sample) {
                        found.push(sample.clone());
                    }
                }
                if let [n1, n2] = found.as_slice() {
                    batch.occ_anchors.push(reference.vector_at(x, y).to_vec());
                    batch.occ_negatives1.push(n1.clone());
                    batch.occ_negatives2.push(n2.clone());
                    batch.occ_pixel_ids.push((x, y));
                }
            } else {
                if !query.sample_bilinear_into(match_x, match_y, &mut sample) {
                    continue;
                }
                let positive = sample.clone();
                let magnitude =
                    rng.random_range(config.offset_min..=config.offset_max) as f64;
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let negative = [side, -side].iter().find_map(|&s| {
                    query
                        .sample_bilinear_into(match_x + s * magnitude, match_y, &mut sample)
                        .then(|| sample.clone())
                });
                let Some(negative) = negative else {
                    continue;
                };
                batch.anchors.push(reference.vector_at(x, y).to_vec());
                batch.positives.push(positive);
                batch.negatives.push(negative);
                batch.pixel_ids.push((x, y));
            }
        }
    }
    if batch.is_empty() {
        return Err(LearnError::NoValidSamples);
    }
    Ok(batch)
}
