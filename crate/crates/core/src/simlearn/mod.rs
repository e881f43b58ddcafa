//! Similarity learning on descriptor pairs: mined training batches, a
//! margin-based triplet loss over cosine similarities, an occlusion-aware
//! binary cross-entropy over MLP scores, and the MLP itself with exact
//! reverse-mode gradients.
//!
//! Batches carry two kinds of samples. A *non-occluded* sample is a triple
//! (anchor, positive, negative): the reference descriptor, the query
//! descriptor at the true match, and a query descriptor a few pixels off
//! along the match row. An *occluded* sample has no visible match, so it
//! carries the anchor and two distinct negatives; its loss pushes both
//! similarities down.

mod mining;
mod mlp;

pub use mining::{mine_samples, MiningConfig};
pub use mlp::{mlp_forward, mlp_gradients, train_mlp, MlpGradients, MlpParams, TrainConfig};

use thiserror::Error;

/// Margin used by the triplet loss unless a caller overrides it.
pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;

/// Probability clamp for cross-entropy terms.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("no valid samples could be mined from the input")]
    NoValidSamples,
    #[error("zero-length descriptor cannot be normalized for cosine similarity")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid MLP architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid negative-offset band [{min}, {max}]")]
    InvalidOffsets { min: u32, max: u32 },
    #[error("training diverged: loss {current:.6e} exceeds 10x initial {initial:.6e}")]
    DivergenceDetected { initial: f64, current: f64 },
}

pub type Result<T> = std::result::Result<T, LearnError>;

/// Mined descriptor samples for one training step.
#[derive(Debug, Clone, Default)]
pub struct SampleBatch {
    /// Descriptor dimensionality (every vector in the batch has this length).
    pub dim: usize,
    /// Non-occluded: reference descriptors.
    pub anchors: Vec<Vec<f64>>,
    /// Non-occluded: query descriptors at the true match.
    pub positives: Vec<Vec<f64>>,
    /// Non-occluded: query descriptors at the drawn negative offset.
    pub negatives: Vec<Vec<f64>>,
    /// Non-occluded: source pixel of each sample.
    pub pixel_ids: Vec<(u32, u32)>,
    /// Occluded: reference descriptors.
    pub occ_anchors: Vec<Vec<f64>>,
    /// Occluded: first negative per sample.
    pub occ_negatives1: Vec<Vec<f64>>,
    /// Occluded: second negative per sample (distinct offset from the first).
    pub occ_negatives2: Vec<Vec<f64>>,
    /// Occluded: source pixel of each sample.
    pub occ_pixel_ids: Vec<(u32, u32)>,
}

impl SampleBatch {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    /// Total sample count across both parts.
    pub fn len(&self) -> usize {
        self.anchors.len() + self.occ_anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of (pair, label) terms the cross-entropy sums over: two per
    /// sample in both parts.
    pub fn pair_count(&self) -> usize {
        2 * self.len()
    }
}

/// Cosine similarity with defensive re-normalization.
fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na.sqrt() < 1e-12 || nb.sqrt() < 1e-12 {
        return Err(LearnError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Margin-based triplet loss over cosine similarities.
///
/// Non-occluded samples contribute `max(S- - S+ + margin, 0)`; occluded
/// samples contribute `max(S1- + S2-, 0)`. Returns the total and the
/// per-sample losses (non-occluded samples first, then occluded).
pub fn triplet_loss(batch: &SampleBatch, margin: f64) -> Result<(f64, Vec<f64>)> {
    let mut per_sample = Vec::with_capacity(batch.len());
    for ((anchor, pos), neg) in batch
        .anchors
        .iter()
        .zip(&batch.positives)
        .zip(&batch.negatives)
    {
        let s_pos = cosine(anchor, pos)?;
        let s_neg = cosine(anchor, neg)?;
        per_sample.push((s_neg - s_pos + margin).max(0.0));
    }
    for ((anchor, n1), n2) in batch
        .occ_anchors
        .iter()
        .zip(&batch.occ_negatives1)
        .zip(&batch.occ_negatives2)
    {
        let s1 = cosine(anchor, n1)?;
        let s2 = cosine(anchor, n2)?;
        per_sample.push((s1 + s2).max(0.0));
    }
    Ok((per_sample.iter().sum(), per_sample))
}

/// Occlusion-aware binary cross-entropy over MLP similarity scores.
///
/// Each pair runs through the MLP on the concatenated descriptors; scores are
/// clamped to `[PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP]`. Non-occluded
/// samples contribute `-log S+ - log(1 - S-)`, occluded samples
/// `-log(1 - S1-) - log(1 - S2-)`. Returns the total and per-sample losses
/// (non-occluded first).
pub fn bce_loss(batch: &SampleBatch, params: &MlpParams) -> Result<(f64, Vec<f64>)> {
    let clamp = |s: f64| s.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    let mut concat = vec![0.0; 2 * batch.dim];
    let mut score = |a: &[f64], b: &[f64]| -> Result<f64> {
        concat[..batch.dim].copy_from_slice(a);
        concat[batch.dim..].copy_from_slice(b);
        Ok(clamp(mlp_forward(params, &concat)?))
    };
    let mut per_sample = Vec::with_capacity(batch.len());
    for ((anchor, pos), neg) in batch
        .anchors
        .iter()
        .zip(&batch.positives)
        .zip(&batch.negatives)
    {
        let s_pos = score(anchor, pos)?;
        let s_neg = score(anchor, neg)?;
        per_sample.push(-s_pos.ln() - (1.0 - s_neg).ln());
    }
    for ((anchor, n1), n2) in batch
        .occ_anchors
        .iter()
        .zip(&batch.occ_negatives1)
        .zip(&batch.occ_negatives2)
    {
        let s1 = score(anchor, n1)?;
        let s2 = score(anchor, n2)?;
        per_sample.push(-(1.0 - s1).ln() - (1.0 - s2).ln());
    }
    Ok((per_sample.iter().sum(), per_sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                return v.iter().map(|x| x / norm).collect();
            }
        }
    }

    pub(crate) fn random_batch(dim: usize, nocc: usize, occ: usize, seed: u64) -> SampleBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = SampleBatch::new(dim);
        for i in 0..nocc {
            batch.anchors.push(random_unit(dim, &mut rng));
            batch.positives.push(random_unit(dim, &mut rng));
            batch.negatives.push(random_unit(dim, &mut rng));
            batch.pixel_ids.push((i as u32, 0));
        }
        for i in 0..occ {
            batch.occ_anchors.push(random_unit(dim, &mut rng));
            batch.occ_negatives1.push(random_unit(dim, &mut rng));
            batch.occ_negatives2.push(random_unit(dim, &mut rng));
            batch.occ_pixel_ids.push((i as u32, 1));
        }
        batch
    }

    /// Straight-line re-implementation of the triplet formula, kept
    /// deliberately independent of the library code path.
    fn triplet_oracle(batch: &SampleBatch, margin: f64) -> f64 {
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut total = 0.0;
        for i in 0..batch.anchors.len() {
            let sp = cos(&batch.anchors[i], &batch.positives[i]);
            let sn = cos(&batch.anchors[i], &batch.negatives[i]);
            total += f64::max(sn - sp + margin, 0.0);
        }
        for i in 0..batch.occ_anchors.len() {
            let s1 = cos(&batch.occ_anchors[i], &batch.occ_negatives1[i]);
            let s2 = cos(&batch.occ_anchors[i], &batch.occ_negatives2[i]);
            total += f64::max(s1 + s2, 0.0);
        }
        total
    }

    #[test]
    fn triplet_matches_formula_oracle() {
        let batch = random_batch(8, 17, 9, 42);
        let (total, per_sample) = triplet_loss(&batch, DEFAULT_TRIPLET_MARGIN).unwrap();
        assert_eq!(per_sample.len(), 26);
        assert_relative_eq!(
            total,
            triplet_oracle(&batch, DEFAULT_TRIPLET_MARGIN),
            epsilon = 1e-9
        );
        assert!(per_sample.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn triplet_hinge_is_exact_on_handmade_cases() {
        // Anchor aligned with positive (S+ = 1) and orthogonal to the
        // negative (S- = 0): loss max(0 - 1 + 0.3, 0) = 0.
        let mut batch = SampleBatch::new(2);
        batch.anchors.push(vec![1.0, 0.0]);
        batch.positives.push(vec![1.0, 0.0]);
        batch.negatives.push(vec![0.0, 1.0]);
        batch.pixel_ids.push((0, 0));
        let (total, _) = triplet_loss(&batch, 0.3).unwrap();
        assert_relative_eq!(total, 0.0, epsilon = 1e-15);
        // Swapped: positive orthogonal, negative aligned: 1 - 0 + 0.3 = 1.3.
        batch.positives[0] = vec![0.0, 1.0];
        batch.negatives[0] = vec![1.0, 0.0];
        let (total, _) = triplet_loss(&batch, 0.3).unwrap();
        assert_relative_eq!(total, 1.3, epsilon = 1e-12);
        // Occluded sample with both similarities negative clamps to zero.
        let mut occ = SampleBatch::new(2);
        occ.occ_anchors.push(vec![1.0, 0.0]);
        occ.occ_negatives1.push(vec![-1.0, 0.0]);
        occ.occ_negatives2.push(vec![-1.0, 0.0]);
        occ.occ_pixel_ids.push((0, 0));
        let (total, _) = triplet_loss(&occ, 0.3).unwrap();
        assert_relative_eq!(total, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_vector_is_rejected() {
        let mut batch = SampleBatch::new(3);
        batch.anchors.push(vec![0.0, 0.0, 0.0]);
        batch.positives.push(vec![1.0, 0.0, 0.0]);
        batch.negatives.push(vec![1.0, 0.0, 0.0]);
        batch.pixel_ids.push((0, 0));
        assert!(matches!(
            triplet_loss(&batch, 0.3),
            Err(LearnError::ZeroVector)
        ));
    }

    #[test]
    fn bce_matches_independent_evaluator() {
        let dim = 4;
        let batch = random_batch(dim, 11, 6, 7);
        let params = MlpParams::new(vec![2 * dim, 2 * dim, dim, 1], 3).unwrap();
        let (total, per_sample) = bce_loss(&batch, &params).unwrap();
        assert_eq!(per_sample.len(), 17);

        // Oracle: recompute from forward scores with explicit logs.
        let fwd = |a: &[f64], b: &[f64]| {
            let mut x: Vec<f64> = a.to_vec();
            x.extend_from_slice(b);
            mlp_forward(&params, &x)
                .unwrap()
                .clamp(1e-12, 1.0 - 1e-12)
        };
        let mut expected = 0.0;
        for i in 0..batch.anchors.len() {
            let sp = fwd(&batch.anchors[i], &batch.positives[i]);
            let sn = fwd(&batch.anchors[i], &batch.negatives[i]);
            expected += -(sp.ln()) - (1.0 - sn).ln();
        }
        for i in 0..batch.occ_anchors.len() {
            let s1 = fwd(&batch.occ_anchors[i], &batch.occ_negatives1[i]);
            let s2 = fwd(&batch.occ_anchors[i], &batch.occ_negatives2[i]);
            expected += -(1.0 - s1).ln() - (1.0 - s2).ln();
        }
        assert_relative_eq!(total, expected, epsilon = 1e-9);
        assert!(per_sample.iter().all(|&l| l >= 0.0 && l.is_finite()));
    }

    #[test]
    fn bce_is_finite_even_for_saturated_scores() {
        // Giant weights drive the logistic to its asymptotes; clamping must
        // keep every term finite.
        let dim = 2;
        let batch = random_batch(dim, 5, 3, 1);
        let mut params = MlpParams::new(vec![2 * dim, 1], 0).unwrap();
        for w in params.weights_mut(0) {
            *w = 1e4;
        }
        let (total, per_sample) = bce_loss(&batch, &params).unwrap();
        assert!(total.is_finite());
        assert!(per_sample.iter().all(|l| l.is_finite()));
    }
}
