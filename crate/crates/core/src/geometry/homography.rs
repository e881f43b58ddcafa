//! Direct linear transform homography fitting with random-sample consensus
//! and a weighted least-squares refit on the inlier set.

use nalgebra::{DMatrix, Matrix3, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, Result};

/// A weighted point correspondence between two image spaces.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub source: Vector2<f64>,
    pub target: Vector2<f64>,
    /// Non-negative weight used in the least-squares refit.
    pub weight: f64,
}

impl Correspondence {
    pub fn new(source: Vector2<f64>, target: Vector2<f64>) -> Self {
        Self {
            source,
            target,
            weight: 1.0,
        }
    }
}

/// Consensus-fitting parameters.
#[derive(Debug, Clone)]
pub struct RansacConfig {
    /// Forward-transfer pixel error below which a correspondence is an inlier.
    pub inlier_threshold: f64,
    /// Maximum number of random minimal samples drawn.
    pub max_iterations: usize,
    /// Minimum consensus size required (clamped to at least 4).
    pub min_inliers: usize,
    /// RNG seed; the estimate is deterministic per seed.
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 1.0,
            max_iterations: 2000,
            min_inliers: 4,
            seed: 0,
        }
    }
}

/// Fitted homography with its consensus set.
#[derive(Debug, Clone)]
pub struct HomographyEstimate {
    /// Source-to-target projective matrix, bottom-right normalized to 1.
    pub matrix: Matrix3<f64>,
    /// Number of correspondences within the inlier threshold of the final fit.
    pub inlier_count: usize,
    /// Per-correspondence inlier flags for the final fit.
    pub inlier_mask: Vec<bool>,
}

/// Estimates a source-to-target homography from weighted correspondences.
///
/// Draws minimal 4-point samples (skipping degenerate, near-collinear ones),
/// scores each candidate by forward-transfer error, then refits on the best
/// consensus set with a weighted DLT. With exactly four correspondences the
/// fit is direct, no sampling.
pub fn estimate_homography(
    correspondences: &[Correspondence],
    config: &RansacConfig,
) -> Result<HomographyEstimate> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    let required = config.min_inliers.max(4);

    let finish = |matrix: Matrix3<f64>| -> Result<HomographyEstimate> {
        let mask = inlier_mask(correspondences, &matrix, config.inlier_threshold);
        let count = mask.iter().filter(|&&m| m).count();
        if count < required {
            return Err(GeometryError::NoConsensus {
                best: count,
                required,
            });
        }
        Ok(HomographyEstimate {
            matrix,
            inlier_count: count,
            inlier_mask: mask,
        })
    };

    if n == 4 {
        let quad = [
            correspondences[0],
            correspondences[1],
            correspondences[2],
            correspondences[3],
        ];
        if sample_is_degenerate(&quad) {
            return Err(GeometryError::SingularTransform);
        }
        let matrix = fit_dlt(correspondences, None)?;
        return finish(matrix);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best_mask: Option<Vec<bool>> = None;
    let mut best_count = 0usize;
    for _ in 0..config.max_iterations.max(1) {
        let sample = draw_sample(&mut rng, n);
        let quad = [
            correspondences[sample[0]],
            correspondences[sample[1]],
            correspondences[sample[2]],
            correspondences[sample[3]],
        ];
        if sample_is_degenerate(&quad) {
            continue;
        }
        let Ok(candidate) = fit_dlt(&quad, None) else {
            continue;
        };
        let mask = inlier_mask(correspondences, &candidate, config.inlier_threshold);
        let count = mask.iter().filter(|&&m| m).count();
        if count > best_count {
            best_count = count;
            best_mask = Some(mask);
            if best_count == n {
                break;
            }
        }
    }

    let Some(mask) = best_mask.filter(|_| best_count >= required) else {
        return Err(GeometryError::NoConsensus {
            best: best_count,
            required,
        });
    };

    // Weighted least-squares refit on the consensus set.
    let inliers: Vec<Correspondence> = correspondences
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect();
    let weights: Vec<f64> = inliers.iter().map(|c| c.weight.max(0.0)).collect();
    let refit = fit_dlt(&inliers, Some(&weights))?;
    finish(refit)
}

/// Four distinct indices in `0..n`.
fn draw_sample(rng: &mut ChaCha8Rng, n: usize) -> [usize; 4] {
    let mut picked = [0usize; 4];
    let mut count = 0;
    while count < 4 {
        let i = rng.random_range(0..n);
        if !picked[..count].contains(&i) {
            picked[count] = i;
            count += 1;
        }
    }
    picked
}

/// True when any three of the four source or target points are nearly
/// collinear (triangle area below threshold).
fn sample_is_degenerate(quad: &[Correspondence; 4]) -> bool {
    let area = |a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>| {
        ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs()
    };
    for skip in 0..4 {
        let pts: Vec<&Correspondence> = quad
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, c)| c)
            .collect();
        if area(pts[0].source, pts[1].source, pts[2].source) < 1e-9
            || area(pts[0].target, pts[1].target, pts[2].target) < 1e-9
        {
            return true;
        }
    }
    false
}

fn inlier_mask(
    correspondences: &[Correspondence],
    matrix: &Matrix3<f64>,
    threshold: f64,
) -> Vec<bool> {
    correspondences
        .iter()
        .map(|c| {
            let w = matrix[(2, 0)] * c.source.x + matrix[(2, 1)] * c.source.y + matrix[(2, 2)];
            if w.abs() < 1e-12 {
                return false;
            }
            let x = (matrix[(0, 0)] * c.source.x + matrix[(0, 1)] * c.source.y + matrix[(0, 2)]) / w;
            let y = (matrix[(1, 0)] * c.source.x + matrix[(1, 1)] * c.source.y + matrix[(1, 2)]) / w;
            let err = (x - c.target.x).hypot(y - c.target.y);
            err.is_finite() && err < threshold
        })
        .collect()
}

/// Hartley-normalized direct linear transform, optionally row-weighted.
fn fit_dlt(correspondences: &[Correspondence], weights: Option<&[f64]>) -> Result<Matrix3<f64>> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    let norm_src = normalization(correspondences.iter().map(|c| c.source));
    let norm_dst = normalization(correspondences.iter().map(|c| c.target));

    // At least 9 rows (padding with zeros when n == 4), so the thin SVD's
    // V^T is square and contains the null-space direction being solved for.
    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for (i, c) in correspondences.iter().enumerate() {
        let s = apply_norm(&norm_src, c.source);
        let d = apply_norm(&norm_dst, c.target);
        let w = weights.map_or(1.0, |ws| ws[i].max(0.0).sqrt());
        let r0 = 2 * i;
        // [-x, -y, -1, 0, 0, 0, x*u, y*u, u] . h = 0  (u = d.x)
        a[(r0, 0)] = -s.x * w;
        a[(r0, 1)] = -s.y * w;
        a[(r0, 2)] = -w;
        a[(r0, 6)] = s.x * d.x * w;
        a[(r0, 7)] = s.y * d.x * w;
        a[(r0, 8)] = d.x * w;
        let r1 = r0 + 1;
        a[(r1, 3)] = -s.x * w;
        a[(r1, 4)] = -s.y * w;
        a[(r1, 5)] = -w;
        a[(r1, 6)] = s.x * d.y * w;
        a[(r1, 7)] = s.y * d.y * w;
        a[(r1, 8)] = d.y * w;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(GeometryError::SingularTransform)?;
    let min_idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or(GeometryError::SingularTransform)?;
    let h = v_t.row(min_idx);
    let normalized = Matrix3::new(
        h[0], h[1], h[2], //
        h[3], h[4], h[5], //
        h[6], h[7], h[8],
    );

    // Undo the normalizations: H = T_dst^-1 * H_norm * T_src.
    let t_src = norm_matrix(&norm_src);
    let t_dst_inv = norm_matrix(&norm_dst)
        .try_inverse()
        .ok_or(GeometryError::SingularTransform)?;
    let full = t_dst_inv * normalized * t_src;
    let scale = full[(2, 2)];
    if scale.abs() < 1e-12 * full.abs().max() {
        return Err(GeometryError::SingularTransform);
    }
    Ok(full / scale)
}

/// Hartley normalization: centroid to origin, mean distance sqrt(2).
struct Normalization {
    cx: f64,
    cy: f64,
    scale: f64,
}

fn normalization(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Normalization {
    let mut n = 0usize;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p.x;
        cy += p.y;
        n += 1;
    }
    let nf = n.max(1) as f64;
    cx /= nf;
    cy /= nf;
    let mut mean_dist = 0.0;
    for p in points {
        mean_dist += (p.x - cx).hypot(p.y - cy);
    }
    mean_dist /= nf;
    let scale = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Normalization { cx, cy, scale }
}

fn apply_norm(n: &Normalization, p: Vector2<f64>) -> Vector2<f64> {
    Vector2::new((p.x - n.cx) * n.scale, (p.y - n.cy) * n.scale)
}

fn norm_matrix(n: &Normalization) -> Matrix3<f64> {
    Matrix3::new(
        n.scale,
        0.0,
        -n.cx * n.scale,
        0.0,
        n.scale,
        -n.cy * n.scale,
        0.0,
        0.0,
        1.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ground_truth() -> Matrix3<f64> {
        Matrix3::new(
            1.05, -0.08, 12.0, //
            0.06, 0.95, -7.5, //
            2e-5, -1e-5, 1.0,
        )
    }

    fn apply(m: &Matrix3<f64>, p: Vector2<f64>) -> Vector2<f64> {
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        Vector2::new(
            (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
            (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
        )
    }

    fn max_transfer_error(m: &Matrix3<f64>, truth: &Matrix3<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for y in (0..200).step_by(20) {
            for x in (0..200).step_by(20) {
                let p = Vector2::new(x as f64, y as f64);
                let a = apply(m, p);
                let b = apply(truth, p);
                worst = worst.max((a.x - b.x).hypot(a.y - b.y));
            }
        }
        worst
    }

    #[test]
    fn four_exact_points_recover_the_homography() {
        let truth = ground_truth();
        let corners = [
            Vector2::new(0.0, 0.0),
            Vector2::new(199.0, 3.0),
            Vector2::new(5.0, 190.0),
            Vector2::new(180.0, 185.0),
        ];
        let corrs: Vec<Correspondence> = corners
            .iter()
            .map(|&p| Correspondence::new(p, apply(&truth, p)))
            .collect();
        let est = estimate_homography(&corrs, &RansacConfig::default()).unwrap();
        assert_eq!(est.inlier_count, 4);
        assert!(max_transfer_error(&est.matrix, &truth) < 1e-6);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let corrs: Vec<Correspondence> = (0..4)
            .map(|i| {
                let p = Vector2::new(i as f64 * 10.0, i as f64 * 5.0);
                Correspondence::new(p, p)
            })
            .collect();
        assert!(estimate_homography(&corrs, &RansacConfig::default()).is_err());
    }

    #[test]
    fn consensus_survives_outliers() {
        let truth = ground_truth();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut corrs = Vec::new();
        for _ in 0..60 {
            let p = Vector2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            corrs.push(Correspondence::new(p, apply(&truth, p)));
        }
        for _ in 0..25 {
            let p = Vector2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            let q = Vector2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            corrs.push(Correspondence::new(p, q));
        }
        let est = estimate_homography(&corrs, &RansacConfig::default()).unwrap();
        assert!(est.inlier_count >= 60);
        assert!(max_transfer_error(&est.matrix, &truth) < 0.5);
    }

    #[test]
    fn too_few_points_error() {
        let corrs = vec![Correspondence::new(Vector2::zeros(), Vector2::zeros()); 3];
        assert!(matches!(
            estimate_homography(&corrs, &RansacConfig::default()),
            Err(GeometryError::TooFewCorrespondences(3))
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let truth = ground_truth();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut corrs = Vec::new();
        for _ in 0..40 {
            let p = Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let noisy = apply(&truth, p) + Vector2::new(rng.random_range(-0.3..0.3), 0.0);
            corrs.push(Correspondence::new(p, noisy));
        }
        for _ in 0..10 {
            corrs.push(Correspondence::new(
                Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
                Vector2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
            ));
        }
        let cfg = RansacConfig {
            seed: 11,
            ..RansacConfig::default()
        };
        let a = estimate_homography(&corrs, &cfg).unwrap();
        let b = estimate_homography(&corrs, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.inlier_mask, b.inlier_mask);
    }
}
