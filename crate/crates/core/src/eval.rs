//! Depth-map evaluation against ground truth.
//!
//! Comparison runs over the pixels valid in both maps. Absolute errors are
//! split at a fixed metric threshold into inliers and gross outliers; the
//! summary statistics (mean, standard deviation, median, NMAD) describe the
//! inliers, accuracy bands report the share of errors within multiples of
//! the ground sampling distance, completeness relates the inlier count to
//! the ground-truth coverage, and a cumulative histogram resolves the
//! inlier error distribution at half-GSD granularity.

use std::path::Path;
use thiserror::Error;

use crate::io::{atomic_write, FormatError};
use crate::regularize::DepthMap;

pub type Result<T> = std::result::Result<T, EvalError>;

/// Errors above this threshold (in meters) count as gross outliers and are
/// excluded from the inlier statistics.
pub const DEFAULT_INLIER_THRESHOLD_M: f64 = 1.5;
/// Accuracy bands reported by default: errors within 1x, 2x, and 3x GSD.
pub const DEFAULT_GSD_MULTIPLES: [f64; 3] = [1.0, 2.0, 3.0];
/// Scales the median absolute deviation to a Gaussian-consistent sigma.
pub const NMAD_SCALE: f64 = 1.4826;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("depth map is {got_w}x{got_h} but ground truth is {want_w}x{want_h}")]
    ShapeMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("the maps share no valid pixels")]
    NoOverlap,
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
}

/// Evaluation parameters; `gsd_m` anchors the relative accuracy bands.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub inlier_threshold_m: f64,
    pub gsd_m: f64,
    pub gsd_multiples: Vec<f64>,
}

impl EvalConfig {
    pub fn new(gsd_m: f64) -> Self {
        Self {
            inlier_threshold_m: DEFAULT_INLIER_THRESHOLD_M,
            gsd_m,
            gsd_multiples: DEFAULT_GSD_MULTIPLES.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold_m.is_finite() && self.inlier_threshold_m > 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold_m
            )));
        }
        if !(self.gsd_m.is_finite() && self.gsd_m > 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "ground sampling distance must be positive, got {}",
                self.gsd_m
            )));
        }
        if let Some(bad) = self
            .gsd_multiples
            .iter()
            .find(|m| !(m.is_finite() && **m > 0.0))
        {
            return Err(EvalError::InvalidConfig(format!(
                "accuracy multiples must be positive, got {bad}"
            )));
        }
        Ok(())
    }
}

/// Share of errors within `multiple * gsd`, under both denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyBand {
    pub multiple: f64,
    pub threshold_m: f64,
    /// Percent of inliers within the band (the canonical reading).
    pub inlier_percent: f64,
    /// Percent of all compared pixels within the band.
    pub compared_percent: f64,
}

/// One cumulative histogram step: percent of inliers at or below the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub upper_edge_m: f64,
    pub cumulative_percent: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Pixels valid in both maps.
    pub compared: usize,
    /// Pixels valid in the ground truth.
    pub gt_valid: usize,
    /// Compared pixels with error below the inlier threshold.
    pub inliers: usize,
    pub inlier_threshold_m: f64,
    pub gsd_m: f64,
    /// Mean absolute error over inliers.
    pub mean_abs_error_m: f64,
    /// Population standard deviation of inlier errors.
    pub std_dev_m: f64,
    /// Median absolute error over inliers.
    pub median_abs_error_m: f64,
    /// Normalized median absolute deviation of inlier errors.
    pub nmad_m: f64,
    pub accuracy: Vec<AccuracyBand>,
    /// Inliers as a percentage of ground-truth-valid pixels.
    pub completeness_percent: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Median by partial selection (no full sort); even lengths average the two
/// middle elements. The slice is reordered in place.
fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Compares `depth` against `ground_truth` pixelwise.
pub fn evaluate(
    depth: &DepthMap,
    ground_truth: &DepthMap,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let (got_w, got_h) = depth.size();
    let (want_w, want_h) = ground_truth.size();
    if (got_w, got_h) != (want_w, want_h) {
        return Err(EvalError::ShapeMismatch {
            got_w,
            got_h,
            want_w,
            want_h,
        });
    }

    let mut errors = Vec::new();
    let mut gt_valid = 0usize;
    for y in 0..got_h {
        for x in 0..got_w {
            if !ground_truth.is_valid(x, y) {
                continue;
            }
            gt_valid += 1;
            if depth.is_valid(x, y) {
                errors.push((depth.value_at(x, y) - ground_truth.value_at(x, y)).abs());
            }
        }
    }
    if errors.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    let compared = errors.len();

    let mut inlier_errors: Vec<f64> = errors
        .iter()
        .copied()
        .filter(|e| *e < config.inlier_threshold_m)
        .collect();
    let inliers = inlier_errors.len();

    let (mean, std_dev, median, nmad) = if inliers > 0 {
        let mean = inlier_errors.iter().sum::<f64>() / inliers as f64;
        let variance = inlier_errors
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / inliers as f64;
        let median = median_in_place(&mut inlier_errors);
        let mut deviations: Vec<f64> =
            inlier_errors.iter().map(|e| (e - median).abs()).collect();
        let nmad = NMAD_SCALE * median_in_place(&mut deviations);
        (mean, variance.sqrt(), median, nmad)
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };

    let accuracy = config
        .gsd_multiples
        .iter()
        .map(|&multiple| {
            let threshold = multiple * config.gsd_m;
            let hits = inlier_errors.iter().filter(|e| **e <= threshold).count();
            AccuracyBand {
                multiple,
                threshold_m: threshold,
                inlier_percent: percent(hits, inliers),
                compared_percent: percent(hits, compared),
            }
        })
        .collect();

    let bin_width = config.gsd_m / 2.0;
    let bin_count = (config.inlier_threshold_m / bin_width).ceil() as usize;
    let histogram = (1..=bin_count)
        .map(|k| {
            let edge = k as f64 * bin_width;
            let hits = inlier_errors.iter().filter(|e| **e <= edge).count();
            HistogramBin {
                upper_edge_m: edge,
                cumulative_percent: percent(hits, inliers),
            }
        })
        .collect();

    Ok(EvalReport {
        compared,
        gt_valid,
        inliers,
        inlier_threshold_m: config.inlier_threshold_m,
        gsd_m: config.gsd_m,
        mean_abs_error_m: mean,
        std_dev_m: std_dev,
        median_abs_error_m: median,
        nmad_m: nmad,
        accuracy,
        completeness_percent: percent(inliers, gt_valid),
        histogram,
    })
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn format_multiple(multiple: f64) -> String {
    if multiple.fract() == 0.0 {
        format!("{multiple:.0}")
    } else {
        format!("{multiple}")
    }
}

/// Writes the report as a `metric,name,value` CSV (atomically).
pub fn write_report_csv(
    report: &EvalReport,
    path: &Path,
) -> std::result::Result<(), FormatError> {
    let mut out = String::from("metric,name,value\n");
    let mut row = |metric: &str, name: &str, value: String| {
        out.push_str(&format!("{metric},{name},{value}\n"));
    };
    row("count", "compared", report.compared.to_string());
    row("count", "ground_truth_valid", report.gt_valid.to_string());
    row("count", "inliers", report.inliers.to_string());
    row(
        "parameter",
        "inlier_threshold_m",
        report.inlier_threshold_m.to_string(),
    );
    row("parameter", "gsd_m", report.gsd_m.to_string());
    row("error", "mean_abs_m", report.mean_abs_error_m.to_string());
    row("error", "std_dev_m", report.std_dev_m.to_string());
    row(
        "error",
        "median_abs_m",
        report.median_abs_error_m.to_string(),
    );
    row("error", "nmad_m", report.nmad_m.to_string());
    row(
        "completeness",
        "inlier_percent_of_gt",
        report.completeness_percent.to_string(),
    );
    for band in &report.accuracy {
        let tag = format_multiple(band.multiple);
        row(
            "accuracy",
            &format!("d_{tag}x_gsd_of_inliers"),
            band.inlier_percent.to_string(),
        );
        row(
            "accuracy",
            &format!("d_{tag}x_gsd_of_compared"),
            band.compared_percent.to_string(),
        );
    }
    atomic_write(path, out.as_bytes())
}

/// Writes the cumulative inlier-error histogram as an
/// `upper_edge_m,cumulative_percent` CSV (atomically).
pub fn write_histogram_csv(
    report: &EvalReport,
    path: &Path,
) -> std::result::Result<(), FormatError> {
    let mut out = String::from("upper_edge_m,cumulative_percent\n");
    for bin in &report.histogram {
        out.push_str(&format!(
            "{},{}\n",
            bin.upper_edge_m, bin.cumulative_percent
        ));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn filled_map(width: u32, height: u32, value: impl Fn(u32, u32) -> f64) -> DepthMap {
        let mut map = DepthMap::new(width, height);
        for y in 0..height {
            for x in 0..width {
                map.set(x, y, value(x, y), 1.0);
            }
        }
        map
    }

    fn random_pair(seed: u64, width: u32, height: u32) -> (DepthMap, DepthMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut depth = DepthMap::new(width, height);
        let mut truth = DepthMap::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let g = 30.0 + rng.random::<f64>() * 20.0;
                if rng.random::<f64>() < 0.9 {
                    truth.set(x, y, g, 1.0);
                }
                if rng.random::<f64>() < 0.85 {
                    // Errors spread to roughly +/- 2 m, beyond the inlier cut.
                    depth.set(x, y, g + (rng.random::<f64>() - 0.5) * 4.0, 1.0);
                }
            }
        }
        (depth, truth)
    }

    #[test]
    fn identical_maps_evaluate_as_perfect() {
        let map = filled_map(8, 6, |x, y| 20.0 + x as f64 * 0.3 + y as f64 * 0.1);
        let report = evaluate(&map, &map, &EvalConfig::new(0.25)).unwrap();
        assert_eq!(report.compared, 48);
        assert_eq!(report.inliers, 48);
        assert_eq!(report.mean_abs_error_m, 0.0);
        assert_eq!(report.std_dev_m, 0.0);
        assert_eq!(report.median_abs_error_m, 0.0);
        assert_eq!(report.nmad_m, 0.0);
        assert_eq!(report.completeness_percent, 100.0);
        for band in &report.accuracy {
            assert_eq!(band.inlier_percent, 100.0);
            assert_eq!(band.compared_percent, 100.0);
        }
    }

    #[test]
    fn constant_bias_matches_the_closed_form() {
        let truth = filled_map(10, 10, |x, y| 40.0 + (x + y) as f64 * 0.05);
        let biased = filled_map(10, 10, |x, y| 40.5 + (x + y) as f64 * 0.05);
        let report = evaluate(&biased, &truth, &EvalConfig::new(0.25)).unwrap();
        assert_relative_eq!(report.mean_abs_error_m, 0.5, epsilon = 1e-12);
        assert_relative_eq!(report.std_dev_m, 0.0, epsilon = 1e-9);
        assert_relative_eq!(report.median_abs_error_m, 0.5, epsilon = 1e-12);
        assert_relative_eq!(report.nmad_m, 0.0, epsilon = 1e-12);
        assert_eq!(report.accuracy[0].multiple, 1.0);
        assert_eq!(report.accuracy[0].inlier_percent, 0.0);
        assert_eq!(report.accuracy[1].inlier_percent, 100.0);
        assert_eq!(report.accuracy[2].inlier_percent, 100.0);
        assert_eq!(report.completeness_percent, 100.0);
    }

    #[test]
    fn shape_mismatch_and_disjoint_validity_are_rejected() {
        let a = filled_map(4, 4, |_, _| 1.0);
        let b = filled_map(4, 5, |_, _| 1.0);
        assert!(matches!(
            evaluate(&a, &b, &EvalConfig::new(0.25)),
            Err(EvalError::ShapeMismatch { .. })
        ));
        let mut left = DepthMap::new(4, 4);
        let mut right = DepthMap::new(4, 4);
        left.set(0, 0, 1.0, 1.0);
        right.set(3, 3, 1.0, 1.0);
        assert!(matches!(
            evaluate(&left, &right, &EvalConfig::new(0.25)),
            Err(EvalError::NoOverlap)
        ));
        assert!(matches!(
            evaluate(&a, &a, &EvalConfig::new(0.0)),
            Err(EvalError::InvalidConfig(_))
        ));
    }

    #[test]
    fn statistics_match_a_sort_based_oracle() {
        for (seed, width, height) in [(1u64, 25, 20), (2, 23, 21), (3, 16, 16)] {
            let (depth, truth) = random_pair(seed, width, height);
            let config = EvalConfig::new(0.25);
            let report = evaluate(&depth, &truth, &config).unwrap();

            // Independent pass: gather errors, then full-sort statistics.
            let mut errors = Vec::new();
            let mut gt_valid = 0usize;
            for y in 0..height {
                for x in 0..width {
                    if truth.is_valid(x, y) {
                        gt_valid += 1;
                        if depth.is_valid(x, y) {
                            errors.push((depth.value_at(x, y) - truth.value_at(x, y)).abs());
                        }
                    }
                }
            }
            let mut inliers: Vec<f64> = errors
                .iter()
                .copied()
                .filter(|e| *e < config.inlier_threshold_m)
                .collect();
            inliers.sort_by(f64::total_cmp);
            let n = inliers.len();
            assert!(n > 50, "seed {seed} produced too few inliers");
            let sorted_median = |xs: &[f64]| {
                if xs.len() % 2 == 1 {
                    xs[xs.len() / 2]
                } else {
                    (xs[xs.len() / 2 - 1] + xs[xs.len() / 2]) / 2.0
                }
            };
            let mean = inliers.iter().sum::<f64>() / n as f64;
            let sigma = (inliers.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                / n as f64)
                .sqrt();
            let median = sorted_median(&inliers);
            let mut deviations: Vec<f64> =
                inliers.iter().map(|e| (e - median).abs()).collect();
            deviations.sort_by(f64::total_cmp);
            let nmad = NMAD_SCALE * sorted_median(&deviations);

            assert_eq!(report.compared, errors.len());
            assert_eq!(report.gt_valid, gt_valid);
            assert_eq!(report.inliers, n);
            assert_relative_eq!(report.mean_abs_error_m, mean, max_relative = 1e-9);
            assert_relative_eq!(report.std_dev_m, sigma, max_relative = 1e-9);
            assert_relative_eq!(report.median_abs_error_m, median, max_relative = 1e-9);
            assert_relative_eq!(report.nmad_m, nmad, max_relative = 1e-9);
            assert_relative_eq!(
                report.completeness_percent,
                100.0 * n as f64 / gt_valid as f64,
                max_relative = 1e-9
            );
            for band in &report.accuracy {
                let hits = inliers.iter().filter(|e| **e <= band.threshold_m).count();
                assert_relative_eq!(
                    band.inlier_percent,
                    100.0 * hits as f64 / n as f64,
                    max_relative = 1e-9
                );
                assert_relative_eq!(
                    band.compared_percent,
                    100.0 * hits as f64 / errors.len() as f64,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn accuracy_and_histogram_are_monotone_and_saturate() {
        for seed in 0..5u64 {
            let (depth, truth) = random_pair(seed, 20, 20);
            let mut config = EvalConfig::new(0.25);
            config.gsd_multiples = vec![0.5, 1.0, 2.0, 3.0, 6.0];
            let report = evaluate(&depth, &truth, &config).unwrap();
            for pair in report.accuracy.windows(2) {
                assert!(pair[0].inlier_percent <= pair[1].inlier_percent);
                assert!(pair[0].compared_percent <= pair[1].compared_percent);
            }
            for pair in report.histogram.windows(2) {
                assert!(pair[0].cumulative_percent <= pair[1].cumulative_percent);
            }
            for bin in &report.histogram {
                assert!(bin.cumulative_percent <= 100.0);
            }
            let last = report.histogram.last().unwrap();
            assert!(last.upper_edge_m >= report.inlier_threshold_m - 1e-12);
            assert_eq!(last.cumulative_percent, 100.0);
        }
    }

    #[test]
    fn error_statistics_are_symmetric_under_swap() {
        let (depth, truth) = random_pair(9, 18, 14);
        let config = EvalConfig::new(0.25);
        // Restrict both maps to the shared footprint so the denominators of
        // the two directions coincide as well.
        let (width, height) = depth.size();
        let mut a = DepthMap::new(width, height);
        let mut b = DepthMap::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if depth.is_valid(x, y) && truth.is_valid(x, y) {
                    a.set(x, y, depth.value_at(x, y), 1.0);
                    b.set(x, y, truth.value_at(x, y), 1.0);
                }
            }
        }
        let forward = evaluate(&a, &b, &config).unwrap();
        let backward = evaluate(&b, &a, &config).unwrap();
        assert_eq!(forward.compared, backward.compared);
        assert_eq!(forward.inliers, backward.inliers);
        assert_eq!(forward.mean_abs_error_m, backward.mean_abs_error_m);
        assert_eq!(forward.std_dev_m, backward.std_dev_m);
        assert_eq!(forward.median_abs_error_m, backward.median_abs_error_m);
        assert_eq!(forward.nmad_m, backward.nmad_m);
        assert_eq!(forward.completeness_percent, backward.completeness_percent);
    }

    #[test]
    fn dropping_predictions_never_raises_completeness() {
        let (depth, truth) = random_pair(4, 20, 20);
        let full = evaluate(&depth, &truth, &EvalConfig::new(0.25)).unwrap();
        let mut sparser = depth.clone();
        let (width, height) = depth.size();
        for y in 0..height {
            for x in 0..width {
                if (x + y) % 3 == 0 {
                    sparser.invalidate(x, y);
                }
            }
        }
        let reduced = evaluate(&sparser, &truth, &EvalConfig::new(0.25)).unwrap();
        assert!(reduced.completeness_percent <= full.completeness_percent);
    }

    #[test]
    fn csv_writers_emit_parseable_tables() {
        let (depth, truth) = random_pair(6, 12, 12);
        let report = evaluate(&depth, &truth, &EvalConfig::new(0.25)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report_path = dir.path().join("report.csv");
        let histogram_path = dir.path().join("hist.csv");
        write_report_csv(&report, &report_path).unwrap();
        write_histogram_csv(&report, &histogram_path).unwrap();

        let text = std::fs::read_to_string(&report_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("metric,name,value"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert!(rows.iter().all(|r| r.len() == 3));
        assert!(rows
            .iter()
            .any(|r| r[0] == "accuracy" && r[1] == "d_1x_gsd_of_inliers"));
        assert!(rows
            .iter()
            .any(|r| r[0] == "accuracy" && r[1] == "d_1x_gsd_of_compared"));
        for row in &rows {
            row[2].parse::<f64>().unwrap();
        }

        let text = std::fs::read_to_string(&histogram_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("upper_edge_m,cumulative_percent"));
        let bins: Vec<&str> = lines.collect();
        assert_eq!(bins.len(), report.histogram.len());
        let last: Vec<&str> = bins.last().unwrap().split(',').collect();
        assert_relative_eq!(
            last[0].parse::<f64>().unwrap(),
            report.inlier_threshold_m,
            epsilon = 1e-9
        );
    }
}
