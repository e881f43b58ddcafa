//! Incremental Delaunay triangulation (Bowyer–Watson) over 2D points.
//!
//! Points are inserted one at a time into a super-triangle enclosing the
//! whole set; every triangle whose circumcircle strictly contains the new
//! point is removed, and the resulting cavity is re-triangulated against the
//! point. Points exactly on a circumcircle count as outside, which is the
//! standard tie-break that keeps cocircular grids valid. Exact duplicate
//! points are dropped silently.

use std::collections::BTreeMap;

use super::{GroundTruthError, Result};

#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Index triples into the input point slice, counter-clockwise.
    pub triangles: Vec<[usize; 3]>,
}

/// Twice the signed area of the triangle (positive = counter-clockwise).
fn signed_area2(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn oriented(points: &[(f64, f64)], tri: [usize; 3]) -> Option<[usize; 3]> {
    let area = signed_area2(points[tri[0]], points[tri[1]], points[tri[2]]);
    if area > 0.0 {
        Some(tri)
    } else if area < 0.0 {
        Some([tri[0], tri[2], tri[1]])
    } else {
        None
    }
}

/// Strict circumcircle containment for a counter-clockwise triangle.
fn in_circumcircle(points: &[(f64, f64)], tri: [usize; 3], p: (f64, f64)) -> bool {
    let rel = |i: usize| {
        let (x, y) = points[i];
        (x - p.0, y - p.1)
    };
    let (ax, ay) = rel(tri[0]);
    let (bx, by) = rel(tri[1]);
    let (cx, cy) = rel(tri[2]);
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    det > 0.0
}

/// Triangulates the point set. Needs at least three points; an entirely
/// collinear set has no triangulation and is rejected.
pub fn triangulate(points: &[(f64, f64)]) -> Result<Triangulation> {
    let n = points.len();
    if n < 3 {
        return Err(GroundTruthError::TooFewSamples { needed: 3, got: n });
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1.0);
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);

    // Working point list: the inputs plus a super-triangle big enough that
    // its circumcircles do not interfere with interior Delaunay edges.
    let mut pts = points.to_vec();
    pts.push((cx - 8.0 * span, cy - 4.0 * span));
    pts.push((cx + 8.0 * span, cy - 4.0 * span));
    pts.push((cx, cy + 8.0 * span));
    let super_base = n;

    let mut triangles: Vec<[usize; 3]> =
        vec![oriented(&pts, [super_base, super_base + 1, super_base + 2]).unwrap()];

    for p in 0..n {
        let point = pts[p];
        let bad: Vec<usize> = (0..triangles.len())
            .filter(|&t| in_circumcircle(&pts, triangles[t], point))
            .collect();
        if bad.is_empty() {
            // Exact duplicate of an existing vertex: nothing to insert.
            continue;
        }
        // Boundary of the cavity: edges used by exactly one bad triangle.
        // BTreeMap keeps the rebuild order deterministic.
        let mut edge_uses: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for &t in &bad {
            let [a, b, c] = triangles[t];
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *edge_uses.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        for &t in bad.iter().rev() {
            triangles.swap_remove(t);
        }
        for (&(u, v), &uses) in &edge_uses {
            if uses == 1 {
                if let Some(tri) = oriented(&pts, [u, v, p]) {
                    triangles.push(tri);
                }
            }
        }
    }

    triangles.retain(|tri| tri.iter().all(|&v| v < super_base));
    if triangles.is_empty() {
        return Err(GroundTruthError::CollinearInput);
    }
    Ok(Triangulation { triangles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Circumcircle test usable as an oracle, with a tolerance band so
    /// cocircular configurations are not flagged.
    fn strictly_inside(points: &[(f64, f64)], tri: [usize; 3], p: (f64, f64), tol: f64) -> bool {
        let rel = |i: usize| {
            let (x, y) = points[i];
            (x - p.0, y - p.1)
        };
        let (ax, ay) = rel(tri[0]);
        let (bx, by) = rel(tri[1]);
        let (cx, cy) = rel(tri[2]);
        let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
            - (bx * bx + by * by) * (ax * cy - cx * ay)
            + (cx * cx + cy * cy) * (ax * by - bx * ay);
        det > tol
    }

    #[test]
    fn square_produces_two_triangles_covering_it() {
        let points = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        let tri = triangulate(&points).unwrap();
        assert_eq!(tri.triangles.len(), 2);
        let total_area: f64 = tri
            .triangles
            .iter()
            .map(|t| signed_area2(points[t[0]], points[t[1]], points[t[2]]) / 2.0)
            .sum();
        assert!((total_area - 16.0).abs() < 1e-9);
        // All triangles CCW.
        for t in &tri.triangles {
            assert!(signed_area2(points[t[0]], points[t[1]], points[t[2]]) > 0.0);
        }
    }

    #[test]
    fn rejects_too_few_and_collinear_inputs() {
        assert!(matches!(
            triangulate(&[(0.0, 0.0), (1.0, 1.0)]),
            Err(GroundTruthError::TooFewSamples { needed: 3, got: 2 })
        ));
        let line: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(
            triangulate(&line),
            Err(GroundTruthError::CollinearInput)
        ));
    }

    #[test]
    fn duplicate_points_are_dropped_not_fatal() {
        let points = [(0.0, 0.0), (4.0, 0.0), (2.0, 3.0), (4.0, 0.0)];
        let tri = triangulate(&points).unwrap();
        assert_eq!(tri.triangles.len(), 1);
        assert!(!tri.triangles[0].contains(&3));
    }

    #[test]
    fn grid_points_triangulate_fully() {
        // Cocircular quadruples everywhere; the tie-break must still yield a
        // full cover: a k x k grid has 2 (k-1)^2 triangles.
        let mut points = Vec::new();
        for y in 0..5 {
            for x in 0..5 {
                points.push((x as f64, y as f64));
            }
        }
        let tri = triangulate(&points).unwrap();
        assert_eq!(tri.triangles.len(), 32);
        let total_area: f64 = tri
            .triangles
            .iter()
            .map(|t| signed_area2(points[t[0]], points[t[1]], points[t[2]]) / 2.0)
            .sum();
        assert!((total_area - 16.0).abs() < 1e-9);
    }

    proptest! {
        /// The defining property: no input point lies strictly inside the
        /// circumcircle of any output triangle (brute force over all pairs).
        #[test]
        fn no_point_strictly_inside_any_circumcircle(seed in 0u64..200) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(8..40);
            // Snap to a quarter-pixel grid so cocircular/collinear ties occur.
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0,
                        (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0,
                    )
                })
                .collect();
            let Ok(tri) = triangulate(&points) else {
                // Degenerate draws (all collinear after snapping) are legal.
                return Ok(());
            };
            for t in &tri.triangles {
                for (i, &p) in points.iter().enumerate() {
                    if t.contains(&i) {
                        continue;
                    }
                    prop_assert!(
                        !strictly_inside(&points, *t, p, 1e-6),
                        "point {i} inside circumcircle of {t:?}"
                    );
                }
            }
        }
    }
}
