//! Planar transforms between two image spaces, either as an analytic 3x3
//! homography or as dense forward/inverse coordinate grids, plus the
//! geometry-prior wrapper that composes them with quarter-turn alignment.

use nalgebra::Matrix3;

use super::{GeometryError, Result};

/// Dense per-pixel coordinate map. `xs[i]`/`ys[i]` hold, for each pixel of the
/// grid's own space, a real-valued coordinate in the other space. Undefined
/// cells are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    width: u32,
    height: u32,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl CoordGrid {
    pub fn new(width: u32, height: u32, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if width == 0 || height == 0 || xs.len() != expected || ys.len() != expected {
            return Err(GeometryError::SizeMismatch {
                expected: (width, height),
                got: (xs.len() as u32, ys.len() as u32),
            });
        }
        Ok(Self {
            width,
            height,
            xs,
            ys,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Mapped coordinate stored at an integer pixel (NaN when undefined).
    pub fn at(&self, x: u32, y: u32) -> (f64, f64) {
        let i = y as usize * self.width as usize + x as usize;
        (self.xs[i], self.ys[i])
    }

    /// Bilinear interpolation of the coordinate map at a real-valued position
    /// in the grid's own space. None outside the grid or when any of the four
    /// supporting cells is undefined.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if x > w - 1.0 || y > h - 1.0 {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width as usize - 1);
        let y0 = (y.floor() as usize).min(self.height as usize - 1);
        let x1 = (x0 + 1).min(self.width as usize - 1);
        let y1 = (y0 + 1).min(self.height as usize - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let idx = |xx: usize, yy: usize| yy * self.width as usize + xx;
        let corners = [idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1)];
        let weights = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let mut ox = 0.0;
        let mut oy = 0.0;
        for (&i, &w) in corners.iter().zip(&weights) {
            let (cx, cy) = (self.xs[i], self.ys[i]);
            if !(cx.is_finite() && cy.is_finite()) {
                return None;
            }
            ox += w * cx;
            oy += w * cy;
        }
        Some((ox, oy))
    }
}

/// Representation of a planar transform.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformKind {
    /// 3x3 projective matrix mapping source pixels to target pixels,
    /// normalized so the bottom-right entry is exactly 1.
    Homography(Matrix3<f64>),
    /// Dense maps: `forward` is indexed by source pixels and stores target
    /// coordinates, `inverse` is indexed by target pixels and stores source
    /// coordinates. Both are rasterized from an analytic mapping, never by
    /// numeric inversion of samples.
    Grid {
        forward: CoordGrid,
        inverse: CoordGrid,
    },
}

/// Invertible planar mapping between a source and a target image space.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarTransform {
    kind: TransformKind,
    source_size: (u32, u32),
    target_size: (u32, u32),
}

/// Rotates a point by `k` quarter turns within a `w x h` pixel rectangle.
/// One turn maps the top row onto the rightmost column (clockwise on screen).
fn rotate_point(k: u8, w: u32, h: u32, x: f64, y: f64) -> (f64, f64) {
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    match k % 4 {
        0 => (x, y),
        1 => (hf - y, x),
        2 => (wf - x, hf - y),
        _ => (y, wf - x),
    }
}

/// Image size after `k` quarter turns.
fn rotate_size(k: u8, size: (u32, u32)) -> (u32, u32) {
    if k % 2 == 0 {
        size
    } else {
        (size.1, size.0)
    }
}

impl PlanarTransform {
    /// Wraps a projective matrix, normalizing the bottom-right entry to 1.
    pub fn homography(
        matrix: Matrix3<f64>,
        source_size: (u32, u32),
        target_size: (u32, u32),
    ) -> Result<Self> {
        let scale = matrix[(2, 2)];
        let max_abs = matrix.abs().max();
        if !max_abs.is_finite() || max_abs == 0.0 || scale.abs() < 1e-12 * max_abs {
            return Err(GeometryError::SingularTransform);
        }
        let normalized = matrix / scale;
        if normalized.determinant().abs() < 1e-12 {
            return Err(GeometryError::SingularTransform);
        }
        Ok(Self {
            kind: TransformKind::Homography(normalized),
            source_size,
            target_size,
        })
    }

    /// Identity mapping of one image space onto itself.
    pub fn identity(size: (u32, u32)) -> Self {
        Self {
            kind: TransformKind::Homography(Matrix3::identity()),
            source_size: size,
            target_size: size,
        }
    }

    /// Exact quarter-turn rotation of an image space (`k` in 0..=3).
    pub fn quarter_rotation(k: u8, size: (u32, u32)) -> Result<Self> {
        if k > 3 {
            return Err(GeometryError::InvalidRotationAlign(k));
        }
        let (w, h) = size;
        let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
        #[rustfmt::skip]
        let matrix = match k {
            0 => Matrix3::identity(),
            1 => Matrix3::new(0.0, -1.0, hf,
                              1.0,  0.0, 0.0,
                              0.0,  0.0, 1.0),
            2 => Matrix3::new(-1.0,  0.0, wf,
                               0.0, -1.0, hf,
                               0.0,  0.0, 1.0),
            _ => Matrix3::new(0.0, 1.0, 0.0,
                             -1.0, 0.0, wf,
                              0.0, 0.0, 1.0),
        };
        Self::homography(matrix, size, rotate_size(k, size))
    }

    /// Builds a grid-kind transform from matching dense maps.
    pub fn from_grids(forward: CoordGrid, inverse: CoordGrid) -> Self {
        let source_size = (forward.width(), forward.height());
        let target_size = (inverse.width(), inverse.height());
        Self {
            kind: TransformKind::Grid { forward, inverse },
            source_size,
            target_size,
        }
    }

    pub fn kind(&self) -> &TransformKind {
        &self.kind
    }

    pub fn source_size(&self) -> (u32, u32) {
        self.source_size
    }

    pub fn target_size(&self) -> (u32, u32) {
        self.target_size
    }

    /// Underlying matrix for homography-kind transforms.
    pub fn matrix(&self) -> Option<&Matrix3<f64>> {
        match &self.kind {
            TransformKind::Homography(m) => Some(m),
            TransformKind::Grid { .. } => None,
        }
    }

    /// Maps a source-space point into the target space.
    pub fn map(&self, point: (f64, f64)) -> Option<(f64, f64)> {
        match &self.kind {
            TransformKind::Homography(m) => apply_matrix(m, point),
            TransformKind::Grid { forward, .. } => forward.sample(point.0, point.1),
        }
    }

    /// Maps a target-space point back into the source space.
    pub fn unmap(&self, point: (f64, f64)) -> Option<(f64, f64)> {
        match &self.kind {
            TransformKind::Homography(m) => {
                let inv = m.try_inverse()?;
                apply_matrix(&inv, point)
            }
            TransformKind::Grid { inverse, .. } => inverse.sample(point.0, point.1),
        }
    }

    /// The inverse transform (target becomes source).
    pub fn invert(&self) -> Result<Self> {
        match &self.kind {
            TransformKind::Homography(m) => {
                let inv = m.try_inverse().ok_or(GeometryError::SingularTransform)?;
                Self::homography(inv, self.target_size, self.source_size)
            }
            TransformKind::Grid { forward, inverse } => Ok(Self {
                kind: TransformKind::Grid {
                    forward: inverse.clone(),
                    inverse: forward.clone(),
                },
                source_size: self.target_size,
                target_size: self.source_size,
            }),
        }
    }

    /// Per-output-pixel source lookup, with the homography inverse hoisted out
    /// of the pixel loop. Used by the warping routines.
    pub(crate) fn unmap_fn(&self) -> Result<impl Fn(f64, f64) -> Option<(f64, f64)> + '_> {
        enum Lookup<'a> {
            Matrix(Matrix3<f64>),
            Grid(&'a CoordGrid),
        }
        let lookup = match &self.kind {
            TransformKind::Homography(m) => {
                Lookup::Matrix(m.try_inverse().ok_or(GeometryError::SingularTransform)?)
            }
            TransformKind::Grid { inverse, .. } => Lookup::Grid(inverse),
        };
        Ok(move |x: f64, y: f64| match &lookup {
            Lookup::Matrix(inv) => apply_matrix(inv, (x, y)),
            Lookup::Grid(grid) => grid.sample(x, y),
        })
    }

    /// Composes an extra `k`-quarter-turn rotation after this transform, so
    /// the result maps source pixels into the rotated target space.
    pub fn rotated_target(&self, k: u8) -> Result<Self> {
        if k > 3 {
            return Err(GeometryError::InvalidRotationAlign(k));
        }
        if k == 0 {
            return Ok(self.clone());
        }
        let (tw, th) = self.target_size;
        let new_target = rotate_size(k, self.target_size);
        match &self.kind {
            TransformKind::Homography(m) => {
                let rot = Self::quarter_rotation(k, self.target_size)?;
                let composed = rot.matrix().unwrap() * m;
                Self::homography(composed, self.source_size, new_target)
            }
            TransformKind::Grid { forward, inverse } => {
                // Forward map: rotate each stored target coordinate.
                let n = forward.xs.len();
                let mut fx = Vec::with_capacity(n);
                let mut fy = Vec::with_capacity(n);
                for i in 0..n {
                    let (x, y) = rotate_point(k, tw, th, forward.xs[i], forward.ys[i]);
                    fx.push(x);
                    fy.push(y);
                }
                let new_forward = CoordGrid::new(forward.width(), forward.height(), fx, fy)?;
                // Inverse map: quarter turns permute integer cells exactly, so
                // the rotated inverse grid is a cell permutation of the old one.
                let (nw, nh) = new_target;
                let mut ix = vec![f64::NAN; nw as usize * nh as usize];
                let mut iy = vec![f64::NAN; nw as usize * nh as usize];
                let k_inv = (4 - k) % 4;
                for yy in 0..nh {
                    for xx in 0..nw {
                        let (ox, oy) = rotate_point(k_inv, nw, nh, xx as f64, yy as f64);
                        let (sx, sy) = inverse.at(ox.round() as u32, oy.round() as u32);
                        let i = yy as usize * nw as usize + xx as usize;
                        ix[i] = sx;
                        iy[i] = sy;
                    }
                }
                let new_inverse = CoordGrid::new(nw, nh, ix, iy)?;
                Ok(Self::from_grids(new_forward, new_inverse))
            }
        }
    }

    /// Rasterizes the transform into dense grids: the forward map over all
    /// source pixels and the inverse map over all target pixels, both from
    /// the analytic form.
    pub fn to_grid(&self) -> Result<Self> {
        if matches!(self.kind, TransformKind::Grid { .. }) {
            return Ok(self.clone());
        }
        let (sw, sh) = self.source_size;
        let (tw, th) = self.target_size;
        let mut fx = vec![f64::NAN; sw as usize * sh as usize];
        let mut fy = vec![f64::NAN; sw as usize * sh as usize];
        for y in 0..sh {
            for x in 0..sw {
                if let Some((mx, my)) = self.map((x as f64, y as f64)) {
                    let i = y as usize * sw as usize + x as usize;
                    fx[i] = mx;
                    fy[i] = my;
                }
            }
        }
        let unmap = self.unmap_fn()?;
        let mut ix = vec![f64::NAN; tw as usize * th as usize];
        let mut iy = vec![f64::NAN; tw as usize * th as usize];
        for y in 0..th {
            for x in 0..tw {
                if let Some((mx, my)) = unmap(x as f64, y as f64) {
                    let i = y as usize * tw as usize + x as usize;
                    ix[i] = mx;
                    iy[i] = my;
                }
            }
        }
        Ok(Self::from_grids(
            CoordGrid::new(sw, sh, fx, fy)?,
            CoordGrid::new(tw, th, ix, iy)?,
        ))
    }
}

fn apply_matrix(m: &Matrix3<f64>, (x, y): (f64, f64)) -> Option<(f64, f64)> {
    let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    if w.abs() < 1e-12 {
        return None;
    }
    let ox = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
    let oy = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
    if ox.is_finite() && oy.is_finite() {
        Some((ox, oy))
    } else {
        None
    }
}

/// Which image of a pair a prior transform applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSide {
    Reference,
    Query,
}

/// Alignment transforms for a reference/query pair.
#[derive(Debug, Clone)]
pub enum PriorMode {
    /// Both images are resampled into a row-aligned epipolar geometry.
    Epipolar {
        reference: PlanarTransform,
        query: PlanarTransform,
    },
    /// Only the query is warped (typically by a scene-plane homography); the
    /// reference keeps its native geometry.
    Homography { query: PlanarTransform },
}

/// A geometric alignment prior: a per-side base transform plus an optional
/// quarter-turn rotation applied after it. The rotation lets a
/// direction-sensitive feature extractor or similarity model see residual
/// displacements along its trained axis.
#[derive(Debug, Clone)]
pub struct GeometryPrior {
    mode: PriorMode,
    rotation_align: u8,
}

impl GeometryPrior {
    pub fn new(mode: PriorMode, rotation_align: u8) -> Result<Self> {
        if rotation_align > 3 {
            return Err(GeometryError::InvalidRotationAlign(rotation_align));
        }
        Ok(Self {
            mode,
            rotation_align,
        })
    }

    pub fn epipolar(
        reference: PlanarTransform,
        query: PlanarTransform,
        rotation_align: u8,
    ) -> Result<Self> {
        Self::new(PriorMode::Epipolar { reference, query }, rotation_align)
    }

    pub fn homography(query: PlanarTransform, rotation_align: u8) -> Result<Self> {
        Self::new(PriorMode::Homography { query }, rotation_align)
    }

    pub fn mode(&self) -> &PriorMode {
        &self.mode
    }

    pub fn rotation_align(&self) -> u8 {
        self.rotation_align
    }

    /// The full alignment transform for one side of the pair: the base
    /// transform for that side followed by the quarter-turn rotation. The
    /// image the transform will be applied to must match `native_size`.
    pub fn transform_for(&self, side: PriorSide, native_size: (u32, u32)) -> Result<PlanarTransform> {
        let base = match (&self.mode, side) {
            (PriorMode::Epipolar { reference, .. }, PriorSide::Reference) => reference.clone(),
            (PriorMode::Epipolar { query, .. }, PriorSide::Query) => query.clone(),
            (PriorMode::Homography { query }, PriorSide::Query) => query.clone(),
            (PriorMode::Homography { .. }, PriorSide::Reference) => {
                PlanarTransform::identity(native_size)
            }
        };
        if base.source_size() != native_size {
            return Err(GeometryError::SizeMismatch {
                expected: base.source_size(),
                got: native_size,
            });
        }
        base.rotated_target(self.rotation_align)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_homography() -> Matrix3<f64> {
        // Mild projective warp: rotation + scale + translation + perspective.
        Matrix3::new(
            0.98, -0.12, 3.0, //
            0.12, 0.98, -2.0, //
            1e-5, -2e-5, 1.0,
        )
    }

    #[test]
    fn homography_is_normalized_on_construction() {
        let t = PlanarTransform::homography(sample_homography() * 7.5, (64, 64), (64, 64)).unwrap();
        let m = t.matrix().unwrap();
        assert_relative_eq!(m[(2, 2)], 1.0, epsilon = 0.0);
        assert_relative_eq!(m[(0, 2)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let mut m = sample_homography();
        m.set_row(2, &nalgebra::RowVector3::new(0.0, 0.0, 0.0));
        assert!(matches!(
            PlanarTransform::homography(m, (8, 8), (8, 8)),
            Err(GeometryError::SingularTransform)
        ));
    }

    #[test]
    fn map_unmap_round_trip() {
        let t = PlanarTransform::homography(sample_homography(), (64, 64), (64, 64)).unwrap();
        for &(x, y) in &[(0.0, 0.0), (10.5, 20.25), (63.0, 63.0), (31.7, 5.2)] {
            let fwd = t.map((x, y)).unwrap();
            let back = t.unmap(fwd).unwrap();
            assert_relative_eq!(back.0, x, epsilon = 1e-9);
            assert_relative_eq!(back.1, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn quarter_rotation_is_a_group_of_order_four() {
        let size = (20, 11);
        let r1 = PlanarTransform::quarter_rotation(1, size).unwrap();
        let mut p = (3.0, 7.0);
        let mut cur_size = size;
        for _ in 0..4 {
            let r = PlanarTransform::quarter_rotation(1, cur_size).unwrap();
            p = r.map(p).unwrap();
            cur_size = r.target_size();
        }
        assert_relative_eq!(p.0, 3.0, epsilon = 1e-12);
        assert_relative_eq!(p.1, 7.0, epsilon = 1e-12);
        assert_eq!(cur_size, size);
        // Corner bookkeeping: top-left goes to the top-right corner.
        assert_eq!(r1.target_size(), (11, 20));
        let c = r1.map((0.0, 0.0)).unwrap();
        assert_relative_eq!(c.0, 10.0, epsilon = 1e-12);
        assert_relative_eq!(c.1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_target_composes_rotation_after_base() {
        let t = PlanarTransform::homography(sample_homography(), (64, 64), (64, 64)).unwrap();
        let rotated = t.rotated_target(1).unwrap();
        let r = PlanarTransform::quarter_rotation(1, (64, 64)).unwrap();
        for &(x, y) in &[(5.0, 9.0), (40.0, 33.5)] {
            let via_base = r.map(t.map((x, y)).unwrap()).unwrap();
            let direct = rotated.map((x, y)).unwrap();
            assert_relative_eq!(direct.0, via_base.0, epsilon = 1e-9);
            assert_relative_eq!(direct.1, via_base.1, epsilon = 1e-9);
        }
        assert_eq!(rotated.target_size(), (64, 64));
    }

    #[test]
    fn grid_round_trip_stays_subpixel_on_interior() {
        let t = PlanarTransform::homography(sample_homography(), (64, 64), (64, 64)).unwrap();
        let grid = t.to_grid().unwrap();
        let mut worst: f64 = 0.0;
        for y in 8..56 {
            for x in 8..56 {
                let p = (x as f64, y as f64);
                let Some(fwd) = grid.map(p) else { continue };
                let Some(back) = grid.unmap(fwd) else {
                    continue;
                };
                worst = worst.max((back.0 - p.0).hypot(back.1 - p.1));
            }
        }
        assert!(
            worst < 0.5,
            "forward-then-inverse drift {worst} exceeds half a pixel"
        );
    }

    #[test]
    fn grid_rotation_matches_homography_rotation() {
        let t = PlanarTransform::homography(sample_homography(), (32, 24), (32, 24)).unwrap();
        let rotated_analytic = t.rotated_target(3).unwrap();
        let rotated_grid = t.to_grid().unwrap().rotated_target(3).unwrap();
        assert_eq!(rotated_grid.target_size(), rotated_analytic.target_size());
        // The grid interpolates the projective map bilinearly, so fractional
        // probe points carry a few 1e-6 of interpolation error; a composition
        // mistake would be off by whole pixels.
        for &(x, y) in &[(4.0, 6.0), (20.0, 12.0), (15.5, 8.25)] {
            let a = rotated_analytic.map((x, y)).unwrap();
            let g = rotated_grid.map((x, y)).unwrap();
            assert_relative_eq!(a.0, g.0, epsilon = 1e-4);
            assert_relative_eq!(a.1, g.1, epsilon = 1e-4);
        }
    }

    #[test]
    fn prior_side_selection_and_rotation() {
        let q = PlanarTransform::homography(sample_homography(), (64, 64), (64, 64)).unwrap();
        let prior = GeometryPrior::homography(q.clone(), 1).unwrap();
        let t_ref = prior.transform_for(PriorSide::Reference, (64, 64)).unwrap();
        let t_query = prior.transform_for(PriorSide::Query, (64, 64)).unwrap();
        // Reference side is the bare rotation.
        let r = PlanarTransform::quarter_rotation(1, (64, 64)).unwrap();
        let p = (12.0, 30.0);
        assert_eq!(t_ref.map(p), r.map(p));
        // Query side composes the homography first.
        let expected = r.map(q.map(p).unwrap()).unwrap();
        let got = t_query.map(p).unwrap();
        assert_relative_eq!(got.0, expected.0, epsilon = 1e-9);
        assert_relative_eq!(got.1, expected.1, epsilon = 1e-9);
        // Size mismatch is caught.
        assert!(prior.transform_for(PriorSide::Query, (32, 32)).is_err());
        assert!(GeometryPrior::homography(q, 4).is_err());
    }
}
