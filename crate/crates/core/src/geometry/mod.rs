//! Pinhole cameras, planar transforms, robust homography estimation and
//! calibrated epipolar rectification.
//!
//! A camera is parameterized by a single focal length (square pixels), a
//! principal point, a world-to-camera rotation and an optical center:
//!
//! ```text
//! p_cam = R (X - C)
//! pixel = focal * (p_cam.x / p_cam.z, p_cam.y / p_cam.z) + principal_point
//! ```
//!
//! Back-projection inverts this either at a fixed ray depth (z in the camera
//! frame) or by intersecting the viewing ray with a horizontal world plane
//! Z = elevation.

mod homography;
mod rectify;
mod transform;

pub use homography::{estimate_homography, Correspondence, HomographyEstimate, RansacConfig};
pub use rectify::{rectify_calibrated, RectifiedPair};
pub use transform::{
    CoordGrid, GeometryPrior, PlanarTransform, PriorMode, PriorSide, TransformKind,
};

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Smallest camera-frame depth treated as "in front of" the camera.
pub const MIN_RAY_DEPTH: f64 = 1e-9;

/// Orthonormality tolerance for camera rotations.
const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("degenerate projection: point at or behind the camera")]
    DegenerateProjection,
    #[error("viewing ray is parallel to the elevation plane")]
    RayParallelToPlane,
    #[error("transform matrix is singular or cannot be normalized")]
    SingularTransform,
    #[error("output size {got:?} does not match transform target size {expected:?}")]
    SizeMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("no consensus: best support {best} below required {required}")]
    NoConsensus { best: usize, required: usize },
    #[error("camera centers coincide")]
    IdenticalCenters,
    #[error("baseline is parallel to the optical axis")]
    DegenerateRectification,
    #[error("rotation alignment must be a quarter-turn count in 0..=3, got {0}")]
    InvalidRotationAlign(u8),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Depth parameterization for back-projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthSpec {
    /// z coordinate in the camera frame, must be positive.
    Ray(f64),
    /// World Z of the horizontal plane the viewing ray is intersected with.
    Elevation(f64),
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Pixel position (pixel centers at integer coordinates).
    pub pixel: Vector2<f64>,
    /// Ray depth (z in the camera frame), always > [`MIN_RAY_DEPTH`].
    pub depth: f64,
}

/// Calibrated pinhole camera with a world-to-camera rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPinhole {
    focal: f64,
    principal_point: Vector2<f64>,
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
    width: u32,
    height: u32,
}

impl CameraPinhole {
    /// Builds a camera, validating every invariant: positive finite focal,
    /// principal point inside the image, orthonormal right-handed rotation,
    /// finite center, positive image size.
    pub fn new(
        focal: f64,
        principal_point: Vector2<f64>,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal must be finite and positive, got {focal}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        let (px, py) = (principal_point.x, principal_point.y);
        if !(px.is_finite() && py.is_finite())
            || px < 0.0
            || py < 0.0
            || px > (width - 1) as f64
            || py > (height - 1) as f64
        {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({px}, {py}) outside image bounds {width}x{height}"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOL {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation is not orthonormal (|R^T R - I| = {ortho_err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation determinant must be +1, got {det}"
            )));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidCamera(
                "camera center must be finite".into(),
            ));
        }
        Ok(Self {
            focal,
            principal_point,
            rotation,
            center,
            width,
            height,
        })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        self.principal_point
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Intrinsic matrix `K = [[f, 0, cx], [0, f, cy], [0, 0, 1]]`.
    #[rustfmt::skip]
    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal, 0.0,        self.principal_point.x,
            0.0,        self.focal, self.principal_point.y,
            0.0,        0.0,        1.0,
        )
    }

    /// Camera viewing direction (+z axis of the camera frame) in world
    /// coordinates.
    pub fn viewing_direction(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Projects a world point to a pixel and its ray depth.
    ///
    /// Fails with [`GeometryError::DegenerateProjection`] when the point lies
    /// at or behind the camera plane (z <= [`MIN_RAY_DEPTH`]).
    pub fn project(&self, point: &Vector3<f64>) -> Result<Projection> {
        let p_cam = self.rotation * (point - self.center);
        if p_cam.z <= MIN_RAY_DEPTH {
            return Err(GeometryError::DegenerateProjection);
        }
        let pixel = Vector2::new(
            self.focal * (p_cam.x / p_cam.z) + self.principal_point.x,
            self.focal * (p_cam.y / p_cam.z) + self.principal_point.y,
        );
        Ok(Projection {
            pixel,
            depth: p_cam.z,
        })
    }

    /// Inverts projection for one pixel.
    ///
    /// In [`DepthSpec::Ray`] mode the point is placed at the given camera-frame
    /// depth (must be positive). In [`DepthSpec::Elevation`] mode the viewing
    /// ray is intersected with the world plane Z = elevation; the intersection
    /// may lie behind the camera, in which case a subsequent `project` reports
    /// the degeneracy.
    pub fn backproject(&self, pixel: Vector2<f64>, depth: DepthSpec) -> Result<Vector3<f64>> {
        let dir_cam = Vector3::new(
            (pixel.x - self.principal_point.x) / self.focal,
            (pixel.y - self.principal_point.y) / self.focal,
            1.0,
        );
        let dir_world = self.rotation.transpose() * dir_cam;
        match depth {
            DepthSpec::Ray(z) => {
                if !(z.is_finite() && z > MIN_RAY_DEPTH) {
                    return Err(GeometryError::DegenerateProjection);
                }
                Ok(self.center + dir_world * z)
            }
            DepthSpec::Elevation(elevation) => {
                if dir_world.z.abs() < 1e-12 * dir_world.norm() {
                    return Err(GeometryError::RayParallelToPlane);
                }
                let t = (elevation - self.center.z) / dir_world.z;
                Ok(self.center + dir_world * t)
            }
        }
    }

    /// True when a real-valued pixel lies at least `margin` pixels inside the
    /// image rectangle `[0, w-1] x [0, h-1]`.
    pub fn in_frame(&self, pixel: Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= (self.width - 1) as f64 - margin
            && pixel.y <= (self.height - 1) as f64 - margin
    }

    /// Camera for an image downscaled by an integer factor with 2x2-style box
    /// averaging: a downscaled pixel center falls on the mean of the source
    /// pixel centers it covers, so `x_old = f * x_new + (f - 1) / 2`.
    pub fn downscaled(&self, factor: u32) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "downscale factor {factor} does not divide image size {}x{}",
                self.width, self.height
            )));
        }
        let f = factor as f64;
        let shift = (f - 1.0) / 2.0;
        Self::new(
            self.focal / f,
            Vector2::new(
                (self.principal_point.x - shift) / f,
                (self.principal_point.y - shift) / f,
            ),
            self.rotation,
            self.center,
            self.width / factor,
            self.height / factor,
        )
    }
}

/// Test helper: downward-looking camera at the given altitude, world X =
/// image x. Shared by test modules across the crate.
#[cfg(test)]
pub(crate) fn nadir_camera(width: u32, height: u32, focal: f64, altitude: f64) -> CameraPinhole {
    let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    CameraPinhole::new(
        focal,
        Vector2::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0),
        rotation,
        Vector3::new(0.0, 0.0, altitude),
        width,
        height,
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent projection oracle: explicit 3x4 matrix P = K [R | -R C]
    /// applied to homogeneous coordinates.
    fn project_oracle(cam: &CameraPinhole, point: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let k = cam.intrinsic_matrix();
        let r = *cam.rotation();
        let t = -r * cam.center();
        let m = k * r;
        let p4 = k * t;
        let h = m * point + p4;
        (Vector2::new(h.x / h.z, h.y / h.z), h.z)
    }

    #[test]
    fn rejects_invalid_cameras() {
        let r = Matrix3::identity();
        let pp = Vector2::new(32.0, 32.0);
        let c = Vector3::zeros();
        assert!(matches!(
            CameraPinhole::new(-1.0, pp, r, c, 64, 64),
            Err(GeometryError::InvalidCamera(_))
        ));
        assert!(matches!(
            CameraPinhole::new(100.0, Vector2::new(500.0, 32.0), r, c, 64, 64),
            Err(GeometryError::InvalidCamera(_))
        ));
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            CameraPinhole::new(100.0, pp, skewed, c, 64, 64),
            Err(GeometryError::InvalidCamera(_))
        ));
        // Reflection: orthonormal but det -1.
        let mirror = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            CameraPinhole::new(100.0, pp, mirror, c, 64, 64),
            Err(GeometryError::InvalidCamera(_))
        ));
    }

    #[test]
    fn project_matches_explicit_matrix_oracle() {
        let cam = nadir_camera(128, 96, 200.0, 50.0);
        let points = [
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(-4.0, 7.5, 10.0),
            Vector3::new(12.0, -3.0, 0.0),
        ];
        for p in &points {
            let got = cam.project(p).unwrap();
            let (pix, depth) = project_oracle(&cam, p);
            assert_relative_eq!(got.pixel.x, pix.x, max_relative = 1e-12);
            assert_relative_eq!(got.pixel.y, pix.y, max_relative = 1e-12);
            assert_relative_eq!(got.depth, depth, max_relative = 1e-12);
        }
    }

    #[test]
    fn project_principal_ray_hits_principal_point() {
        let cam = nadir_camera(64, 64, 120.0, 100.0);
        // A point straight below the camera sits on the optical axis.
        let p = cam.project(&Vector3::new(0.0, 0.0, 20.0)).unwrap();
        assert_relative_eq!(p.pixel.x, 31.5, epsilon = 1e-12);
        assert_relative_eq!(p.pixel.y, 31.5, epsilon = 1e-12);
        assert_relative_eq!(p.depth, 80.0, epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        let cam = nadir_camera(64, 64, 120.0, 100.0);
        // Above the camera = behind a downward-looking camera.
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 150.0)),
            Err(GeometryError::DegenerateProjection)
        ));
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 100.0)),
            Err(GeometryError::DegenerateProjection)
        ));
    }

    #[test]
    fn backproject_ray_round_trips() {
        let cam = nadir_camera(128, 128, 300.0, 80.0);
        for &(x, y, z) in &[(0.0, 0.0, 5.0), (100.5, 17.25, 42.0), (127.0, 127.0, 0.5)] {
            let pixel = Vector2::new(x, y);
            let point = cam.backproject(pixel, DepthSpec::Ray(z)).unwrap();
            let proj = cam.project(&point).unwrap();
            assert_relative_eq!(proj.pixel.x, x, epsilon = 1e-9);
            assert_relative_eq!(proj.pixel.y, y, epsilon = 1e-9);
            assert_relative_eq!(proj.depth, z, epsilon = 1e-9);
        }
    }

    #[test]
    fn backproject_elevation_lands_on_plane() {
        let cam = nadir_camera(128, 128, 300.0, 80.0);
        for &(x, y, elev) in &[(3.0, 90.0, 0.0), (64.0, 64.0, 12.5), (120.0, 5.0, -4.0)] {
            let pixel = Vector2::new(x, y);
            let point = cam.backproject(pixel, DepthSpec::Elevation(elev)).unwrap();
            assert_relative_eq!(point.z, elev, epsilon = 1e-9);
            let proj = cam.project(&point).unwrap();
            assert_relative_eq!(proj.pixel.x, x, epsilon = 1e-9);
            assert_relative_eq!(proj.pixel.y, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn backproject_elevation_rejects_parallel_ray() {
        // Horizontal-looking camera: rays through the principal point run
        // parallel to any Z plane.
        let rotation = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let cam = CameraPinhole::new(
            100.0,
            Vector2::new(31.5, 31.5),
            rotation,
            Vector3::new(0.0, 0.0, 10.0),
            64,
            64,
        )
        .unwrap();
        assert!(matches!(
            cam.backproject(Vector2::new(31.5, 31.5), DepthSpec::Elevation(0.0)),
            Err(GeometryError::RayParallelToPlane)
        ));
    }

    #[test]
    fn downscaled_camera_preserves_pixel_centers() {
        let cam = nadir_camera(128, 128, 300.0, 80.0);
        let half = cam.downscaled(2).unwrap();
        // The same world point must land on corresponding pixel centers:
        // x_old = 2 * x_new + 0.5.
        let p = Vector3::new(7.0, -11.0, 3.0);
        let full = cam.project(&p).unwrap();
        let down = half.project(&p).unwrap();
        assert_relative_eq!(full.pixel.x, 2.0 * down.pixel.x + 0.5, epsilon = 1e-9);
        assert_relative_eq!(full.pixel.y, 2.0 * down.pixel.y + 0.5, epsilon = 1e-9);
        assert_relative_eq!(full.depth, down.depth, epsilon = 1e-12);
    }
}
