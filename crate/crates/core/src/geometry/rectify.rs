//! Calibrated epipolar rectification of a camera pair.
//!
//! Both cameras are re-oriented to a shared rotation whose x axis runs along
//! the baseline, with a shared mean focal length and mean principal point, so
//! that any world point visible in both images projects to the same row.

use nalgebra::{Matrix3, Vector3};

use super::{CameraPinhole, GeometryError, PlanarTransform, Result};

/// Output of [`rectify_calibrated`]: pixel transforms from each original
/// image into its rectified frame, plus the rectified cameras (which share
/// rotation, focal and principal point).
#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub transform_a: PlanarTransform,
    pub transform_b: PlanarTransform,
    pub camera_a: CameraPinhole,
    pub camera_b: CameraPinhole,
}

/// Rectifies a calibrated camera pair into row-aligned epipolar geometry.
///
/// The shared rectified rotation takes the baseline as its x axis and keeps
/// the first camera's viewing direction as close as possible; the rectified
/// intrinsics use the mean focal length and mean principal point of the pair.
/// An already row-aligned pair (identical rotations and intrinsics, pure
/// x-baseline) maps to itself up to floating-point noise.
pub fn rectify_calibrated(a: &CameraPinhole, b: &CameraPinhole) -> Result<RectifiedPair> {
    let baseline = b.center() - a.center();
    if baseline.norm() < 1e-9 {
        return Err(GeometryError::IdenticalCenters);
    }
    let x_axis = baseline.normalize();
    // Old viewing direction of camera A in world coordinates.
    let view_a: Vector3<f64> = a.viewing_direction();
    let y_axis_raw = view_a.cross(&x_axis);
    if y_axis_raw.norm() < 1e-9 {
        return Err(GeometryError::DegenerateRectification);
    }
    let y_axis = y_axis_raw.normalize();
    let z_axis = x_axis.cross(&y_axis);

    let rotation = Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        z_axis.transpose(),
    ]);

    let focal = 0.5 * (a.focal() + b.focal());
    let pp = 0.5 * (a.principal_point() + b.principal_point());
    let width = a.width().max(b.width());
    let height = a.height().max(b.height());

    let camera_a = CameraPinhole::new(focal, pp, rotation, a.center(), width, height)?;
    let camera_b = CameraPinhole::new(focal, pp, rotation, b.center(), width, height)?;

    let transform_a = rectifying_transform(a, &camera_a)?;
    let transform_b = rectifying_transform(b, &camera_b)?;

    Ok(RectifiedPair {
        transform_a,
        transform_b,
        camera_a,
        camera_b,
    })
}

/// Pixel homography from an original camera to its rectified counterpart
/// (same optical center, new rotation/intrinsics):
/// `H = K_new R_new R_old^T K_old^-1`.
fn rectifying_transform(old: &CameraPinhole, new: &CameraPinhole) -> Result<PlanarTransform> {
    let k_old_inv = old
        .intrinsic_matrix()
        .try_inverse()
        .ok_or(GeometryError::SingularTransform)?;
    let h = new.intrinsic_matrix() * new.rotation() * old.rotation().transpose() * k_old_inv;
    PlanarTransform::homography(h, old.size(), new.size())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DepthSpec;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rotation_zyx(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
        let rz = Matrix3::new(
            yaw.cos(),
            -yaw.sin(),
            0.0,
            yaw.sin(),
            yaw.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let ry = Matrix3::new(
            pitch.cos(),
            0.0,
            pitch.sin(),
            0.0,
            1.0,
            0.0,
            -pitch.sin(),
            0.0,
            pitch.cos(),
        );
        let rx = Matrix3::new(
            1.0,
            0.0,
            0.0,
            0.0,
            roll.cos(),
            -roll.sin(),
            0.0,
            roll.sin(),
            roll.cos(),
        );
        rz * ry * rx
    }

    fn nadir_rotation() -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
    }

    #[test]
    fn aligned_pair_maps_to_identity() {
        let pp = Vector2::new(63.5, 63.5);
        let a = CameraPinhole::new(
            200.0,
            pp,
            nadir_rotation(),
            Vector3::new(0.0, 0.0, 100.0),
            128,
            128,
        )
        .unwrap();
        let b = CameraPinhole::new(
            200.0,
            pp,
            nadir_rotation(),
            Vector3::new(6.0, 0.0, 100.0),
            128,
            128,
        )
        .unwrap();
        let pair = rectify_calibrated(&a, &b).unwrap();
        for t in [&pair.transform_a, &pair.transform_b] {
            let m = t.matrix().unwrap();
            let err = (m - Matrix3::identity()).abs().max();
            assert!(err < 1e-6, "transform deviates from identity by {err}");
        }
    }

    #[test]
    fn rows_align_for_common_points() {
        // Perturbed rig: both cameras tilted differently, baseline mostly x.
        let base = nadir_rotation();
        let a = CameraPinhole::new(
            210.0,
            Vector2::new(63.0, 64.0),
            rotation_zyx(0.03, -0.02, 0.01) * base,
            Vector3::new(0.0, 0.0, 100.0),
            128,
            128,
        )
        .unwrap();
        let b = CameraPinhole::new(
            190.0,
            Vector2::new(64.0, 63.0),
            rotation_zyx(-0.02, 0.015, -0.03) * base,
            Vector3::new(7.0, 0.4, 99.5),
            128,
            128,
        )
        .unwrap();
        let pair = rectify_calibrated(&a, &b).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        for _ in 0..200 {
            let p = Vector3::new(
                rng.random_range(-15.0..15.0),
                rng.random_range(-15.0..15.0),
                rng.random_range(0.0..10.0),
            );
            let (Ok(pa), Ok(pb)) = (a.project(&p), b.project(&p)) else {
                continue;
            };
            let Some(ra) = pair.transform_a.map((pa.pixel.x, pa.pixel.y)) else {
                continue;
            };
            let Some(rb) = pair.transform_b.map((pb.pixel.x, pb.pixel.y)) else {
                continue;
            };
            assert!(
                (ra.1 - rb.1).abs() < 0.1,
                "row residual {} for point {p:?}",
                (ra.1 - rb.1).abs()
            );
            checked += 1;
        }
        assert!(checked > 150, "only {checked} points landed in both frames");
    }

    #[test]
    fn rectified_cameras_agree_with_transforms() {
        // Projecting through the rectified camera must equal mapping the
        // original projection through the rectifying transform.
        let a = CameraPinhole::new(
            200.0,
            Vector2::new(63.5, 63.5),
            rotation_zyx(0.02, 0.01, -0.015) * nadir_rotation(),
            Vector3::new(0.0, 0.0, 80.0),
            128,
            128,
        )
        .unwrap();
        let b = CameraPinhole::new(
            200.0,
            Vector2::new(63.5, 63.5),
            nadir_rotation(),
            Vector3::new(5.0, -0.3, 80.0),
            128,
            128,
        )
        .unwrap();
        let pair = rectify_calibrated(&a, &b).unwrap();
        let p = Vector3::new(2.0, -3.0, 4.0);
        let orig = a.project(&p).unwrap();
        let mapped = pair.transform_a.map((orig.pixel.x, orig.pixel.y)).unwrap();
        let direct = pair.camera_a.project(&p).unwrap();
        assert_relative_eq!(mapped.0, direct.pixel.x, epsilon = 1e-9);
        assert_relative_eq!(mapped.1, direct.pixel.y, epsilon = 1e-9);
    }

    #[test]
    fn identical_centers_rejected() {
        let a = CameraPinhole::new(
            200.0,
            Vector2::new(63.5, 63.5),
            nadir_rotation(),
            Vector3::new(0.0, 0.0, 100.0),
            128,
            128,
        )
        .unwrap();
        assert!(matches!(
            rectify_calibrated(&a, &a.clone()),
            Err(GeometryError::IdenticalCenters)
        ));
    }

    #[test]
    fn round_trip_through_rectified_frames() {
        let a = CameraPinhole::new(
            205.0,
            Vector2::new(63.5, 63.5),
            rotation_zyx(0.01, -0.02, 0.005) * nadir_rotation(),
            Vector3::new(-1.0, 0.2, 90.0),
            128,
            128,
        )
        .unwrap();
        let b = CameraPinhole::new(
            195.0,
            Vector2::new(64.0, 63.0),
            rotation_zyx(-0.015, 0.01, 0.02) * nadir_rotation(),
            Vector3::new(5.5, -0.1, 91.0),
            128,
            128,
        )
        .unwrap();
        let pair = rectify_calibrated(&a, &b).unwrap();
        // Rectified rays intersected with a world plane must re-project into
        // the original image where they started.
        for &(x, y) in &[(20.0, 30.0), (64.0, 64.0), (100.0, 90.0)] {
            let rect = pair.transform_a.map((x, y)).unwrap();
            let world = pair
                .camera_a
                .backproject(Vector2::new(rect.0, rect.1), DepthSpec::Elevation(3.0))
                .unwrap();
            let back = a.project(&world).unwrap();
            assert_relative_eq!(back.pixel.x, x, epsilon = 1e-9);
            assert_relative_eq!(back.pixel.y, y, epsilon = 1e-9);
        }
    }
}
