//! Pinhole camera model, rigid poses, rays, projection, and back-projection.
//!
//! Conventions used throughout the crate:
//! - camera frame: +z forward, +x right, +y down (OpenCV style);
//! - depth values are Euclidean ray distances from the camera center,
//!   never z-depth;
//! - pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; rays pass through the
//!   pixel center `(i + 0.5, j + 0.5)`. Continuous pixel coordinates are
//!   reported in the pixel-center frame, where the value `i.0` lies exactly
//!   at the center of column `i`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

use crate::scalar::{sc, to_f64, Scalar};

/// Camera-frame z below this counts as behind the camera.
const BEHIND_CAMERA_Z: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("ray distance must be positive, got {0}")]
    NonPositiveDistance(f64),
}

/// Pinhole intrinsics. Focal lengths and principal point are in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Scalar> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeomError> {
        let bad = |msg: String| Err(GeomError::InvalidIntrinsics(msg));
        for (name, v) in [("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)] {
            if !v.is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        if fx <= T::zero() || fy <= T::zero() {
            return bad(format!("focal lengths must be positive, got fx={fx}, fy={fy}"));
        }
        if width == 0 || height == 0 {
            return bad(format!("image size must be at least 1x1, got {width}x{height}"));
        }
        if cx < T::zero() || cx >= sc(width as f64) || cy < T::zero() || cy >= sc(height as f64) {
            return bad(format!("principal point ({cx}, {cy}) outside {width}x{height} image"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }

    fn check_pixel(&self, x: u32, y: u32) -> Result<(), GeomError> {
        if self.contains_pixel(x, y) {
            Ok(())
        } else {
            Err(GeomError::PixelOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            })
        }
    }
}

/// Rigid camera-to-world transform.
///
/// `rotation` columns are the camera axes expressed in world coordinates;
/// `translation` is the camera center. Constructors validate orthonormality
/// and a +1 determinant, so a `Pose` is always a proper rigid motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose<T: Scalar> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeomError> {
        let tol = sc::<T>(1e-6).max(T::machine_epsilon() * sc(256.0));
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > tol {
            return Err(GeomError::InvalidPose(format!(
                "rotation is not orthonormal (max |R^T R - I| = {ortho_err})"
            )));
        }
        let det = rotation.determinant();
        if (det - T::one()).abs() > tol {
            return Err(GeomError::InvalidPose(format!(
                "rotation determinant must be +1, got {det}"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidPose("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a pose at `eye` looking toward `target`.
    ///
    /// `down_hint` fixes the roll: the camera +y axis is the hint projected
    /// onto the plane orthogonal to the view direction. World "up" scenes
    /// therefore pass the world *down* vector here.
    pub fn look_at(
        eye: Vector3<T>,
        target: Vector3<T>,
        down_hint: Vector3<T>,
    ) -> Result<Self, GeomError> {
        let forward = target - eye;
        if forward.norm() <= sc(1e-12) {
            return Err(GeomError::InvalidPose("look_at eye equals target".into()));
        }
        let z = forward.normalize();
        let y_raw = down_hint - z * down_hint.dot(&z);
        if y_raw.norm() <= sc(1e-9) {
            return Err(GeomError::InvalidPose(
                "look_at down hint is parallel to the view direction".into(),
            ));
        }
        let y = y_raw.normalize();
        let x = y.cross(&z);
        Ok(Self {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation: eye,
        })
    }

    /// Reads the top-left 3x3 block and last column of a homogeneous matrix.
    pub fn from_matrix(m: &Matrix4<T>) -> Result<Self, GeomError> {
        let tol = sc::<T>(1e-6).max(T::machine_epsilon() * sc(256.0));
        let expected_bottom = [T::zero(), T::zero(), T::zero(), T::one()];
        for (c, want) in expected_bottom.iter().enumerate() {
            if (m[(3, c)] - *want).abs() > tol {
                return Err(GeomError::InvalidPose(
                    "homogeneous matrix bottom row is not (0, 0, 0, 1)".into(),
                ));
            }
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_parts(rotation, translation)
    }

    pub fn to_matrix(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// Camera frame -> world frame.
    pub fn to_world(&self, p_cam: &Vector3<T>) -> Vector3<T> {
        self.rotation * p_cam + self.translation
    }

    /// World frame -> camera frame.
    pub fn to_camera(&self, p_world: &Vector3<T>) -> Vector3<T> {
        self.rotation.transpose() * (p_world - self.translation)
    }
}

/// World-space ray with unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray<T: Scalar> {
    pub origin: Vector3<T>,
    pub direction: Vector3<T>,
}

impl<T: Scalar> Ray<T> {
    /// Normalizes `direction`; rejects near-zero vectors.
    pub fn new(origin: Vector3<T>, direction: Vector3<T>) -> Result<Self, GeomError> {
        let norm = direction.norm();
        if norm <= sc(1e-12) || !norm.is_finite() {
            return Err(GeomError::InvalidPose("ray direction has no usable norm".into()));
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    /// Point at ray distance `t`.
    pub fn point_at(&self, t: T) -> Vector3<T> {
        self.origin + self.direction * t
    }
}

/// Continuous projection of a world point.
///
/// `u`, `v` are continuous pixel coordinates in the pixel-center frame and
/// `ray_distance` is the Euclidean distance from the camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T: Scalar> {
    pub u: T,
    pub v: T,
    pub ray_distance: T,
}

impl<T: Scalar> Projection<T> {
    /// Nearest pixel under the `[i-0.5, i+0.5)` cover convention, or `None`
    /// when the projection falls outside the image.
    pub fn nearest_pixel(&self, intr: &CameraIntrinsics<T>) -> Option<(u32, u32)> {
        let col = to_f64((self.u + sc(0.5)).floor());
        let row = to_f64((self.v + sc(0.5)).floor());
        if col < 0.0 || row < 0.0 || col >= intr.width as f64 || row >= intr.height as f64 {
            return None;
        }
        Some((col as u32, row as u32))
    }
}

/// Ray through the center of pixel `(x, y)`.
pub fn pixel_ray<T: Scalar>(
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    x: u32,
    y: u32,
) -> Result<Ray<T>, GeomError> {
    intr.check_pixel(x, y)?;
    let half = sc::<T>(0.5);
    let dir_cam = Vector3::new(
        (sc::<T>(x as f64) + half - intr.cx) / intr.fx,
        (sc::<T>(y as f64) + half - intr.cy) / intr.fy,
        T::one(),
    );
    let dir_world = pose.rotation() * dir_cam;
    Ray::new(*pose.translation(), dir_world)
}

/// Projects a world point; `None` marks points at or behind the camera plane.
pub fn project<T: Scalar>(
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    point: &Vector3<T>,
) -> Option<Projection<T>> {
    let p_cam = pose.to_camera(point);
    if p_cam.z <= sc(BEHIND_CAMERA_Z) {
        return None;
    }
    let half = sc::<T>(0.5);
    Some(Projection {
        u: intr.fx * p_cam.x / p_cam.z + intr.cx - half,
        v: intr.fy * p_cam.y / p_cam.z + intr.cy - half,
        ray_distance: p_cam.norm(),
    })
}

/// Places a world point at ray distance `t` along the pixel-center ray.
pub fn back_project<T: Scalar>(
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    x: u32,
    y: u32,
    t: T,
) -> Result<Vector3<T>, GeomError> {
    if !(t > T::zero()) || !t.is_finite() {
        return Err(GeomError::NonPositiveDistance(to_f64(t)));
    }
    let ray = pixel_ray(intr, pose, x, y)?;
    Ok(ray.point_at(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn unit_intr() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap()
    }

    fn wide_intr() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let ray = pixel_ray(&unit_intr(), &Pose::identity(), 0, 0).unwrap();
        assert_abs_diff_eq!(ray.origin, Vector3::zeros());
        assert_abs_diff_eq!(ray.direction, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn translation_moves_ray_origin_only() {
        let pose =
            Pose::from_parts(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let ray = pixel_ray(&unit_intr(), &pose, 0, 0).unwrap();
        assert_abs_diff_eq!(ray.origin, Vector3::new(1.0, 2.0, 3.0));
        assert_abs_diff_eq!(ray.direction, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn off_center_ray_direction() {
        // Hand-derived: camera-frame direction ((99.5-50)/100, (50.5-50)/100, 1)
        // = (0.495, 0.005, 1), then normalized by sqrt(1.24505).
        let ray = pixel_ray(&wide_intr(), &Pose::identity(), 99, 50).unwrap();
        assert_relative_eq!(ray.direction.x, 0.4436206998419934, max_relative = 1e-12);
        assert_relative_eq!(ray.direction.y, 0.004481017170121146, max_relative = 1e-12);
        assert_relative_eq!(ray.direction.z, 0.8962034340242292, max_relative = 1e-12);
        assert_relative_eq!(ray.direction.norm(), 1.0, max_relative = 1e-12);
        // Ratios against the unnormalized direction survive any normalization.
        assert_relative_eq!(ray.direction.x / ray.direction.z, 0.495, max_relative = 1e-12);
        assert_relative_eq!(ray.direction.y / ray.direction.z, 0.005, max_relative = 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_is_domain_error() {
        let err = pixel_ray(&unit_intr(), &Pose::identity(), 1, 0).unwrap_err();
        assert!(matches!(err, GeomError::PixelOutOfBounds { .. }));
    }

    #[test]
    fn project_on_axis_point() {
        let p = project(&unit_intr(), &Pose::identity(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(p.u, 0.0);
        assert_abs_diff_eq!(p.v, 0.0);
        assert_abs_diff_eq!(p.ray_distance, 2.0);
        assert_eq!(p.nearest_pixel(&unit_intr()), Some((0, 0)));
    }

    #[test]
    fn project_behind_camera_is_marker() {
        assert!(project(&unit_intr(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project(&unit_intr(), &Pose::identity(), &Vector3::new(0.3, -0.1, 0.0)).is_none());
    }

    #[test]
    fn project_reports_euclidean_ray_distance() {
        // sqrt(1 + 4) for the point (1, 0, 2), not the z-depth 2.
        let p = project(&wide_intr(), &Pose::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(p.ray_distance, 2.23606797749979, max_relative = 1e-12);
        assert_abs_diff_eq!(p.u, 99.5);
    }

    #[test]
    fn back_project_on_axis() {
        let p = back_project(&unit_intr(), &Pose::identity(), 0, 0, 2.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn back_project_reaches_requested_camera_depth() {
        // t = 3 * ||(0.495, 0.005, 1)|| puts the point at camera-frame z = 3.
        let t = 3.0 * 1.1158180855318667;
        let p = back_project(&wide_intr(), &Pose::identity(), 99, 50, t).unwrap();
        assert_relative_eq!(p.z, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn back_project_rejects_non_positive_distance() {
        for t in [0.0, -1.0, f64::NAN] {
            let err = back_project(&unit_intr(), &Pose::identity(), 0, 0, t).unwrap_err();
            assert!(matches!(err, GeomError::NonPositiveDistance(_)));
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.5, 0.5, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, -2.0, 0.5, 0.5, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.5, 0.5, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 0, 1).is_err());
        assert!(CameraIntrinsics::new(f64::NAN, 1.0, 0.5, 0.5, 1, 1).is_err());
    }

    #[test]
    fn pose_validation_rejects_improper_rotations() {
        let scaled = Matrix3::from_diagonal_element(2.0);
        assert!(Pose::from_parts(scaled, Vector3::zeros()).is_err());
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::from_parts(mirror, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_builds_proper_pose_facing_target() {
        let eye = Vector3::new(3.0, -1.0, 0.5);
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)).unwrap();
        let gram = pose.rotation().transpose() * pose.rotation();
        assert_abs_diff_eq!(gram, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(pose.rotation().determinant(), 1.0, max_relative = 1e-12);
        // Camera +z points from eye to target.
        let z = pose.rotation().column(2).into_owned();
        assert_relative_eq!(z.dot(&(-eye).normalize()), 1.0, max_relative = 1e-12);
        // Target projects onto the optical axis.
        let cam = pose.to_camera(&Vector3::zeros());
        assert_abs_diff_eq!(cam.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cam.y, 0.0, epsilon = 1e-12);
        assert!(cam.z > 0.0);
    }

    #[test]
    fn matrix_round_trip() {
        let pose = Pose::look_at(
            Vector3::new(1.0, 2.0, -3.0),
            Vector3::new(0.0, 0.5, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let restored = Pose::<f64>::from_matrix(&pose.to_matrix()).unwrap();
        assert_abs_diff_eq!(restored.to_matrix(), pose.to_matrix(), epsilon = 1e-12);
    }

    #[test]
    fn f32_round_trip_is_looser_but_holds() {
        let intr = CameraIntrinsics::<f32>::new(57.6, 57.6, 32.0, 32.0, 64, 64).unwrap();
        let pose = Pose::look_at(
            Vector3::new(3.8f32, -1.2, 0.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let p = back_project(&intr, &pose, 17, 40, 3.7f32).unwrap();
        let proj = project(&intr, &pose, &p).unwrap();
        assert_relative_eq!(proj.u, 17.0, epsilon = 1e-3);
        assert_relative_eq!(proj.v, 40.0, epsilon = 1e-3);
        assert_relative_eq!(proj.ray_distance, 3.7, max_relative = 1e-5);
    }

    fn arb_pose() -> impl Strategy<Value = Pose<f64>> {
        (
            -2.0f64..2.0,
            -2.0f64..2.0,
            -2.0f64..2.0,
            0.1f64..std::f64::consts::PI,
        )
            .prop_map(|(tx, ty, tz, angle)| {
                let axis = nalgebra::Unit::new_normalize(Vector3::new(
                    tx.sin() + 0.1,
                    ty.cos(),
                    (tz + 0.3).cos(),
                ));
                let rot = nalgebra::Rotation3::from_axis_angle(&axis, angle);
                Pose::from_parts(rot.into_inner(), Vector3::new(tx, ty, tz)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn project_back_project_round_trip(
            pose in arb_pose(),
            x in 0u32..64,
            y in 0u32..48,
            t in 0.05f64..50.0,
        ) {
            let intr = CameraIntrinsics::new(45.0, 52.0, 31.5, 23.5, 64, 48).unwrap();
            let point = back_project(&intr, &pose, x, y, t).unwrap();
            let proj = project(&intr, &pose, &point).unwrap();
            prop_assert!((proj.u - x as f64).abs() < 1e-6);
            prop_assert!((proj.v - y as f64).abs() < 1e-6);
            prop_assert!((proj.ray_distance - t).abs() / t < 1e-6);
            prop_assert_eq!(proj.nearest_pixel(&intr), Some((x, y)));
        }

        #[test]
        fn pixel_rays_have_positive_camera_z(
            pose in arb_pose(),
            x in 0u32..64,
            y in 0u32..48,
        ) {
            let intr = CameraIntrinsics::new(45.0, 52.0, 31.5, 23.5, 64, 48).unwrap();
            let ray = pixel_ray(&intr, &pose, x, y).unwrap();
            prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
            let dir_cam = pose.rotation().transpose() * ray.direction;
            prop_assert!(dir_cam.z > 0.0);
        }

        #[test]
        fn projected_distance_matches_norm(
            pose in arb_pose(),
            px in -3.0f64..3.0,
            py in -3.0f64..3.0,
            pz in -3.0f64..3.0,
        ) {
            let intr = CameraIntrinsics::new(45.0, 52.0, 31.5, 23.5, 64, 48).unwrap();
            let point = Vector3::new(px, py, pz);
            if let Some(proj) = project(&intr, &pose, &point) {
                let dist = (point - pose.translation()).norm();
                prop_assert!((proj.ray_distance - dist).abs() <= 1e-9 * dist.max(1.0));
            }
        }
    }
}
