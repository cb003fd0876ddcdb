//! Pinhole cameras and rigid pose algebra.
//!
//! A [`CameraPose`] is the world-to-camera map `x_cam = R·x_world + t`. The
//! camera looks down its +z axis; pixel `(row, col)` has its center at image
//! coordinates `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Square pixels, principal point at the image center.
    pub fn from_vertical_fov(width: usize, height: usize, fov_deg: f64) -> Self {
        let f = 0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64)
    }

    /// Intrinsics for the same camera sampled `factor` times more densely.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), PoseError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(PoseError::Intrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..=width as f64).contains(&self.cx) || !(0.0..=height as f64).contains(&self.cy) {
            return Err(PoseError::Intrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, width, height
            )));
        }
        Ok(())
    }

    /// Camera-space point to image coordinates. Caller checks `z > 0`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-space point at depth `z` seen at image coordinates `(u, v)`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    intrinsics: Intrinsics,
}

fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let det = r.determinant();
    gram.amax().max((det - 1.0).abs())
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self, PoseError> {
        let deviation = orthonormal_deviation(&rotation);
        if !(deviation <= ORTHONORMAL_TOLERANCE) {
            return Err(PoseError::NotOrthonormal { deviation });
        }
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(PoseError::Intrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                intrinsics.fx, intrinsics.fy
            )));
        }
        Ok(Self {
            rotation,
            translation,
            intrinsics,
        })
    }

    pub fn identity(intrinsics: Intrinsics) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            intrinsics,
        }
    }

    /// Builds the pose of a camera centered at `center` whose camera-to-world
    /// rotation is `orientation`.
    pub fn from_center(
        orientation: Matrix3<f64>,
        center: Point3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self, PoseError> {
        let rotation = orientation.transpose();
        let translation = -(rotation * center.coords);
        Self::new(rotation, translation, intrinsics)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        Self { intrinsics, ..*self }
    }

    /// Same pose, intrinsics rescaled for a raster `factor` times denser.
    pub fn supersampled(&self, factor: f64) -> Self {
        self.with_intrinsics(self.intrinsics.scaled(factor))
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Optical axis in world coordinates: the last column of the
    /// camera-to-world rotation.
    pub fn view_direction(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    #[inline]
    pub fn to_world(&self, q: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (q - self.translation))
    }

    /// World point at depth `z` through image coordinates `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        self.to_world(&self.intrinsics.unproject(u, v, z))
    }

    /// World point through the center of pixel `(row, col)`.
    pub fn unproject_pixel(&self, row: usize, col: usize, z: f64) -> Point3<f64> {
        self.unproject(col as f64 + 0.5, row as f64 + 0.5, z)
    }

    /// `(u, v, z)` for points in front of the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let q = self.to_camera(p);
        if q.z > 0.0 {
            let (u, v) = self.intrinsics.project(&q);
            Some((u, v, q.z))
        } else {
            None
        }
    }

    /// `self ∘ other`: apply `other`, then `self`. Keeps `self`'s intrinsics.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            intrinsics: self.intrinsics,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -(rt * self.translation),
            intrinsics: self.intrinsics,
        }
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        Self::new(self.rotation, self.translation, self.intrinsics).map(|_| ())
    }
}

/// Rotation about the world y axis (a pan), camera-to-world convention.
pub fn yaw_rotation(angle_rad: f64) -> Matrix3<f64> {
    let (s, c) = angle_rad.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Unit};

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 32.0, 24.0)
    }

    fn random_pose(seed: u64) -> CameraPose {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        CameraPose::new(*rot.matrix(), t, intr()).unwrap()
    }

    #[test]
    fn pose_times_inverse_is_identity() {
        for seed in 0..20 {
            let p = random_pose(seed);
            let id = p.compose(&p.inverse());
            assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
            assert!(id.translation().amax() < 1e-12);
        }
    }

    #[test]
    fn identity_looks_down_z() {
        assert_eq!(
            CameraPose::identity(intr()).view_direction(),
            Vector3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn compose_matches_explicit_multiply() {
        let a = random_pose(1);
        let b = random_pose(2);
        let c = a.compose(&b);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.rotation()[(i, k)] * b.rotation()[(k, j)];
                }
                assert_relative_eq!(c.rotation()[(i, j)], acc, epsilon = 1e-14);
            }
            let mut t = a.translation()[i];
            for k in 0..3 {
                t += a.rotation()[(i, k)] * b.translation()[k];
            }
            assert_relative_eq!(c.translation()[i], t, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        assert!(matches!(
            CameraPose::new(r, Vector3::zeros(), intr()),
            Err(PoseError::NotOrthonormal { .. })
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraPose::new(reflection, Vector3::zeros(), intr()).is_err());
    }

    #[test]
    fn principal_point_must_be_inside() {
        assert!(intr().validate(64, 48).is_ok());
        assert!(intr().validate(16, 48).is_err());
        assert!(Intrinsics::new(-1.0, 1.0, 0.0, 0.0).validate(4, 4).is_err());
    }

    #[test]
    fn project_unproject_roundtrip() {
        let p = random_pose(5);
        let x = p.unproject(10.25, 7.5, 3.0);
        let (u, v, z) = p.project(&x).unwrap();
        assert_relative_eq!(u, 10.25, epsilon = 1e-10);
        assert_relative_eq!(v, 7.5, epsilon = 1e-10);
        assert_relative_eq!(z, 3.0, epsilon = 1e-12);
        assert_relative_eq!((p.to_camera(&p.center())).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn from_center_places_camera() {
        let c = Point3::new(1.0, -2.0, 3.0);
        let p = CameraPose::from_center(yaw_rotation(0.3), c, intr()).unwrap();
        assert_relative_eq!((p.center() - c).norm(), 0.0, epsilon = 1e-12);
        let v = p.view_direction();
        assert_relative_eq!(v.x, 0.3f64.sin(), epsilon = 1e-12);
        assert_relative_eq!(v.z, 0.3f64.cos(), epsilon = 1e-12);
    }
}
