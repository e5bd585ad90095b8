//! Rigid transforms in SE(3).
//!
//! A [`Pose`] stores a unit quaternion and a translation. The quaternion is
//! kept in the `w >= 0` hemisphere so that two equal rotations always compare
//! equal component-wise.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use std::fmt;
use std::ops::Mul;

/// Rotation angle below which the series expansions are used.
pub const SMALL_ANGLE: f64 = 1e-4;

/// `log_map` refuses rotations closer than this to π.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum Se3Error {
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    NearSingular { angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// Tangent vector of SE(3): angular part in radians, linear part in meters.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    // Renormalize so repeated compositions do not drift off the unit sphere.
    let q = q.into_inner();
    let q = if q.w < 0.0 { -q } else { q };
    Unit::new_normalize(q)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3) (the `V` matrix of the SE(3) exponential).
fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + a * k + b * k * k
}

fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// Rotation vector of a unit quaternion, assuming `w >= 0`.
fn quat_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let v = q.imag();
    let s = v.norm();
    let w = q.w;
    if s < 1e-300 {
        return Vector3::zeros();
    }
    let theta = 2.0 * s.atan2(w);
    if theta < SMALL_ANGLE {
        // 2·atan(s/w)/s expanded around s = 0.
        let r = s / w;
        v * (2.0 / w) * (1.0 - r * r / 3.0)
    } else {
        v * (theta / s)
    }
}

fn quat_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        (half.cos(), half.sin() / theta)
    };
    canonical(Unit::new_unchecked(Quaternion::new(w, k * phi.x, k * phi.y, k * phi.z)))
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components, normalizing them.
    pub fn from_parts(wxyz: [f64; 4], translation: [f64; 3]) -> Self {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Self::new(Unit::new_normalize(q), Vector3::from(translation))
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle))
    }

    /// Planar pose of a mobile base: translation `(x, y, 0)` and yaw about +z.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            Vector3::new(x, y, 0.0),
        )
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.translation + self.rotation * other.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        quat_log(&self.rotation).norm()
    }

    /// Logarithm of the pose, inverse of [`Pose::exp`].
    pub fn log(&self) -> Result<Twist, Se3Error> {
        let angle = self.angle();
        if angle >= std::f64::consts::PI - NEAR_PI_MARGIN {
            return Err(Se3Error::NearSingular { angle });
        }
        let angular = quat_log(&self.rotation);
        let linear = left_jacobian_inverse(&angular) * self.translation;
        Ok(Twist { angular, linear })
    }

    pub fn exp(twist: &Twist) -> Pose {
        let rotation = quat_exp(&twist.angular);
        let translation = left_jacobian(&twist.angular) * twist.linear;
        Pose::new(rotation, translation)
    }

    /// Geodesic interpolation `self ∘ exp(s · log(self⁻¹ ∘ other))`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Result<Pose, Se3Error> {
        let delta = self.inverse().compose(other).log()?;
        Ok(self.compose(&Pose::exp(&delta.scale(s))))
    }

    /// Yaw of the rotated x axis projected onto the ground plane.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vector3::x();
        x.y.atan2(x.x)
    }

    pub fn to_f32_array(&self) -> [f32; 7] {
        let q = self.wxyz();
        let t = self.translation;
        [
            q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32,
            t.x as f32, t.y as f32, t.z as f32,
        ]
    }

    pub fn from_f32_array(a: &[f32; 7]) -> Pose {
        Pose::from_parts(
            [a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64],
            [a[4] as f64, a[5] as f64, a[6] as f64],
        )
    }

    /// Serializes as seven little-endian f32 values `(w, x, y, z, tx, ty, tz)`.
    pub fn to_le_bytes(&self) -> [u8; 28] {
        let mut out = [0u8; 28];
        for (chunk, v) in out.chunks_exact_mut(4).zip(self.to_f32_array()) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8; 28]) -> Pose {
        let mut a = [0f32; 7];
        for (v, chunk) in a.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        Pose::from_f32_array(&a)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.wxyz();
        let t = self.translation;
        write!(
            f,
            "Pose(t=[{:.4}, {:.4}, {:.4}], q=[{:.4}, {:.4}, {:.4}, {:.4}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist {
            angular: self.angular * s,
            linear: self.linear * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.angular.norm_squared() + self.linear.norm_squared()).sqrt()
    }
}

/// Rotation vector `Log(R_aᵀ R_b)`, i.e. the rotation taking `a` to `b` in `a`'s frame.
pub fn rotation_error_vector(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> Vector3<f64> {
    quat_log(&canonical(a.inverse() * b))
}

/// Position error in meters and rotation error in radians between two poses.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let pos = (a.translation - b.translation).norm();
    let rot = rotation_error_vector(&a.rotation, &b.rotation).norm();
    (pos, rot)
}
