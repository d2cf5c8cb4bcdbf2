use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{GeometryError, RotationMatrix};

/// Tangent coordinates of SE(3): `[wx, wy, wz, vx, vy, vz]`, rotation first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self(Vector6::new(
            rotation.x,
            rotation.y,
            rotation.z,
            translation.x,
            translation.y,
            translation.z,
        ))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Rigid-body transform. Rotation is held as a unit quaternion so that the
/// serialized `(qx, qy, qz, qw)` form round-trips without re-orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: &RotationMatrix, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation.matrix());
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation,
        }
    }

    pub fn from_quaternion(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// Builds a pose from `(qx, qy, qz, qw)` components without renormalizing.
    /// Fails if the quaternion norm is off by more than `tol`.
    pub fn from_xyzw(
        translation: [f64; 3],
        q: [f64; 4],
        tol: f64,
    ) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > tol || translation.iter().any(|x| !x.is_finite())
        {
            return Err(GeometryError::InvalidQuaternion { norm });
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(quat),
            translation: Vector3::from(translation),
        })
    }

    /// `(qx, qy, qz, qw)` with `qw >= 0`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        // adding 0.0 turns -0.0 into 0.0
        [s * q.i + 0.0, s * q.j + 0.0, s * q.k + 0.0, s * q.w + 0.0]
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix::new_unchecked(self.rotation.to_rotation_matrix().into_inner())
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        Se3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Se3Pose {
        let inv = self.rotation.inverse();
        Se3Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Maps a point from this pose's local frame to the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Right perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> Se3Pose {
        self.compose(&se3_exp(delta))
    }

    /// Adjoint matrix acting on `[rotation; translation]` twists.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.translation) * r));
        ad
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    t: [f64; 3],
    q: [f64; 4],
}

/// Serialized as `{"t": [x, y, z], "q": [qx, qy, qz, qw]}`.
impl Serialize for Se3Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRecord {
            t: self.translation.into(),
            q: self.quaternion_xyzw(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Se3Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRecord::deserialize(d)?;
        Se3Pose::from_xyzw(r.t, r.q, 1e-6).map_err(serde::de::Error::custom)
    }
}

impl Mul for Se3Pose {
    type Output = Se3Pose;
    fn mul(self, rhs: Se3Pose) -> Se3Pose {
        self.compose(&rhs)
    }
}

impl Mul for &Se3Pose {
    type Output = Se3Pose;
    fn mul(self, rhs: &Se3Pose) -> Se3Pose {
        self.compose(rhs)
    }
}

pub fn se3_compose(a: &Se3Pose, b: &Se3Pose) -> Se3Pose {
    a.compose(b)
}

pub fn se3_inverse(a: &Se3Pose) -> Se3Pose {
    a.inverse()
}

// Coefficients (1 - cos t)/t^2, (t - sin t)/t^3 with series near zero.
fn exp_coefficients(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

pub fn se3_exp(t: &Twist) -> Se3Pose {
    let w = t.rotation();
    let theta = w.norm();
    let (b, c) = exp_coefficients(theta);
    let wx = skew(&w);
    let v = Matrix3::identity() + wx * b + wx * wx * c;
    Se3Pose {
        rotation: UnitQuaternion::from_scaled_axis(w),
        translation: v * t.translation(),
    }
}

pub fn se3_log(a: &Se3Pose) -> Result<Twist, GeometryError> {
    let theta = a.rotation.angle();
    if theta >= PI - 1e-6 {
        return Err(GeometryError::LogNearCut { angle: theta });
    }
    let w = a.rotation.scaled_axis();
    let wx = skew(&w);
    let d = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * d;
    Ok(Twist::new(w, v_inv * a.translation))
}
