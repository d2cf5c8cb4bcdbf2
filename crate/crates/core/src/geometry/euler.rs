use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

/// Object viewpoint orientation as intrinsic Z-Y-X Euler angles.
///
/// `azimuth` and `inplane` live in `(-pi, pi]`, `elevation` in
/// `[-pi/2, pi/2]`. The constructor maps any triple onto the equivalent
/// triple inside those ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngle {
    pub azimuth: f64,
    pub elevation: f64,
    pub inplane: f64,
}

impl EulerAngle {
    pub fn new(azimuth: f64, elevation: f64, inplane: f64) -> Self {
        let mut az = azimuth;
        let mut el = wrap_angle(elevation);
        let mut ip = inplane;
        // (a, e, i) and (a + pi, pi - e, i + pi) describe the same rotation.
        if el > FRAC_PI_2 {
            el = PI - el;
            az += PI;
            ip += PI;
        } else if el < -FRAC_PI_2 {
            el = -PI - el;
            az += PI;
            ip += PI;
        }
        Self {
            azimuth: wrap_angle(az),
            elevation: el,
            inplane: wrap_angle(ip),
        }
    }

    pub fn zero() -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            inplane: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.azimuth, self.elevation, self.inplane]
    }

    /// Largest per-component angular difference, accounting for wrap-around.
    pub fn max_angle_diff(&self, other: &EulerAngle) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| wrap_angle(a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Orthonormal 3x3 matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and orientation.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !m.iter().all(|x| x.is_finite())
            || ortho > Self::TOLERANCE
            || (det - 1.0).abs() > Self::TOLERANCE
        {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }
}

/// `R = Rz(azimuth) * Ry(elevation) * Rx(inplane)`.
pub fn euler_to_rotation(e: &EulerAngle) -> RotationMatrix {
    let (sa, ca) = e.azimuth.sin_cos();
    let (se, ce) = e.elevation.sin_cos();
    let (si, ci) = e.inplane.sin_cos();
    RotationMatrix(Matrix3::new(
        ca * ce,
        ca * se * si - sa * ci,
        ca * se * ci + sa * si,
        sa * ce,
        sa * se * si + ca * ci,
        sa * se * ci - ca * si,
        -se,
        ce * si,
        ce * ci,
    ))
}

/// Inverse of [`euler_to_rotation`] away from `elevation = +-pi/2`.
pub fn rotation_to_euler(r: &RotationMatrix) -> Result<EulerAngle, GeometryError> {
    let m = &r.0;
    let r31 = m[(2, 0)];
    if r31.abs() > 1.0 - 1e-9 {
        return Err(GeometryError::GimbalLock { r31 });
    }
    let elevation = (-r31).atan2(m[(0, 0)].hypot(m[(1, 0)]));
    let azimuth = m[(1, 0)].atan2(m[(0, 0)]);
    let inplane = m[(2, 1)].atan2(m[(2, 2)]);
    Ok(EulerAngle::new(azimuth, elevation, inplane))
}

impl From<Rotation3<f64>> for RotationMatrix {
    fn from(r: Rotation3<f64>) -> Self {
        Self(r.into_inner())
    }
}
