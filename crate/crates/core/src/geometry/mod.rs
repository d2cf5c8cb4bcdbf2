//! Rotation and rigid-body algebra plus the trigonometric orientation encoding.

mod euler;
mod se3;
mod trig;

use thiserror::Error;

pub use euler::{euler_to_rotation, rotation_to_euler, wrap_angle, EulerAngle, RotationMatrix};
pub use se3::{se3_compose, se3_exp, se3_inverse, se3_log, skew, Se3Pose, Twist};
pub use trig::{
    attenuation, orientation_moments6, orientation_prior_moments, trig_decode, trig_encode,
    TrigMoments, TrigOrientation, TrigPair,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("gimbal lock: |R31| = {r31} leaves azimuth and in-plane angle coupled")]
    GimbalLock { r31: f64 },
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    LogNearCut { angle: f64 },
    #[error("trig pair on axis {axis} has near-zero norm")]
    DegenerateTrig { axis: usize },
    #[error("matrix is not a rotation (orthonormality error {ortho}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("quaternion norm {norm} is not unit")]
    InvalidQuaternion { norm: f64 },
}
