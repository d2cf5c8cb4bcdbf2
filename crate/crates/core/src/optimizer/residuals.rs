//! Whitened residuals of the pose-graph factors.

use nalgebra::{UnitQuaternion, Vector3, Vector6};

use crate::geometry::{
    euler_to_rotation, orientation_moments6, rotation_to_euler, EulerAngle, GeometryError,
    RotationMatrix, Se3Pose, TrigOrientation,
};

/// `(R_x^T (t_j - t_x) - s_t) / sigma_t`.
pub fn translation_residual(x: &Se3Pose, t_j: &Vector3<f64>, s_t: &Vector3<f64>, sigma_t: f64) -> Vector3<f64> {
    (x.inverse_transform_point(t_j) - s_t) / sigma_t
}

/// Euler angles of a landmark rotation seen from robot pose `x`.
pub fn relative_orientation(x: &Se3Pose, landmark_rotation: &UnitQuaternion<f64>) -> Result<EulerAngle, GeometryError> {
    let rel = x.quaternion().inverse() * landmark_rotation;
    rotation_to_euler(&RotationMatrix::from(rel.to_rotation_matrix()))
}

/// Analytic trig variances of the relative orientation, floored.
pub fn orientation_variances(
    x: &Se3Pose,
    landmark_rotation: &UnitQuaternion<f64>,
    sigma_v: f64,
    variance_floor: f64,
) -> Result<[f64; 6], GeometryError> {
    let rel = relative_orientation(x, landmark_rotation)?;
    let (_, var) = orientation_moments6(&rel, sigma_v);
    Ok(var.map(|v| v.max(variance_floor)))
}

/// Orientation residual with caller-supplied variances (held fixed inside one
/// pose optimization).
pub fn orientation_residual_with_variance(
    x: &Se3Pose,
    landmark_rotation: &UnitQuaternion<f64>,
    mu_sv: &TrigOrientation,
    sigma_v: f64,
    variance: &[f64; 6],
) -> Result<[f64; 6], GeometryError> {
    let rel = relative_orientation(x, landmark_rotation)?;
    let (mean, _) = orientation_moments6(&rel, sigma_v);
    let obs = mu_sv.to_array();
    let mut out = [0.0; 6];
    for k in 0..6 {
        out[k] = (obs[k] - mean[k]) / variance[k].sqrt();
    }
    Ok(out)
}

/// Per trig component `(mu_sv - mean(rel)) / sqrt(max(var(rel), floor))`.
pub fn orientation_residual(
    x: &Se3Pose,
    v_j: &EulerAngle,
    mu_sv: &TrigOrientation,
    sigma_v: f64,
    variance_floor: f64,
) -> Result<[f64; 6], GeometryError> {
    let rot = Se3Pose::new(&euler_to_rotation(v_j), Vector3::zeros());
    let var = orientation_variances(x, rot.quaternion(), sigma_v, variance_floor)?;
    orientation_residual_with_variance(x, rot.quaternion(), mu_sv, sigma_v, &var)
}

/// `log(z^-1 x_t^-1 x_next)` divided componentwise by `sigma`.
pub fn odometry_residual(
    x_t: &Se3Pose,
    x_next: &Se3Pose,
    z_rel: &Se3Pose,
    sigma: &[f64; 6],
) -> Result<Vector6<f64>, GeometryError> {
    let err = z_rel.inverse() * x_t.inverse() * *x_next;
    let xi = crate::geometry::se3_log(&err)?.0;
    Ok(Vector6::from_fn(|k, _| xi[k] / sigma[k]))
}
