//! Trigonometric orientation encoding.
//!
//! Each Euler angle `v` is represented by the pair `(cos v, sin v)`. Under
//! angular noise `eps ~ N(0, sigma_v^2)` the expected pair is attenuated by
//! `a = exp(-sigma_v^2 / 2)`, and the component variances follow in closed
//! form. Components are treated as independent (diagonal covariance).

use serde::{Deserialize, Serialize};

use super::{EulerAngle, GeometryError};

/// Attenuated `(cos, sin)` pair for one angle axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigPair {
    pub cos: f64,
    pub sin: f64,
}

/// Per-axis trig pairs in (azimuth, elevation, inplane) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigOrientation {
    pub axes: [TrigPair; 3],
}

impl TrigOrientation {
    /// Flattened `[cos_az, sin_az, cos_el, sin_el, cos_ip, sin_ip]`.
    pub fn to_array(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (k, p) in self.axes.iter().enumerate() {
            out[2 * k] = p.cos;
            out[2 * k + 1] = p.sin;
        }
        out
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            axes: [
                TrigPair { cos: v[0], sin: v[1] },
                TrigPair { cos: v[2], sin: v[3] },
                TrigPair { cos: v[4], sin: v[5] },
            ],
        }
    }
}

/// `exp(-sigma_v^2 / 2)`.
pub fn attenuation(sigma_v: f64) -> f64 {
    (-0.5 * sigma_v * sigma_v).exp()
}

pub fn trig_encode(e: &EulerAngle, sigma_v: f64) -> TrigOrientation {
    let a = attenuation(sigma_v);
    let pair = |angle: f64| {
        let (s, c) = angle.sin_cos();
        TrigPair {
            cos: a * c,
            sin: a * s,
        }
    };
    TrigOrientation {
        axes: [pair(e.azimuth), pair(e.elevation), pair(e.inplane)],
    }
}

/// Recovers angles with `atan2`, which projects each pair onto the unit
/// circle first, so the attenuation cancels.
pub fn trig_decode(t: &TrigOrientation) -> Result<EulerAngle, GeometryError> {
    let mut angles = [0.0; 3];
    for (k, p) in t.axes.iter().enumerate() {
        if p.cos * p.cos + p.sin * p.sin <= 1e-12 {
            return Err(GeometryError::DegenerateTrig { axis: k });
        }
        angles[k] = p.sin.atan2(p.cos);
    }
    Ok(EulerAngle::new(angles[0], angles[1], angles[2]))
}

/// Mean and variance of `cos(v + eps)` and `sin(v + eps)` for
/// `eps ~ N(0, sigma_v^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigMoments {
    pub mean_cos: f64,
    pub mean_sin: f64,
    pub var_cos: f64,
    pub var_sin: f64,
}

/// Closed-form prior moments of the trig encoding.
///
/// `var_cos = 1/2 + 1/2 e^{-2s^2} cos 2v - e^{-s^2} cos^2 v` and
/// `var_sin = 1/2 - 1/2 e^{-2s^2} cos 2v - e^{-s^2} sin^2 v`, evaluated in the
/// factored form `(1 - b)(1 -+ b cos 2v) / 2` with `b = e^{-s^2}` so that the
/// small-sigma cancellation does not lose precision.
pub fn orientation_prior_moments(v: f64, sigma_v: f64) -> TrigMoments {
    let a = attenuation(sigma_v);
    let b = a * a;
    let one_minus_b = -(-sigma_v * sigma_v).exp_m1();
    let cos2v = (2.0 * v).cos();
    let (s, c) = v.sin_cos();
    TrigMoments {
        mean_cos: a * c,
        mean_sin: a * s,
        var_cos: 0.5 * one_minus_b * (1.0 - b * cos2v),
        var_sin: 0.5 * one_minus_b * (1.0 + b * cos2v),
    }
}

/// Moments for all six trig components of an Euler triple, in the same order
/// as [`TrigOrientation::to_array`]: `(means, variances)`.
pub fn orientation_moments6(e: &EulerAngle, sigma_v: f64) -> ([f64; 6], [f64; 6]) {
    let mut mean = [0.0; 6];
    let mut var = [0.0; 6];
    for (k, angle) in e.as_array().into_iter().enumerate() {
        let m = orientation_prior_moments(angle, sigma_v);
        mean[2 * k] = m.mean_cos;
        mean[2 * k + 1] = m.mean_sin;
        var[2 * k] = m.var_cos;
        var[2 * k + 1] = m.var_sin;
    }
    (mean, var)
}
