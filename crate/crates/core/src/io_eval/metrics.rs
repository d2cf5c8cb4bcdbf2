use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{IoError, Result};
use crate::geometry::Se3Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ate_rmse: f64,
    pub rpe_rmse: f64,
    /// Aligned translation error of every frame.
    pub ate_errors: Vec<f64>,
    /// Relative translation error of every pair `(i, i + delta)`.
    pub rpe_errors: Vec<f64>,
}

fn check_lengths(est: usize, gt: usize) -> Result<()> {
    if est != gt {
        return Err(IoError::LengthMismatch {
            estimated: est,
            ground_truth: gt,
        });
    }
    if est == 0 {
        return Err(IoError::InvalidInput("trajectories are empty".into()));
    }
    Ok(())
}

fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Rotation `r` and translation `t` minimizing `sum |r * src_i + t - dst_i|^2`
/// (Kabsch, no scale).
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h: Matrix3<f64> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (s - cs) * (d - cd).transpose())
        .sum();
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    (r, cd - r * cs)
}

pub fn ate_errors(estimated: &[Se3Pose], ground_truth: &[Se3Pose]) -> Result<Vec<f64>> {
    check_lengths(estimated.len(), ground_truth.len())?;
    let src: Vec<Vector3<f64>> = estimated.iter().map(|p| *p.translation()).collect();
    let dst: Vec<Vector3<f64>> = ground_truth.iter().map(|p| *p.translation()).collect();
    let (r, t) = align_rigid(&src, &dst);
    Ok(src.iter().zip(&dst).map(|(s, d)| (r * s + t - d).norm()).collect())
}

/// Translation RMSE after rigid alignment of the estimate onto ground truth.
pub fn ate(estimated: &[Se3Pose], ground_truth: &[Se3Pose]) -> Result<f64> {
    Ok(rmse(&ate_errors(estimated, ground_truth)?))
}

pub fn rpe_errors(estimated: &[Se3Pose], ground_truth: &[Se3Pose], delta: usize) -> Result<Vec<f64>> {
    check_lengths(estimated.len(), ground_truth.len())?;
    if delta == 0 || estimated.len() <= delta {
        return Err(IoError::InvalidInput(format!(
            "rpe needs 1 <= delta < length, got delta {delta} for {} poses",
            estimated.len()
        )));
    }
    Ok((0..estimated.len() - delta)
        .map(|i| {
            let gt_rel = ground_truth[i].inverse() * ground_truth[i + delta];
            let est_rel = estimated[i].inverse() * estimated[i + delta];
            (gt_rel.inverse() * est_rel).translation().norm()
        })
        .collect())
}

/// Translation RMSE of relative-pose errors over frame gap `delta`.
pub fn rpe(estimated: &[Se3Pose], ground_truth: &[Se3Pose], delta: usize) -> Result<f64> {
    Ok(rmse(&rpe_errors(estimated, ground_truth, delta)?))
}

pub fn evaluate(estimated: &[Se3Pose], ground_truth: &[Se3Pose], delta: usize) -> Result<MetricReport> {
    let ate_errors = ate_errors(estimated, ground_truth)?;
    let rpe_errors = rpe_errors(estimated, ground_truth, delta)?;
    Ok(MetricReport {
        ate_rmse: rmse(&ate_errors),
        rpe_rmse: rmse(&rpe_errors),
        ate_errors,
        rpe_errors,
    })
}
