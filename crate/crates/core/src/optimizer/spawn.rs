//! Landmark creation for detections no current landmark explains.
//!
//! A detection is compared with its candidate landmarks through a gate
//! `-d^2 / 2`, where `d^2` is the Mahalanobis distance summed over the
//! translation, orientation and shape blocks. The translation covariance is
//! widened by the odometry uncertainty accumulated between the frame that
//! created the landmark and the current frame, so that re-observations after
//! long drift (loop closures) still pass the gate.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3};

use super::residuals::relative_orientation;
use super::{PoseFeatureGraph, Result, SolverConfig};
use crate::association::Landmark;
use crate::generative::squared_distance;
use crate::geometry::{attenuation, euler_to_rotation, orientation_moments6, skew, trig_decode, Se3Pose};

fn twist_covariance(sigma: &[f64; 6]) -> Matrix6<f64> {
    Matrix6::from_diagonal(&nalgebra::Vector6::from_fn(|k, _| sigma[k] * sigma[k]))
}

/// Covariance of the right-perturbation twist of the relative pose
/// `x_a^-1 x_b` implied by the odometry chain between frames `a` and `b`.
pub fn chain_covariance(g: &PoseFeatureGraph, a: usize, b: usize) -> Matrix6<f64> {
    if a <= b {
        let mut cov = Matrix6::zeros();
        for e in &g.odometry_edges[a..b] {
            let ad = e.measurement.inverse().adjoint();
            cov = ad * cov * ad.transpose() + twist_covariance(&e.sigma);
        }
        cov
    } else {
        let forward = chain_covariance(g, b, a);
        let t = g.odometry_edges[b..a]
            .iter()
            .fold(Se3Pose::identity(), |acc, e| acc * e.measurement);
        let ad = t.adjoint();
        ad * forward * ad.transpose()
    }
}

fn gate_score(
    g: &PoseFeatureGraph,
    cfg: &SolverConfig,
    frame: usize,
    det: &crate::association::Detection,
    l: &Landmark,
    chain: &Matrix6<f64>,
) -> Option<f64> {
    let x = &g.robot_nodes[frame];
    let p_rel = x.inverse_transform_point(l.position());
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&p_rel));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&-Matrix3::identity());
    // detection noise plus the noise of the detection that placed the landmark
    let cov = Matrix3::identity() * (2.0 * det.sigma_t * det.sigma_t) + j * chain * j.transpose();
    let r: Vector3<f64> = det.coord - p_rel;
    let mut d2 = r.dot(&cov.cholesky()?.solve(&r));

    if cfg.use_orientation {
        let rel = relative_orientation(x, l.pose.quaternion()).ok()?;
        let (mean, var) = orientation_moments6(&rel, cfg.sigma_v);
        let a = attenuation(cfg.sigma_v);
        let angle_var = cfg.sigma_v * cfg.sigma_v + chain.fixed_view::<3, 3>(0, 0).trace() / 3.0;
        let obs = det.feature.mu_sv.to_array();
        for k in 0..6 {
            let v = var[k].max(cfg.variance_floor) + a * a * angle_var;
            d2 += (obs[k] - mean[k]).powi(2) / v;
        }
    }
    d2 += squared_distance(&det.feature.mu_sc, &l.feature_c) + squared_distance(&det.feature.mu_si, &l.feature_i);
    Some(-0.5 * d2)
}

/// Seeds a landmark for every detection that no candidate landmark explains
/// above `cfg.spawn_threshold`. Candidates of a detection are the landmarks it
/// keeps a non-zero weight to, plus landmarks created earlier in this pass by
/// other keyframes. Within a keyframe detections claim candidates one-to-one,
/// best score first. Returns the ids of the new landmarks.
pub fn spawn_landmarks(g: &mut PoseFeatureGraph, cfg: &SolverConfig) -> Result<Vec<u32>> {
    let mut chains: HashMap<(usize, usize), Matrix6<f64>> = HashMap::new();
    let mut spawned = Vec::new();
    let weighted = g.weights.iter().map(|w| w.weights.ncols()).collect::<Vec<_>>();
    for k in 0..g.keyframes.len() {
        let frame = g.keyframes[k].frame;
        let dets = g.keyframes[k].detections.clone();
        let w = &g.weights[k].weights;
        let with_weights = if w.nrows() == dets.len() { weighted[k].min(g.landmarks.len()) } else { 0 };

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            let known = (0..with_weights).filter(|&j| w[(i, j)] > 0.0);
            let fresh = (with_weights..g.landmarks.len()).filter(|&j| g.landmarks[j].anchor_frame != frame);
            for j in known.chain(fresh) {
                let anchor = g.landmarks[j].anchor_frame;
                let chain = *chains
                    .entry((anchor, frame))
                    .or_insert_with(|| chain_covariance(g, anchor, frame));
                if let Some(s) = gate_score(g, cfg, frame, d, &g.landmarks[j], &chain) {
                    if s >= cfg.spawn_threshold {
                        pairs.push((s, i, j));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_taken = vec![false; dets.len()];
        let mut lm_taken = std::collections::HashSet::new();
        for (_, i, j) in pairs {
            if !det_taken[i] && !lm_taken.contains(&j) {
                det_taken[i] = true;
                lm_taken.insert(j);
            }
        }

        let x = g.robot_nodes[frame];
        for (i, d) in dets.iter().enumerate() {
            if det_taken[i] {
                continue;
            }
            let rel = trig_decode(&d.feature.mu_sv)?;
            let rot = Se3Pose::new(&euler_to_rotation(&rel), Vector3::zeros());
            let id = g.next_landmark_id();
            g.landmarks.push(Landmark {
                id,
                pose: Se3Pose::from_quaternion(x.quaternion() * rot.quaternion(), x.transform_point(&d.coord)),
                feature_c: d.feature.mu_sc.clone(),
                feature_i: d.feature.mu_si.clone(),
                anchor_frame: frame,
            });
            spawned.push(id);
        }
    }
    // Existing weight matrices gain zero columns for the new landmarks.
    let m = g.landmarks.len();
    for w in &mut g.weights {
        let (r, c) = w.weights.shape();
        if c < m {
            w.weights = w.weights.clone().resize(r, m, 0.0);
        }
    }
    Ok(spawned)
}
