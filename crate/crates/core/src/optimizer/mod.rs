//! M-steps and the outer EM loop.
//!
//! Robot poses and landmark poses are refined by Levenberg-Marquardt on the
//! association-weighted observation cost plus an odometry chain; landmark
//! shape features get a closed-form weighted-mean update; landmarks are
//! created for detections no existing landmark explains.

mod lm;
mod residuals;
mod spawn;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    exact_weights_from_log_likelihoods, factored_weights_from_log_likelihoods, log_likelihood_matrix,
    prune_weights, AssociationError, Keyframe, Landmark, ObservationModel, WeightMatrix,
    MAX_EXACT_DETECTIONS,
};
use crate::geometry::{GeometryError, Se3Pose};
use crate::simulator::Dataset;

pub use lm::{factor_jacobians, optimize_poses, LmReport};
pub use residuals::{
    odometry_residual, orientation_residual, orientation_residual_with_variance, orientation_variances,
    relative_orientation, translation_residual,
};
pub use spawn::{chain_covariance, spawn_landmarks};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error("normal equations stayed singular with damping {lambda:e}")]
    SingularNormalEquations { lambda: f64 },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, OptimizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationMode {
    /// One-to-one marginals, falling back to factored above the detection cap.
    Exact,
    Factored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_gn_iters: usize,
    pub max_em_iters: usize,
    pub lm_damping_init: f64,
    pub cost_tolerance: f64,
    pub delta_prune: f64,
    pub sigma_v: f64,
    /// Gate on `-d^2 / 2` below which a detection seeds a new landmark.
    pub spawn_threshold: f64,
    pub variance_floor: f64,
    pub association: AssociationMode,
    pub use_orientation: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_gn_iters: 50,
            max_em_iters: 10,
            lm_damping_init: 1e-3,
            cost_tolerance: 1e-8,
            delta_prune: 1e-3,
            sigma_v: 0.05,
            // 4-sigma (d^2 = 16) allowance for each of the three gate blocks
            spawn_threshold: -24.0,
            variance_floor: crate::generative::DEFAULT_VARIANCE_FLOOR,
            association: AssociationMode::Exact,
            use_orientation: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if !(self.lm_damping_init > 0.0) {
            return bad("lm_damping_init must be positive");
        }
        if !(self.cost_tolerance > 0.0) {
            return bad("cost_tolerance must be positive");
        }
        if !(0.0..1.0).contains(&self.delta_prune) {
            return bad("delta_prune must lie in [0, 1)");
        }
        if !(self.sigma_v >= 0.0) {
            return bad("sigma_v must be non-negative");
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance_floor must be positive");
        }
        if !self.spawn_threshold.is_finite() {
            return bad("spawn_threshold must be finite");
        }
        Ok(())
    }

    pub fn observation_model(&self) -> ObservationModel {
        ObservationModel {
            sigma_v: self.sigma_v,
            variance_floor: self.variance_floor,
            use_orientation: self.use_orientation,
        }
    }
}

/// Relative-pose measurement between frames `from` and `from + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryEdge {
    pub from: usize,
    pub measurement: Se3Pose,
    /// Deviations of the right-perturbation twist `[rot; trans]`.
    pub sigma: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatureGraph {
    pub robot_nodes: Vec<Se3Pose>,
    pub landmarks: Vec<Landmark>,
    pub odometry_edges: Vec<OdometryEdge>,
    pub keyframes: Vec<Keyframe>,
    /// One matrix per keyframe, detections by landmarks.
    pub weights: Vec<WeightMatrix>,
}

impl PoseFeatureGraph {
    pub fn new(robot_nodes: Vec<Se3Pose>, odometry_edges: Vec<OdometryEdge>, keyframes: Vec<Keyframe>) -> Result<Self> {
        let weights = keyframes
            .iter()
            .map(|kf| WeightMatrix::new(kf.frame, DMatrix::zeros(kf.detections.len(), 0)))
            .collect();
        let g = Self {
            robot_nodes,
            landmarks: Vec::new(),
            odometry_edges,
            keyframes,
            weights,
        };
        g.validate()?;
        Ok(g)
    }

    /// Graph over the dataset's frames, robot nodes initialized from `initial`.
    pub fn from_dataset(ds: &Dataset, initial: Vec<Se3Pose>) -> Result<Self> {
        let edges = ds
            .odometry
            .measurements
            .iter()
            .enumerate()
            .map(|(t, z)| OdometryEdge {
                from: t,
                measurement: *z,
                sigma: ds.odometry.sigma,
            })
            .collect();
        Self::new(initial, edges, ds.keyframes.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.robot_nodes.len();
        let bad = |m: String| Err(OptimizerError::InvalidGraph(m));
        if n == 0 {
            return bad("graph has no robot nodes".into());
        }
        if self.odometry_edges.len() != n - 1 {
            return bad(format!("{} odometry edges for {} robot nodes", self.odometry_edges.len(), n));
        }
        for (t, e) in self.odometry_edges.iter().enumerate() {
            if e.from != t {
                return bad(format!("odometry edge {t} starts at frame {}", e.from));
            }
            if e.sigma.iter().any(|s| !(*s > 0.0)) {
                return bad(format!("odometry edge {t} has a non-positive deviation"));
            }
        }
        for kf in &self.keyframes {
            if kf.frame >= n {
                return bad(format!("keyframe at frame {} beyond trajectory", kf.frame));
            }
            if kf.detections.iter().any(|d| !(d.sigma_t > 0.0) || d.keyframe_id != kf.frame) {
                return bad(format!("keyframe {} holds an inconsistent detection", kf.frame));
            }
        }
        if self.weights.len() != self.keyframes.len() {
            return bad("weight matrix count differs from keyframe count".into());
        }
        Ok(())
    }

    fn check_weights(&self) -> Result<()> {
        for (kf, w) in self.keyframes.iter().zip(&self.weights) {
            if w.weights.shape() != (kf.detections.len(), self.landmarks.len()) {
                return Err(OptimizerError::InvalidGraph(format!(
                    "weights at frame {} are {:?}, expected {:?}",
                    kf.frame,
                    w.weights.shape(),
                    (kf.detections.len(), self.landmarks.len())
                )));
            }
        }
        Ok(())
    }

    /// Non-zero weighted detection edges as `(keyframe index, detection, landmark, weight)`.
    pub(crate) fn active_edges(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.weights.iter().enumerate().flat_map(|(k, w)| {
            let m = &w.weights;
            (0..m.nrows()).flat_map(move |i| {
                (0..m.ncols()).filter_map(move |j| (m[(i, j)] > 0.0).then_some((k, i, j, m[(i, j)])))
            })
        })
    }

    pub(crate) fn next_landmark_id(&self) -> u32 {
        self.landmarks.iter().map(|l| l.id + 1).max().unwrap_or(0)
    }
}

/// Integrates odometry from `origin`.
pub fn dead_reckoning(origin: &Se3Pose, measurements: &[Se3Pose]) -> Vec<Se3Pose> {
    let mut out = Vec::with_capacity(measurements.len() + 1);
    out.push(*origin);
    for z in measurements {
        let last = *out.last().expect("non-empty");
        out.push(last * *z);
    }
    out
}

/// `1/2 sum |odometry|^2 + 1/2 sum w (|translation|^2 + |orientation|^2)`,
/// orientation variances evaluated at the current state.
pub fn total_cost(g: &PoseFeatureGraph, cfg: &SolverConfig) -> Result<f64> {
    g.check_weights()?;
    let mut cost = 0.0;
    for e in &g.odometry_edges {
        let r = odometry_residual(&g.robot_nodes[e.from], &g.robot_nodes[e.from + 1], &e.measurement, &e.sigma)?;
        cost += 0.5 * r.norm_squared();
    }
    for (k, i, j, w) in g.active_edges() {
        let kf = &g.keyframes[k];
        let d = &kf.detections[i];
        let x = &g.robot_nodes[kf.frame];
        let l = &g.landmarks[j];
        let mut sq = translation_residual(x, l.position(), &d.coord, d.sigma_t).norm_squared();
        if cfg.use_orientation {
            let var = orientation_variances(x, l.pose.quaternion(), cfg.sigma_v, cfg.variance_floor)?;
            let r = orientation_residual_with_variance(x, l.pose.quaternion(), &d.feature.mu_sv, cfg.sigma_v, &var)?;
            sq += r.iter().map(|c| c * c).sum::<f64>();
        }
        cost += 0.5 * w * sq;
    }
    Ok(cost)
}

/// Recomputes and prunes the association weights of every keyframe.
pub fn e_step(g: &mut PoseFeatureGraph, cfg: &SolverConfig) -> Result<()> {
    let model = cfg.observation_model();
    let m = g.landmarks.len();
    let mut out = Vec::with_capacity(g.keyframes.len());
    for kf in &g.keyframes {
        let k = kf.detections.len();
        let w = if k == 0 || m == 0 {
            DMatrix::zeros(k, m)
        } else {
            let ll = log_likelihood_matrix(&kf.detections, &g.landmarks, &g.robot_nodes[kf.frame], &model)?;
            if cfg.association == AssociationMode::Exact && k <= MAX_EXACT_DETECTIONS && k <= m {
                exact_weights_from_log_likelihoods(&ll)?
            } else {
                factored_weights_from_log_likelihoods(&ll)
            }
        };
        out.push(prune_weights(&WeightMatrix::new(kf.frame, w), cfg.delta_prune));
    }
    g.weights = out;
    Ok(())
}

/// Sets each landmark's shape feature to the association-weighted mean of the
/// observed `(mu_sc, mu_si)`. Returns ids of landmarks with zero total weight,
/// which are left unchanged.
pub fn update_features(g: &mut PoseFeatureGraph) -> Vec<u32> {
    let m = g.landmarks.len();
    let mut sum_c: Vec<Vec<f64>> = g.landmarks.iter().map(|l| vec![0.0; l.feature_c.len()]).collect();
    let mut sum_i: Vec<Vec<f64>> = g.landmarks.iter().map(|l| vec![0.0; l.feature_i.len()]).collect();
    let mut lo_hi: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; m];
    let mut wsum = vec![0.0; m];
    let edges: Vec<_> = g.active_edges().filter(|e| e.2 < m).collect();
    for (k, i, j, w) in edges {
        let f = &g.keyframes[k].detections[i].feature;
        let obs: Vec<f64> = f.mu_sc.iter().chain(&f.mu_si).copied().collect();
        for (acc, x) in sum_c[j].iter_mut().zip(&f.mu_sc) {
            *acc += w * x;
        }
        for (acc, x) in sum_i[j].iter_mut().zip(&f.mu_si) {
            *acc += w * x;
        }
        wsum[j] += w;
        let bounds = lo_hi[j].get_or_insert_with(|| (obs.clone(), obs.clone()));
        for (k, x) in obs.iter().enumerate() {
            bounds.0[k] = bounds.0[k].min(*x);
            bounds.1[k] = bounds.1[k].max(*x);
        }
    }
    let mut skipped = Vec::new();
    for (j, l) in g.landmarks.iter_mut().enumerate() {
        let Some((lo, hi)) = &lo_hi[j] else {
            skipped.push(l.id);
            continue;
        };
        let dc = l.feature_c.len();
        // clamping only removes rounding excursions outside the hull
        for (k, x) in sum_c[j].iter().chain(&sum_i[j]).enumerate() {
            let v = (x / wsum[j]).clamp(lo[k], hi[k]);
            if k < dc {
                l.feature_c[k] = v;
            } else {
                l.feature_i[k - dc] = v;
            }
        }
    }
    skipped
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub trajectory: Vec<Se3Pose>,
    pub landmarks: Vec<Landmark>,
    pub final_weights: Vec<WeightMatrix>,
    /// `total_cost` after each accepted EM iteration.
    pub cost_history: Vec<f64>,
    /// Accepted Levenberg-Marquardt costs of each accepted EM iteration.
    pub lm_cost_history: Vec<Vec<f64>>,
}

/// EM from the dead-reckoned trajectory.
pub fn run_em(ds: &Dataset, cfg: &SolverConfig) -> Result<Solution> {
    let init = dead_reckoning(&ds.odometry.origin, &ds.odometry.measurements);
    run_em_from(ds, init, cfg)
}

/// EM from a caller-supplied initial trajectory.
///
/// Each iteration spawns landmarks for unexplained detections (before the
/// first iteration this builds the initial map), recomputes weights, optimizes
/// poses and updates features. An iteration that raises the total cost is
/// rolled back and ends the loop.
pub fn run_em_from(ds: &Dataset, initial: Vec<Se3Pose>, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let mut g = PoseFeatureGraph::from_dataset(ds, initial)?;
    let mut cost_history: Vec<f64> = Vec::new();
    let mut lm_cost_history = Vec::new();
    for _ in 0..cfg.max_em_iters {
        let snapshot = g.clone();
        spawn_landmarks(&mut g, cfg)?;
        e_step(&mut g, cfg)?;
        let report = optimize_poses(&mut g, cfg)?;
        update_features(&mut g);
        let cost = total_cost(&g, cfg)?;
        let prev = cost_history.last().copied();
        if prev.is_some_and(|p| cost > p) {
            g = snapshot;
            break;
        }
        cost_history.push(cost);
        lm_cost_history.push(report.cost_history);
        if prev.is_some_and(|p| p - cost < cfg.cost_tolerance * p.max(1.0)) {
            break;
        }
    }
    Ok(Solution {
        trajectory: g.robot_nodes,
        landmarks: g.landmarks,
        final_weights: g.weights,
        cost_history,
        lm_cost_history,
    })
}
