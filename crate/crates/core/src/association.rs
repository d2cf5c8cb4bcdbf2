//! Probabilistic data association (E-step).
//!
//! For one keyframe with `K` detections and `M` landmarks the association
//! weight `w_ij` is the posterior probability that detection `i` belongs to
//! landmark `j`, marginalized over all one-to-one assignments of the keyframe's
//! detections to landmarks.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generative::{gaussian_log_density, shape_logpdf, EncodedFeature, GenerativeError};
use crate::geometry::{orientation_moments6, rotation_to_euler, GeometryError, Se3Pose};

/// Upper bound on detections per keyframe for exact marginalization.
pub const MAX_EXACT_DETECTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssociationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Generative(#[from] GenerativeError),
    #[error("{k} detections exceed the exact marginalization bound of {MAX_EXACT_DETECTIONS}")]
    TooManyDetections { k: usize },
    #[error("{k} detections cannot be assigned one-to-one to {m} landmarks")]
    NotEnoughLandmarks { k: usize, m: usize },
    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),
}

type Result<T> = std::result::Result<T, AssociationError>;

/// One object detection at a keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub keyframe_id: usize,
    /// Object center in the robot frame, meters.
    pub coord: Vector3<f64>,
    pub feature: EncodedFeature,
    /// Deviation of `coord`, meters.
    pub sigma_t: f64,
    /// Generating ground-truth landmark; evaluation only, never read by the solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<u32>,
}

/// Detections of one keyframe; `frame` indexes the robot trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub detections: Vec<Detection>,
}

/// Map landmark: pose (position and orientation) plus continuous shape feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub pose: Se3Pose,
    pub feature_c: Vec<f64>,
    pub feature_i: Vec<f64>,
    /// Frame at which the landmark was first instantiated.
    pub anchor_frame: usize,
}

impl Landmark {
    pub fn position(&self) -> &Vector3<f64> {
        self.pose.translation()
    }
}

/// Parameters of the observation likelihood shared by the E- and M-steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub sigma_v: f64,
    pub variance_floor: f64,
    /// When false the orientation block is dropped everywhere (shape-only ablation).
    pub use_orientation: bool,
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self {
            sigma_v: 0.05,
            variance_floor: crate::generative::DEFAULT_VARIANCE_FLOOR,
            use_orientation: true,
        }
    }
}

/// Log-likelihood blocks of one detection/landmark pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodBlocks {
    pub translation: f64,
    pub orientation: f64,
    pub feature: f64,
}

impl LikelihoodBlocks {
    pub fn total(&self) -> f64 {
        self.translation + self.orientation + self.feature
    }
}

pub fn detection_log_likelihood_blocks(
    d: &Detection,
    x: &Se3Pose,
    l: &Landmark,
    model: &ObservationModel,
) -> Result<LikelihoodBlocks> {
    let predicted = x.inverse_transform_point(l.position());
    let var_t = d.sigma_t * d.sigma_t;
    let translation = gaussian_log_density(d.coord.as_slice(), predicted.as_slice(), &[var_t; 3])?;
    let orientation = if model.use_orientation {
        let rel = x.rotation().transpose().mul(&l.pose.rotation());
        let rel = rotation_to_euler(&rel)?;
        let (mean, var) = orientation_moments6(&rel, model.sigma_v);
        let var = var.map(|v| v.max(model.variance_floor));
        gaussian_log_density(&d.feature.mu_sv.to_array(), &mean, &var)?
    } else {
        0.0
    };
    let feature = shape_logpdf(&d.feature, &l.feature_c, &l.feature_i)?;
    Ok(LikelihoodBlocks {
        translation,
        orientation,
        feature,
    })
}

/// `log p(s^t | x, t) + log p(mu^sv | x, v) + log p(mu^s | landmark feature)`.
pub fn detection_log_likelihood(
    d: &Detection,
    x: &Se3Pose,
    l: &Landmark,
    model: &ObservationModel,
) -> Result<f64> {
    Ok(detection_log_likelihood_blocks(d, x, l, model)?.total())
}

/// `K x M` matrix of detection log-likelihoods.
pub fn log_likelihood_matrix(
    detections: &[Detection],
    landmarks: &[Landmark],
    x: &Se3Pose,
    model: &ObservationModel,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(detections.len(), landmarks.len());
    for (i, d) in detections.iter().enumerate() {
        for (j, l) in landmarks.iter().enumerate() {
            out[(i, j)] = detection_log_likelihood(d, x, l, model)?;
        }
    }
    Ok(out)
}

/// One-to-one assignment `(detection index, landmark index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationHypothesis {
    pub pairs: Vec<(usize, usize)>,
}

impl AssociationHypothesis {
    fn validate(&self, num_detections: usize, num_landmarks: usize) -> Result<()> {
        let mut det_seen = vec![false; num_detections];
        let mut lm_seen = vec![false; num_landmarks];
        for &(i, j) in &self.pairs {
            if i >= num_detections || j >= num_landmarks {
                return Err(AssociationError::InvalidHypothesis(format!("pair ({i}, {j}) out of range")));
            }
            if std::mem::replace(&mut det_seen[i], true) {
                return Err(AssociationError::InvalidHypothesis(format!("detection {i} assigned twice")));
            }
            if std::mem::replace(&mut lm_seen[j], true) {
                return Err(AssociationError::InvalidHypothesis(format!("landmark {j} used twice")));
            }
        }
        if let Some(i) = det_seen.iter().position(|s| !s) {
            return Err(AssociationError::InvalidHypothesis(format!("detection {i} not covered")));
        }
        Ok(())
    }
}

pub fn assignment_log_likelihood(
    h: &AssociationHypothesis,
    detections: &[Detection],
    landmarks: &[Landmark],
    x: &Se3Pose,
    model: &ObservationModel,
) -> Result<f64> {
    h.validate(detections.len(), landmarks.len())?;
    h.pairs.iter().try_fold(0.0, |acc, &(i, j)| {
        Ok(acc + detection_log_likelihood(&detections[i], x, &landmarks[j], model)?)
    })
}

/// Association weights for one keyframe, rows = detections, columns = landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub keyframe_id: usize,
    pub weights: DMatrix<f64>,
    /// Rows left without any surviving entry after pruning.
    pub orphan_rows: Vec<usize>,
}

impl WeightMatrix {
    pub fn new(keyframe_id: usize, weights: DMatrix<f64>) -> Self {
        Self {
            keyframe_id,
            weights,
            orphan_rows: Vec::new(),
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = logits.clone();
    for mut row in w.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let sum: f64 = row.iter().sum();
        row /= sum;
    }
    w
}

/// Exact one-to-one marginals from a `K x M` log-likelihood matrix.
///
/// Runs a forward/backward recursion over landmarks whose state is the set of
/// detections already assigned, which costs `O(M K 2^K)` instead of the
/// `M! / (M - K)!` hypotheses of direct enumeration. All sums are in log space.
pub fn exact_weights_from_log_likelihoods(loglik: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (k, m) = loglik.shape();
    if k > MAX_EXACT_DETECTIONS {
        return Err(AssociationError::TooManyDetections { k });
    }
    if k > m {
        return Err(AssociationError::NotEnoughLandmarks { k, m });
    }
    if k == 0 {
        return Ok(DMatrix::zeros(0, m));
    }
    let states = 1usize << k;
    let full = states - 1;
    let ninf = f64::NEG_INFINITY;

    // forward[j][S]: log-sum over ways landmarks 0..j can cover exactly S.
    let mut forward = vec![vec![ninf; states]; m + 1];
    forward[0][0] = 0.0;
    for j in 0..m {
        for s in 0..states {
            let mut acc = forward[j][s];
            for i in 0..k {
                if s & (1 << i) != 0 {
                    acc = log_add(acc, forward[j][s & !(1 << i)] + loglik[(i, j)]);
                }
            }
            forward[j + 1][s] = acc;
        }
    }
    // backward[j][S]: log-sum over ways landmarks j..M cover the complement of S.
    let mut backward = vec![vec![ninf; states]; m + 1];
    backward[m][full] = 0.0;
    for j in (0..m).rev() {
        for s in 0..states {
            let mut acc = backward[j + 1][s];
            for i in 0..k {
                if s & (1 << i) == 0 {
                    acc = log_add(acc, loglik[(i, j)] + backward[j + 1][s | (1 << i)]);
                }
            }
            backward[j][s] = acc;
        }
    }

    let mut numer = DMatrix::from_element(k, m, ninf);
    for j in 0..m {
        for i in 0..k {
            let mut acc = ninf;
            for s in 0..states {
                if s & (1 << i) == 0 {
                    acc = log_add(acc, forward[j][s] + backward[j + 1][s | (1 << i)]);
                }
            }
            numer[(i, j)] = acc + loglik[(i, j)];
        }
    }
    // Each row of `numer` log-sums to the partition function, so normalizing
    // per row is the same as dividing by it.
    Ok(softmax_rows(&numer))
}

/// Per-detection softmax, ignoring the one-to-one coupling between detections.
pub fn factored_weights_from_log_likelihoods(loglik: &DMatrix<f64>) -> DMatrix<f64> {
    softmax_rows(loglik)
}

pub fn em_weights_exact(
    detections: &[Detection],
    landmarks: &[Landmark],
    x: &Se3Pose,
    model: &ObservationModel,
) -> Result<WeightMatrix> {
    if detections.len() > MAX_EXACT_DETECTIONS {
        return Err(AssociationError::TooManyDetections { k: detections.len() });
    }
    let ll = log_likelihood_matrix(detections, landmarks, x, model)?;
    let kf = detections.first().map_or(0, |d| d.keyframe_id);
    Ok(WeightMatrix::new(kf, exact_weights_from_log_likelihoods(&ll)?))
}

pub fn em_weights_factored(
    detections: &[Detection],
    landmarks: &[Landmark],
    x: &Se3Pose,
    model: &ObservationModel,
) -> Result<WeightMatrix> {
    let ll = log_likelihood_matrix(detections, landmarks, x, model)?;
    let kf = detections.first().map_or(0, |d| d.keyframe_id);
    Ok(WeightMatrix::new(kf, factored_weights_from_log_likelihoods(&ll)))
}

/// Zeroes weights below `delta` and renormalizes the surviving entries of
/// each row. Rows with no survivor stay all-zero and are listed as orphans.
pub fn prune_weights(w: &WeightMatrix, delta: f64) -> WeightMatrix {
    let mut weights = w.weights.clone();
    let mut orphan_rows = Vec::new();
    for (i, mut row) in weights.row_iter_mut().enumerate() {
        let mut removed = false;
        row.apply(|x| {
            if *x < delta {
                removed |= *x != 0.0;
                *x = 0.0;
            }
        });
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            if removed {
                row /= sum;
            }
        } else if row.ncols() > 0 {
            orphan_rows.push(i);
        }
    }
    WeightMatrix {
        keyframe_id: w.keyframe_id,
        weights,
        orphan_rows,
    }
}
