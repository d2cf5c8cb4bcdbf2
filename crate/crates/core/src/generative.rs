//! Bayesian object observation model.
//!
//! Latent shape features carry Gaussian priors `N(mu^w, I)` per label block
//! (category `c`, instance `i`), orientation enters through the trig encoding,
//! and an encoder emulator samples variational-likelihood means directly from
//! these priors in place of an image encoder.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orientation_moments6, EulerAngle, TrigOrientation};

/// Floor applied to analytic trig variances before they are used as weights.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;
/// Clamp applied to predicted occupancies before taking logarithms.
pub const PROBABILITY_CLAMP: f64 = 1e-7;
/// Lower bound on the reported shape deviation of an emulated encoding.
pub const MIN_SHAPE_SIGMA: f64 = 1e-6;
const MAX_SEPARATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerativeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variance must be positive and finite, found {0}")]
    NonPositiveVariance(f64),
    #[error("voxel grid resolutions differ: {0:?} vs {1:?}")]
    ResolutionMismatch([usize; 3], [usize; 3]),
    #[error("could not place means {separation} apart within {attempts} attempts")]
    SeparationInfeasible { separation: f64, attempts: usize },
    #[error("invalid prototype table: {0}")]
    InvalidTable(String),
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
}

type Result<T> = std::result::Result<T, GenerativeError>;

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GenerativeError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Prior means for one `(category, instance)` label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrototype {
    pub category_id: u32,
    pub instance_id: u32,
    pub mu_c: Vec<f64>,
    pub mu_i: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTable {
    pub dim_c: usize,
    pub dim_i: usize,
    pub entries: Vec<LabelPrototype>,
}

impl PrototypeTable {
    pub fn new(dim_c: usize, dim_i: usize, entries: Vec<LabelPrototype>) -> Result<Self> {
        let table = Self {
            dim_c,
            dim_i,
            entries,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_c == 0 || self.dim_i == 0 {
            return Err(GenerativeError::InvalidTable("zero feature dimension".into()));
        }
        if self.entries.is_empty() {
            return Err(GenerativeError::InvalidTable("no prototypes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            check_dim(self.dim_c, e.mu_c.len())?;
            check_dim(self.dim_i, e.mu_i.len())?;
            if e.mu_c.iter().chain(&e.mu_i).any(|x| !x.is_finite()) {
                return Err(GenerativeError::InvalidTable("non-finite mean".into()));
            }
            if !seen.insert((e.category_id, e.instance_id)) {
                return Err(GenerativeError::InvalidTable(format!(
                    "duplicate label ({}, {})",
                    e.category_id, e.instance_id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, category_id: u32, instance_id: u32) -> Option<&LabelPrototype> {
        self.entries
            .iter()
            .find(|e| e.category_id == category_id && e.instance_id == instance_id)
    }

    /// Prototype whose concatenated mean is closest to the given feature.
    pub fn nearest(&self, feature_c: &[f64], feature_i: &[f64]) -> &LabelPrototype {
        let dist = |e: &LabelPrototype| -> f64 {
            squared_distance(&e.mu_c, feature_c) + squared_distance(&e.mu_i, feature_i)
        };
        self.entries
            .iter()
            .min_by(|a, b| dist(a).total_cmp(&dist(b)))
            .expect("table is non-empty")
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Variational-likelihood parameters of one detection (encoder output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedFeature {
    pub mu_sc: Vec<f64>,
    pub mu_si: Vec<f64>,
    pub sigma_s: f64,
    pub mu_sv: TrigOrientation,
    pub sigma_sv: [f64; 6],
}

impl EncodedFeature {
    pub fn validate(&self, table: &PrototypeTable) -> Result<()> {
        check_dim(table.dim_c, self.mu_sc.len())?;
        check_dim(table.dim_i, self.mu_si.len())?;
        for s in std::iter::once(self.sigma_s).chain(self.sigma_sv) {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GenerativeError::NonPositiveVariance(s));
            }
        }
        Ok(())
    }
}

/// Occupancy grid; probabilities for predictions, `{0, 1}` for targets.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: [usize; 3],
    occupancy: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(resolution: [usize; 3], occupancy: Vec<f64>) -> Result<Self> {
        if resolution.iter().any(|&r| r == 0) {
            return Err(GenerativeError::InvalidGrid("zero resolution".into()));
        }
        let cells: usize = resolution.iter().product();
        if occupancy.len() != cells {
            return Err(GenerativeError::InvalidGrid(format!(
                "{} values for {} cells",
                occupancy.len(),
                cells
            )));
        }
        if occupancy.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(GenerativeError::InvalidGrid("occupancy outside [0, 1]".into()));
        }
        Ok(Self {
            resolution,
            occupancy,
        })
    }

    pub fn filled(resolution: [usize; 3], value: f64) -> Result<Self> {
        Self::new(resolution, vec![value; resolution.iter().product()])
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], variance_diag: &[f64]) -> Result<f64> {
    check_dim(x.len(), mean.len())?;
    check_dim(x.len(), variance_diag.len())?;
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(variance_diag) {
        if !(*vi > 0.0) {
            return Err(GenerativeError::NonPositiveVariance(*vi));
        }
        let d = xi - mi;
        acc += -0.5 * ((2.0 * PI * vi).ln() + d * d / vi);
    }
    Ok(acc)
}

fn unit_gaussian_log_density(x: &[f64], mean: &[f64]) -> Result<f64> {
    check_dim(mean.len(), x.len())?;
    let quad: f64 = squared_distance(x, mean);
    Ok(-0.5 * (x.len() as f64 * (2.0 * PI).ln() + quad))
}

/// `log N(mu_sc; mu_c, I) + log N(mu_si; mu_i, I)`.
pub fn feature_prior_logpdf(f: &EncodedFeature, p: &LabelPrototype) -> Result<f64> {
    shape_logpdf(f, &p.mu_c, &p.mu_i)
}

/// Same as [`feature_prior_logpdf`] with explicit block means, used when the
/// prototype is replaced by a continuous landmark feature estimate.
pub fn shape_logpdf(f: &EncodedFeature, mean_c: &[f64], mean_i: &[f64]) -> Result<f64> {
    Ok(unit_gaussian_log_density(&f.mu_sc, mean_c)? + unit_gaussian_log_density(&f.mu_si, mean_i)?)
}

/// `KL(N(q_mean, diag q_var) || N(p_mean, diag p_var))`.
pub fn kl_diag_gaussians(q_mean: &[f64], q_var: &[f64], p_mean: &[f64], p_var: &[f64]) -> Result<f64> {
    let n = q_mean.len();
    check_dim(n, q_var.len())?;
    check_dim(n, p_mean.len())?;
    check_dim(n, p_var.len())?;
    let mut kl = 0.0;
    for k in 0..n {
        let (qv, pv) = (q_var[k], p_var[k]);
        for v in [qv, pv] {
            if !(v > 0.0) {
                return Err(GenerativeError::NonPositiveVariance(v));
            }
        }
        let d = q_mean[k] - p_mean[k];
        let ratio = qv / pv;
        // ratio - 1 - ln(ratio) via ln_1p for precision near ratio = 1
        kl += 0.5 * ((ratio - 1.0) - (ratio - 1.0).ln_1p() + d * d / pv);
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlBlocks {
    pub category: f64,
    pub instance: f64,
    pub orientation: f64,
}

impl KlBlocks {
    pub fn total(&self) -> f64 {
        self.category + self.instance + self.orientation
    }
}

/// Per-block KL between the encoded posterior and the label/orientation priors.
/// The orientation prior uses the trig moments of `v`, variances floored at
/// [`DEFAULT_VARIANCE_FLOOR`].
pub fn kl_blocks(f: &EncodedFeature, p: &LabelPrototype, v: &EulerAngle, sigma_v: f64) -> Result<KlBlocks> {
    let s2 = f.sigma_s * f.sigma_s;
    let category = kl_diag_gaussians(&f.mu_sc, &vec![s2; f.mu_sc.len()], &p.mu_c, &vec![1.0; p.mu_c.len()])?;
    let instance = kl_diag_gaussians(&f.mu_si, &vec![s2; f.mu_si.len()], &p.mu_i, &vec![1.0; p.mu_i.len()])?;
    let (mean, var) = orientation_moments6(v, sigma_v);
    let var = var.map(|x| x.max(DEFAULT_VARIANCE_FLOOR));
    let q_var = f.sigma_sv.map(|s| s * s);
    let orientation = kl_diag_gaussians(&f.mu_sv.to_array(), &q_var, &mean, &var)?;
    Ok(KlBlocks {
        category,
        instance,
        orientation,
    })
}

/// Variational lower bound: expected reconstruction log-likelihood minus KL.
pub fn elbo(kl_total: f64, recon_loglik: f64) -> f64 {
    recon_loglik - kl_total
}

/// Weighted binary cross-entropy over voxels; `gamma > 0.5` penalizes false
/// negatives more than false positives.
pub fn recon_loss(pred: &VoxelGrid, target: &VoxelGrid, gamma: f64) -> Result<f64> {
    if pred.resolution != target.resolution {
        return Err(GenerativeError::ResolutionMismatch(pred.resolution, target.resolution));
    }
    let loss = pred
        .occupancy
        .iter()
        .zip(&target.occupancy)
        .map(|(&p, &t)| {
            let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            -gamma * t * p.ln() - (1.0 - gamma) * (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(loss)
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Samples an encoder output for an object with prototype `p` seen at relative
/// orientation `v_rel`.
///
/// Shape means are drawn around the prototype with deviation `sigma_enc`.
/// Trig components are drawn from their analytic prior moments; the reported
/// deviations are floored at `sqrt(DEFAULT_VARIANCE_FLOOR)`. The generator is
/// advanced by the same number of draws whatever the noise levels are.
pub fn emulate_encoding<R: Rng + ?Sized>(
    p: &LabelPrototype,
    v_rel: &EulerAngle,
    sigma_enc: f64,
    sigma_v: f64,
    rng: &mut R,
) -> EncodedFeature {
    let mut draw = |mean: f64, sd: f64| mean + sd * standard_normal(rng);
    let mu_sc = p.mu_c.iter().map(|&m| draw(m, sigma_enc)).collect();
    let mu_si = p.mu_i.iter().map(|&m| draw(m, sigma_enc)).collect();
    let (mean, var) = orientation_moments6(v_rel, sigma_v);
    let mut sv = [0.0; 6];
    for k in 0..6 {
        sv[k] = draw(mean[k], var[k].sqrt());
    }
    EncodedFeature {
        mu_sc,
        mu_si,
        sigma_s: sigma_enc.max(MIN_SHAPE_SIGMA),
        mu_sv: TrigOrientation::from_array(sv),
        sigma_sv: var.map(|x| x.max(DEFAULT_VARIANCE_FLOOR).sqrt()),
    }
}

fn separated_means<R: Rng + ?Sized>(
    count: usize,
    dim: usize,
    separation: f64,
    attempts: &mut usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        if *attempts >= MAX_SEPARATION_ATTEMPTS {
            return Err(GenerativeError::SeparationInfeasible {
                separation,
                attempts: *attempts,
            });
        }
        *attempts += 1;
        let candidate: Vec<f64> = (0..dim).map(|_| separation * standard_normal(rng)).collect();
        let sep2 = separation * separation;
        if out.iter().all(|m| squared_distance(m, &candidate) >= sep2) {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// Draws a prototype table whose category means are pairwise at least
/// `separation` apart, and likewise the instance means within each category.
/// Means are sampled from `N(0, separation^2 I)` with rejection.
pub fn sample_prototypes<R: Rng + ?Sized>(
    num_categories: usize,
    instances_per_category: usize,
    dim_c: usize,
    dim_i: usize,
    separation: f64,
    rng: &mut R,
) -> Result<PrototypeTable> {
    if num_categories == 0 || instances_per_category == 0 || dim_c == 0 || dim_i == 0 {
        return Err(GenerativeError::InvalidTable("counts and dimensions must be positive".into()));
    }
    if !(separation > 0.0) {
        return Err(GenerativeError::InvalidTable("separation must be positive".into()));
    }
    let mut attempts = 0;
    let categories = separated_means(num_categories, dim_c, separation, &mut attempts, rng)?;
    let mut entries = Vec::with_capacity(num_categories * instances_per_category);
    for (c, mu_c) in categories.iter().enumerate() {
        let instances = separated_means(instances_per_category, dim_i, separation, &mut attempts, rng)?;
        for (i, mu_i) in instances.into_iter().enumerate() {
            entries.push(LabelPrototype {
                category_id: c as u32,
                instance_id: i as u32,
                mu_c: mu_c.clone(),
                mu_i,
            });
        }
    }
    PrototypeTable::new(dim_c, dim_i, entries)
}
