//! Synthetic worlds, loop trajectories, drifting odometry and keyframe
//! detections.
//!
//! The robot frame is x-forward, y-left, z-up; the camera looks along +x.
//! Trajectories are planar at z = 0 with the heading tangent to the path.

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector6};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{Detection, Keyframe};
use crate::generative::{emulate_encoding, sample_prototypes, GenerativeError, PrototypeTable};
use crate::geometry::{euler_to_rotation, se3_exp, EulerAngle, Se3Pose, Twist};
use crate::optimizer::relative_orientation;

/// Smallest deviation written into a dataset. Zero-noise datasets still need
/// positive deviations to define whitened residuals.
pub const MIN_DECLARED_SIGMA: f64 = 1e-2;

/// Landmark elevations are drawn from `[-MAX_ELEVATION, MAX_ELEVATION]`,
/// keeping relative orientations clear of gimbal lock.
pub const MAX_ELEVATION: f64 = 1.2;

mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Generative(#[from] GenerativeError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, SimError>;

/// Missing fields take their [`Default`] values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub num_landmarks: usize,
    pub arena_half_extent: f64,
    /// Landmark heights are uniform in `[0, arena_height]`.
    pub arena_height: f64,
    pub num_categories: usize,
    pub instances_per_category: usize,
    pub dim_c: usize,
    pub dim_i: usize,
    pub separation: f64,
    pub seed: u64,
    /// The first `same_label_count` landmarks all take the first prototype.
    pub same_label_count: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_landmarks: 12,
            arena_half_extent: 8.0,
            arena_height: 1.0,
            num_categories: 3,
            instances_per_category: 2,
            dim_c: 3,
            dim_i: 2,
            separation: 3.0,
            seed: 0,
            same_label_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryShape {
    SquareLoop,
    Circle,
    FigureEight,
}

fn default_stride() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub shape: TrajectoryShape,
    pub side_or_radius: f64,
    pub num_frames: usize,
    #[serde(default = "default_stride")]
    pub keyframe_stride: usize,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 2 {
            return Err(SimError::InvalidConfig("num_frames must be at least 2".into()));
        }
        if self.keyframe_stride < 1 {
            return Err(SimError::InvalidConfig("keyframe_stride must be at least 1".into()));
        }
        if !(self.side_or_radius > 0.0) {
            return Err(SimError::InvalidConfig("side_or_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Missing fields take their [`Default`] values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub odom_sigma_rot: f64,
    pub odom_sigma_trans: f64,
    pub sigma_t: f64,
    pub sigma_enc: f64,
    pub sigma_v: f64,
    /// Unlimited range is written as `null`.
    #[serde(with = "unbounded")]
    pub detection_range: f64,
    pub fov_half_angle: f64,
    pub detection_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            odom_sigma_rot: 0.01,
            odom_sigma_trans: 0.05,
            sigma_t: 0.5,
            sigma_enc: 0.3,
            sigma_v: 0.05,
            detection_range: 15.0,
            fov_half_angle: 1.2,
            detection_prob: 0.9,
        }
    }
}

impl NoiseConfig {
    /// Noise-free sensing with unlimited range and field of view.
    pub fn noiseless() -> Self {
        Self {
            odom_sigma_rot: 0.0,
            odom_sigma_trans: 0.0,
            sigma_t: 0.0,
            sigma_enc: 0.0,
            sigma_v: 0.0,
            detection_range: f64::INFINITY,
            fov_half_angle: PI,
            detection_prob: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.odom_sigma_rot,
            self.odom_sigma_trans,
            self.sigma_t,
            self.sigma_enc,
            self.sigma_v,
            self.detection_range,
            self.fov_half_angle,
        ];
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return Err(SimError::InvalidConfig("noise parameters must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(SimError::InvalidConfig("detection_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLandmark {
    pub id: u32,
    pub pose: Se3Pose,
    pub category_id: u32,
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub prototypes: PrototypeTable,
    pub landmarks: Vec<GroundTruthLandmark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub world: WorldConfig,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trajectory: Vec<Se3Pose>,
    pub landmarks: Vec<GroundTruthLandmark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Odometry {
    /// Pose of frame 0, fixing the gauge.
    pub origin: Se3Pose,
    /// Declared twist deviations `[rot x3, trans x3]` of every measurement.
    pub sigma: [f64; 6],
    /// `measurements[t]` relates frame `t` to frame `t + 1`.
    pub measurements: Vec<Se3Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub prototypes: PrototypeTable,
    pub ground_truth: GroundTruth,
    pub odometry: Odometry,
    pub keyframes: Vec<Keyframe>,
}

impl Dataset {
    pub fn num_detections(&self) -> usize {
        self.keyframes.iter().map(|k| k.detections.len()).sum()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    if !(cfg.arena_half_extent > 0.0) || !(cfg.arena_height >= 0.0) {
        return Err(SimError::InvalidConfig("arena extents must be positive".into()));
    }
    if cfg.same_label_count > cfg.num_landmarks {
        return Err(SimError::InvalidConfig("same_label_count exceeds num_landmarks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = sample_prototypes(
        cfg.num_categories,
        cfg.instances_per_category,
        cfg.dim_c,
        cfg.dim_i,
        cfg.separation,
        &mut rng,
    )?;
    let h = cfg.arena_half_extent;
    let landmarks = (0..cfg.num_landmarks)
        .map(|id| {
            let x = rng.random_range(-h..=h);
            let y = rng.random_range(-h..=h);
            let z = cfg.arena_height * rng.random::<f64>();
            let e = EulerAngle::new(
                rng.random_range(-PI..PI),
                rng.random_range(-MAX_ELEVATION..=MAX_ELEVATION),
                rng.random_range(-PI..PI),
            );
            let drawn = rng.random_range(0..prototypes.entries.len());
            let label = if id < cfg.same_label_count { 0 } else { drawn };
            let p = &prototypes.entries[label];
            GroundTruthLandmark {
                id: id as u32,
                pose: Se3Pose::new(&euler_to_rotation(&e), Vector3::new(x, y, z)),
                category_id: p.category_id,
                instance_id: p.instance_id,
            }
        })
        .collect();
    Ok(World {
        config: cfg.clone(),
        prototypes,
        landmarks,
    })
}

fn planar_pose(x: f64, y: f64, heading: f64) -> Se3Pose {
    Se3Pose::new(&euler_to_rotation(&EulerAngle::new(heading, 0.0, 0.0)), Vector3::new(x, y, 0.0))
}

/// Pose of frame `k`; frame `num_frames` coincides with frame 0 on closed shapes.
///
/// The square loop starts at corner `(-s/2, -s/2)` heading along +x and runs
/// counter-clockwise; at a corner the heading is that of the outgoing side.
pub fn trajectory_pose(cfg: &TrajectoryConfig, k: usize) -> Se3Pose {
    let n = cfg.num_frames as f64;
    let phase = (k % cfg.num_frames) as f64 / n;
    let r = cfg.side_or_radius;
    match cfg.shape {
        TrajectoryShape::SquareLoop => {
            let q = 4.0 * phase;
            let seg = if (q - q.round()).abs() < 1e-9 { q.round() } else { q.floor() };
            let along = ((q - seg).max(0.0)) * r;
            let seg = (seg as usize) % 4;
            let h = 0.5 * r;
            let (cx, cy, dx, dy) = [(-h, -h, 1.0, 0.0), (h, -h, 0.0, 1.0), (h, h, -1.0, 0.0), (-h, h, 0.0, -1.0)][seg];
            planar_pose(cx + along * dx, cy + along * dy, seg as f64 * 0.5 * PI)
        }
        TrajectoryShape::Circle => {
            let th = 2.0 * PI * phase;
            planar_pose(r * th.cos(), r * th.sin(), th + 0.5 * PI)
        }
        TrajectoryShape::FigureEight => {
            let a = 2.0 * PI * phase;
            let heading = (2.0 * a).cos().atan2(a.cos());
            planar_pose(r * a.sin(), 0.5 * r * (2.0 * a).sin(), heading)
        }
    }
}

pub fn generate_trajectory(cfg: &TrajectoryConfig) -> Result<Vec<Se3Pose>> {
    cfg.validate()?;
    Ok((0..cfg.num_frames).map(|k| trajectory_pose(cfg, k)).collect())
}

/// Whether a robot-frame point lies inside the sensing cone.
pub fn in_view(p_rel: &Vector3<f64>, range: f64, fov_half_angle: f64) -> bool {
    let d = p_rel.norm();
    if d == 0.0 || d > range {
        return false;
    }
    (p_rel.x / d).clamp(-1.0, 1.0).acos() <= fov_half_angle
}

pub fn simulate(world: &World, trajectory: &TrajectoryConfig, noise: &NoiseConfig, seed: u64) -> Result<Dataset> {
    noise.validate()?;
    let gt = generate_trajectory(trajectory)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let sr = noise.odom_sigma_rot;
    let st = noise.odom_sigma_trans;
    let measurements = gt
        .windows(2)
        .map(|w| {
            let xi = Vector6::from_fn(|k, _| if k < 3 { sr } else { st } * normal(&mut rng));
            w[0].inverse() * w[1] * se3_exp(&Twist(xi))
        })
        .collect();
    let ds = MIN_DECLARED_SIGMA;
    let sigma = [sr.max(ds), sr.max(ds), sr.max(ds), st.max(ds), st.max(ds), st.max(ds)];

    let mut keyframes = Vec::new();
    for frame in (0..gt.len()).step_by(trajectory.keyframe_stride) {
        let x = &gt[frame];
        let mut detections = Vec::new();
        for l in &world.landmarks {
            let p_rel = x.inverse_transform_point(l.pose.translation());
            if !in_view(&p_rel, noise.detection_range, noise.fov_half_angle) {
                continue;
            }
            if rng.random::<f64>() >= noise.detection_prob {
                continue;
            }
            // unreachable for worlds from generate_world; such views are skipped
            let Ok(rel) = relative_orientation(x, l.pose.quaternion()) else {
                continue;
            };
            let proto = world
                .prototypes
                .get(l.category_id, l.instance_id)
                .ok_or_else(|| SimError::InvalidConfig(format!("landmark {} has no prototype", l.id)))?;
            let coord = p_rel + Vector3::from_fn(|_, _| noise.sigma_t * normal(&mut rng));
            let feature = emulate_encoding(proto, &rel, noise.sigma_enc, noise.sigma_v, &mut rng);
            detections.push(Detection {
                keyframe_id: frame,
                coord,
                feature,
                sigma_t: noise.sigma_t.max(ds),
                source: Some(l.id),
            });
        }
        detections.shuffle(&mut rng);
        keyframes.push(Keyframe { frame, detections });
    }

    Ok(Dataset {
        meta: DatasetMeta {
            seed,
            world: world.config.clone(),
            trajectory: trajectory.clone(),
            noise: noise.clone(),
        },
        prototypes: world.prototypes.clone(),
        ground_truth: GroundTruth {
            trajectory: gt.clone(),
            landmarks: world.landmarks.clone(),
        },
        odometry: Odometry {
            origin: gt[0],
            sigma,
            measurements,
        },
        keyframes,
    })
}
