//! Levenberg-Marquardt over robot and landmark poses.
//!
//! Pose 0 is held fixed. Robot poses move by right perturbation
//! `x exp(delta)`, landmarks by `t + dp` and `R exp(dtheta)`. Jacobians are
//! central differences per factor. The damped normal equations are solved
//! by eliminating the robot poses, whose block is tridiagonal because only
//! odometry couples them, leaving a dense system in the landmark parameters.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix6, OMatrix, SMatrix, SVector, UnitQuaternion, Vector3, Vector6, U6};

use super::residuals::{odometry_residual, orientation_residual_with_variance, orientation_variances, translation_residual};
use super::{OptimizerError, PoseFeatureGraph, Result, SolverConfig};
use crate::geometry::{GeometryError, Se3Pose, Twist};

pub(crate) const JACOBIAN_STEP: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e8;
const LAMBDA_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    /// Initial cost followed by the cost after every accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct DetEdge {
    kf: usize,
    det: usize,
    frame: usize,
    lm: usize,
    sqrt_w: f64,
    var: [f64; 6],
}

struct Problem<'a> {
    g: &'a PoseFeatureGraph,
    cfg: &'a SolverConfig,
    edges: Vec<DetEdge>,
}

type Block6 = OMatrix<f64, U6, Dyn>;

fn retract_landmark(l: &Se3Pose, d: &Vector6<f64>) -> Se3Pose {
    let dp = Vector3::new(d[0], d[1], d[2]);
    let dr = UnitQuaternion::from_scaled_axis(Vector3::new(d[3], d[4], d[5]));
    Se3Pose::from_quaternion(l.quaternion() * dr, l.translation() + dp)
}

impl<'a> Problem<'a> {
    fn new(g: &'a PoseFeatureGraph, cfg: &'a SolverConfig) -> Result<Self> {
        g.check_weights()?;
        let mut edges = Vec::new();
        for (k, i, j, w) in g.active_edges() {
            let frame = g.keyframes[k].frame;
            let var = if cfg.use_orientation {
                orientation_variances(&g.robot_nodes[frame], g.landmarks[j].pose.quaternion(), cfg.sigma_v, cfg.variance_floor)?
            } else {
                [1.0; 6]
            };
            edges.push(DetEdge {
                kf: k,
                det: i,
                frame,
                lm: j,
                sqrt_w: w.sqrt(),
                var,
            });
        }
        Ok(Self { g, cfg, edges })
    }

    fn odo_residual(&self, t: usize, a: &Se3Pose, b: &Se3Pose) -> std::result::Result<Vector6<f64>, GeometryError> {
        let e = &self.g.odometry_edges[t];
        odometry_residual(a, b, &e.measurement, &e.sigma)
    }

    fn det_residual(&self, e: &DetEdge, x: &Se3Pose, l: &Se3Pose) -> std::result::Result<SVector<f64, 9>, GeometryError> {
        let d = &self.g.keyframes[e.kf].detections[e.det];
        let mut r = SVector::<f64, 9>::zeros();
        r.fixed_rows_mut::<3>(0)
            .copy_from(&translation_residual(x, l.translation(), &d.coord, d.sigma_t));
        if self.cfg.use_orientation {
            let o = orientation_residual_with_variance(x, l.quaternion(), &d.feature.mu_sv, self.cfg.sigma_v, &e.var)?;
            for k in 0..6 {
                r[3 + k] = o[k];
            }
        }
        Ok(r * e.sqrt_w)
    }

    fn cost(&self, poses: &[Se3Pose], lms: &[Se3Pose]) -> std::result::Result<f64, GeometryError> {
        let mut c = 0.0;
        for t in 0..poses.len() - 1 {
            c += 0.5 * self.odo_residual(t, &poses[t], &poses[t + 1])?.norm_squared();
        }
        for e in &self.edges {
            c += 0.5 * self.det_residual(e, &poses[e.frame], &lms[e.lm])?.norm_squared();
        }
        Ok(c)
    }

    fn odo_jacobian(&self, t: usize, poses: &[Se3Pose], step: f64) -> std::result::Result<(SMatrix<f64, 6, 6>, SMatrix<f64, 6, 6>), GeometryError> {
        central_diff(step, |da, db| {
            self.odo_residual(t, &poses[t].retract(&Twist(*da)), &poses[t + 1].retract(&Twist(*db)))
        })
    }

    fn det_jacobian(&self, e: &DetEdge, poses: &[Se3Pose], lms: &[Se3Pose], step: f64) -> std::result::Result<(SMatrix<f64, 9, 6>, SMatrix<f64, 9, 6>), GeometryError> {
        central_diff(step, |dx, dl| {
            self.det_residual(e, &poses[e.frame].retract(&Twist(*dx)), &retract_landmark(&lms[e.lm], dl))
        })
    }
}

fn central_diff<const R: usize>(
    step: f64,
    f: impl Fn(&Vector6<f64>, &Vector6<f64>) -> std::result::Result<SVector<f64, R>, GeometryError>,
) -> std::result::Result<(SMatrix<f64, R, 6>, SMatrix<f64, R, 6>), GeometryError> {
    let z = Vector6::zeros();
    let mut ja = SMatrix::<f64, R, 6>::zeros();
    let mut jb = SMatrix::<f64, R, 6>::zeros();
    for k in 0..6 {
        let mut d = Vector6::zeros();
        d[k] = step;
        ja.set_column(k, &((f(&d, &z)? - f(&-d, &z)?) / (2.0 * step)));
        jb.set_column(k, &((f(&z, &d)? - f(&z, &-d)?) / (2.0 * step)));
    }
    Ok((ja, jb))
}

/// Central-difference Jacobian of every factor at the current state, odometry
/// factors first, then weighted detection factors. Each matrix is
/// `rows x 12`, the two 6-column blocks being the two connected variables.
pub fn factor_jacobians(g: &PoseFeatureGraph, cfg: &SolverConfig, step: f64) -> Result<Vec<DMatrix<f64>>> {
    let p = Problem::new(g, cfg)?;
    let lms: Vec<Se3Pose> = g.landmarks.iter().map(|l| l.pose).collect();
    let mut out = Vec::new();
    for t in 0..g.odometry_edges.len() {
        let (a, b) = p.odo_jacobian(t, &g.robot_nodes, step)?;
        let mut m = DMatrix::zeros(6, 12);
        m.view_mut((0, 0), (6, 6)).copy_from(&a);
        m.view_mut((0, 6), (6, 6)).copy_from(&b);
        out.push(m);
    }
    for e in &p.edges {
        let (a, b) = p.det_jacobian(e, &g.robot_nodes, &lms, step)?;
        let mut m = DMatrix::zeros(9, 12);
        m.view_mut((0, 0), (9, 6)).copy_from(&a);
        m.view_mut((0, 6), (9, 6)).copy_from(&b);
        out.push(m);
    }
    Ok(out)
}

/// Gauss-Newton system `H delta = -g`, robot pose 0 excluded.
struct Normal {
    a_diag: Vec<Matrix6<f64>>,
    /// Block `(p, p + 1)` of the pose part.
    a_off: Vec<Matrix6<f64>>,
    b: BTreeMap<(usize, usize), Matrix6<f64>>,
    c: Vec<Matrix6<f64>>,
    gx: Vec<Vector6<f64>>,
    gl: Vec<Vector6<f64>>,
}

impl Normal {
    fn build(p: &Problem, poses: &[Se3Pose], lms: &[Se3Pose]) -> std::result::Result<Self, GeometryError> {
        let np = poses.len() - 1;
        let m = lms.len();
        let mut ne = Normal {
            a_diag: vec![Matrix6::zeros(); np],
            a_off: vec![Matrix6::zeros(); np.saturating_sub(1)],
            b: BTreeMap::new(),
            c: vec![Matrix6::zeros(); m],
            gx: vec![Vector6::zeros(); np],
            gl: vec![Vector6::zeros(); m],
        };
        for t in 0..np {
            let r = p.odo_residual(t, &poses[t], &poses[t + 1])?;
            let (ja, jb) = p.odo_jacobian(t, poses, JACOBIAN_STEP)?;
            // variable t+1 maps to pose block t
            ne.a_diag[t] += jb.transpose() * jb;
            ne.gx[t] += jb.transpose() * r;
            if t >= 1 {
                ne.a_diag[t - 1] += ja.transpose() * ja;
                ne.gx[t - 1] += ja.transpose() * r;
                ne.a_off[t - 1] += ja.transpose() * jb;
            }
        }
        for e in &p.edges {
            let r = p.det_residual(e, &poses[e.frame], &lms[e.lm])?;
            let (jx, jl) = p.det_jacobian(e, poses, lms, JACOBIAN_STEP)?;
            ne.c[e.lm] += jl.transpose() * jl;
            ne.gl[e.lm] += jl.transpose() * r;
            if e.frame >= 1 {
                let q = e.frame - 1;
                ne.a_diag[q] += jx.transpose() * jx;
                ne.gx[q] += jx.transpose() * r;
                *ne.b.entry((q, e.lm)).or_insert_with(Matrix6::zeros) += jx.transpose() * jl;
            }
        }
        // Landmark directions no factor touches (e.g. rotation without
        // orientation residuals) are held fixed.
        for c in &mut ne.c {
            for k in 0..6 {
                if c[(k, k)] == 0.0 {
                    c[(k, k)] = 1.0;
                }
            }
        }
        Ok(ne)
    }

    /// Solves `(H + lambda I) delta = -g`; `None` if the damped system is not
    /// positive definite.
    fn solve(&self, lambda: f64) -> Option<(Vec<Vector6<f64>>, Vec<Vector6<f64>>)> {
        let np = self.a_diag.len();
        let m = self.c.len();
        let ncols = 6 * m + 1;
        let damp = Matrix6::identity() * lambda;

        // Block Cholesky of the tridiagonal pose block: diagonal factors L_i
        // and sub-diagonal blocks X_i = L_{i+1,i}.
        let mut l_diag: Vec<Matrix6<f64>> = Vec::with_capacity(np);
        let mut l_sub: Vec<Matrix6<f64>> = Vec::with_capacity(np.saturating_sub(1));
        for i in 0..np {
            let mut d = self.a_diag[i] + damp;
            if i > 0 {
                let x = l_sub[i - 1];
                d -= x * x.transpose();
            }
            let l = Cholesky::new(d)?.l();
            if i + 1 < np {
                let x = l.solve_lower_triangular(&self.a_off[i])?.transpose();
                l_sub.push(x);
            }
            l_diag.push(l);
        }

        // Right-hand sides [B | g_x], one 6-row block per pose.
        let mut y: Vec<Block6> = (0..np)
            .map(|p| {
                let mut blk = Block6::zeros(ncols);
                blk.column_mut(6 * m).copy_from(&self.gx[p]);
                blk
            })
            .collect();
        for (&(p, j), b) in &self.b {
            y[p].columns_mut(6 * j, 6).copy_from(b);
        }
        for i in 0..np {
            if i > 0 {
                let prev = y[i - 1].clone();
                y[i] -= l_sub[i - 1] * prev;
            }
            y[i] = l_diag[i].solve_lower_triangular(&y[i])?;
        }
        for i in (0..np).rev() {
            if i + 1 < np {
                let next = y[i + 1].clone();
                y[i] -= l_sub[i].transpose() * next;
            }
            y[i] = l_diag[i].tr_solve_lower_triangular(&y[i])?;
        }

        let dl = if m > 0 {
            let mut t = DMatrix::<f64>::zeros(6 * m, ncols);
            for (&(p, j), b) in &self.b {
                let mut rows = t.rows_mut(6 * j, 6);
                rows += b.transpose() * &y[p];
            }
            let mut s = DMatrix::<f64>::zeros(6 * m, 6 * m);
            let mut rhs = DVector::<f64>::zeros(6 * m);
            for j in 0..m {
                s.view_mut((6 * j, 6 * j), (6, 6)).copy_from(&(self.c[j] + damp));
                rhs.rows_mut(6 * j, 6).copy_from(&(-self.gl[j]));
            }
            s -= t.columns(0, 6 * m);
            rhs += t.column(6 * m);
            let chol = Cholesky::new(s)?;
            chol.solve(&rhs)
        } else {
            DVector::zeros(0)
        };

        let dx = (0..np)
            .map(|p| {
                let yb = y[p].columns(0, 6 * m);
                let v: Vector6<f64> = -(y[p].column(6 * m).into_owned() + yb * &dl);
                v
            })
            .collect();
        let dl = (0..m).map(|j| Vector6::from_iterator(dl.rows(6 * j, 6).iter().copied())).collect();
        Some((dx, dl))
    }
}

/// Levenberg-Marquardt on the weighted pose-graph cost with association
/// weights and orientation variances held fixed. Accepted steps strictly
/// decrease the cost. Stops when an accepted decrease falls below
/// `cost_tolerance * max(cost, 1)`, when no step is accepted before the damping
/// exceeds 1e8, or after `max_gn_iters` linearizations.
pub fn optimize_poses(g: &mut PoseFeatureGraph, cfg: &SolverConfig) -> Result<LmReport> {
    let p = Problem::new(g, cfg)?;
    let mut poses = g.robot_nodes.clone();
    let mut lms: Vec<Se3Pose> = g.landmarks.iter().map(|l| l.pose).collect();
    let mut cost = p.cost(&poses, &lms)?;
    let mut history = vec![cost];
    let mut lambda = cfg.lm_damping_init;
    let mut converged = poses.len() < 2 && lms.is_empty();
    let mut iterations = 0;

    'outer: while !converged && iterations < cfg.max_gn_iters {
        iterations += 1;
        let ne = Normal::build(&p, &poses, &lms)?;
        loop {
            let Some((dx, dl)) = ne.solve(lambda) else {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    return Err(OptimizerError::SingularNormalEquations { lambda });
                }
                continue;
            };
            let step = dx.iter().chain(&dl).map(|v| v.amax()).fold(0.0, f64::max);
            if step < 1e-15 {
                converged = true;
                break 'outer;
            }
            let mut trial_poses = poses.clone();
            for (k, d) in dx.iter().enumerate() {
                trial_poses[k + 1] = poses[k + 1].retract(&Twist(*d));
            }
            let trial_lms: Vec<Se3Pose> = lms.iter().zip(&dl).map(|(l, d)| retract_landmark(l, d)).collect();
            // A trial that leaves the valid domain counts as a rejected step.
            match p.cost(&trial_poses, &trial_lms) {
                Ok(c) if c < cost => {
                    let decrease = cost - c;
                    let scale = cost.max(1.0);
                    poses = trial_poses;
                    lms = trial_lms;
                    cost = c;
                    history.push(c);
                    lambda = (lambda * 0.1).max(LAMBDA_MIN);
                    if decrease < cfg.cost_tolerance * scale {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        converged = true;
                        break 'outer;
                    }
                }
            }
        }
    }

    g.robot_nodes = poses;
    for (l, pose) in g.landmarks.iter_mut().zip(lms) {
        l.pose = pose;
    }
    Ok(LmReport {
        cost_history: history,
        iterations,
        converged,
    })
}
