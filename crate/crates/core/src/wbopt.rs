//! Whole-body trajectory optimization by direct transcription.
//!
//! The decision variable is the waypoint sequence `x[0..T]` with `x[0]`
//! pinned to the start configuration. The objective is
//!
//! ```text
//! w_pos·‖p(x_T) − p_goal‖² + w_rot·‖Log(R_goalᵀ R(x_T))‖²
//!   + Σ_t Σ_j w_smooth[j]·(x[t+1][j] − x[t][j])²
//!   + Σ_t w_yaw·(yaw(t) − yaw_ref)²
//!   + Σ_t Σ_spheres w_col·max(0, d_safe − dist)²
//! ```
//!
//! subject to the joint box. Every term is a sum of squared residuals, so
//! the descent direction is preconditioned with the (block-tridiagonal)
//! Gauss-Newton matrix; steps are projected onto the box and accepted by an
//! Armijo backtracking search on the true objective.

use crate::robot::{ChainState, Configuration, RobotError, RobotModel, BASE_DOF};
use crate::se3::{pose_error, rotation_error_vector, Pose};
pub use crate::synthesis::PlanMode;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Terminal tolerance a converged plan must meet: meters, radians.
pub const TERMINAL_TOLERANCE: (f64, f64) = (5e-3, 0.02);
/// Slack on `d_safe` a converged plan may use.
pub const CLEARANCE_SLACK: f64 = 1e-3;
/// Index of the base yaw joint.
pub const YAW_INDEX: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error("waypoint {index} has {got} values, model has {expected} joints")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("invalid plan request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub w_pos: f64,
    pub w_rot: f64,
    pub w_smooth: Vec<f64>,
    pub w_yaw: f64,
    pub w_col: f64,
    pub d_safe: f64,
    /// Reference base yaw; `None` holds the start yaw.
    pub yaw_ref: Option<f64>,
}

impl CostWeights {
    /// Defaults for a model: base smoothness weighted 4× the arm's.
    pub fn for_model(model: &RobotModel) -> Self {
        let w_smooth = (0..model.dof()).map(|j| if j < BASE_DOF { 4.0 } else { 1.0 }).collect();
        Self { w_pos: 1e4, w_rot: 1e4, w_smooth, w_yaw: 1.0, w_col: 1e4, d_safe: 0.05, yaw_ref: None }
    }

    pub fn validate(&self, dof: usize) -> Result<(), PlanError> {
        let all = [self.w_pos, self.w_rot, self.w_yaw, self.w_col];
        if all.iter().chain(&self.w_smooth).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(PlanError::InvalidRequest("weights must be finite and non-negative".into()));
        }
        if !(self.d_safe > 0.0) {
            return Err(PlanError::InvalidRequest("d_safe must be positive".into()));
        }
        if self.w_smooth.len() != dof {
            return Err(PlanError::InvalidRequest(format!(
                "w_smooth has {} entries, model has {dof} joints",
                self.w_smooth.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the cost by less than this.
    pub min_decrease: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 500, min_decrease: 1e-8, armijo: 1e-4, shrink: 0.5, max_backtracks: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub model: &'a RobotModel,
    pub x_init: Configuration,
    pub goal: Pose,
    /// Number of waypoints `T`, including the pinned start.
    pub waypoints: usize,
    pub weights: CostWeights,
    pub obstacles: Vec<Obstacle>,
    pub mode: PlanMode,
    pub options: SolverOptions,
}

impl<'a> PlanRequest<'a> {
    pub fn new(model: &'a RobotModel, x_init: Configuration, goal: Pose, waypoints: usize) -> Self {
        Self {
            model,
            weights: CostWeights::for_model(model),
            x_init,
            goal,
            waypoints,
            obstacles: Vec::new(),
            mode: PlanMode::WholeBody,
            options: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let n = self.model.dof();
        if self.waypoints < 2 {
            return Err(PlanError::InvalidRequest(format!("need at least 2 waypoints, got {}", self.waypoints)));
        }
        if self.x_init.len() != n {
            return Err(PlanError::DimensionMismatch { index: 0, expected: n, got: self.x_init.len() });
        }
        if !self.model.within_limits(&self.x_init) {
            return Err(PlanError::InvalidRequest("x_init violates joint limits".into()));
        }
        if self.obstacles.iter().any(|o| !(o.radius >= 0.0)) {
            return Err(PlanError::InvalidRequest("obstacle radius must be non-negative".into()));
        }
        self.weights.validate(n)
    }

    fn yaw_ref(&self) -> f64 {
        self.weights.yaw_ref.unwrap_or(self.x_init[YAW_INDEX])
    }

    fn free_mask(&self) -> Vec<bool> {
        free_mask(self.mode, self.model.dof())
    }
}

pub fn free_mask(mode: PlanMode, dof: usize) -> Vec<bool> {
    (0..dof)
        .map(|j| match mode {
            PlanMode::WholeBody => true,
            PlanMode::BaseOnly => j < BASE_DOF,
            PlanMode::ArmOnly => j >= BASE_DOF,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WholeBodyTrajectory {
    pub waypoints: Vec<Configuration>,
    pub converged: bool,
    pub final_cost: f64,
    pub iterations: usize,
    /// Terminal end-effector error `(meters, radians)`.
    pub terminal_error: (f64, f64),
    /// Smallest signed sphere-to-obstacle distance over the trajectory.
    pub min_clearance: f64,
}

/// Individual objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostTerms {
    pub eef: f64,
    pub smooth: f64,
    pub yaw: f64,
    pub collision: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.eef + self.smooth + self.yaw + self.collision
    }
}

fn check_traj(traj: &[Configuration], n: usize) -> Result<(), PlanError> {
    if traj.is_empty() {
        return Err(PlanError::InvalidRequest("trajectory is empty".into()));
    }
    for (index, q) in traj.iter().enumerate() {
        if q.len() != n {
            return Err(PlanError::DimensionMismatch { index, expected: n, got: q.len() });
        }
    }
    Ok(())
}

struct SphereHit {
    depth: f64,
    normal: Vector3<f64>,
    point: Vector3<f64>,
    link: usize,
}

fn sphere_hits(model: &RobotModel, state: &ChainState, obstacles: &[Obstacle], d_safe: f64) -> Vec<SphereHit> {
    let mut hits = Vec::new();
    for s in model.collision_spheres() {
        let c = model.link_point(state, s.link, &s.center);
        for o in obstacles {
            let delta = c - o.center;
            let norm = delta.norm();
            let dist = norm - s.radius - o.radius;
            let depth = d_safe - dist;
            if depth > 0.0 {
                let normal = if norm > 1e-12 { delta / norm } else { Vector3::x() };
                hits.push(SphereHit { depth, normal, point: c, link: s.link });
            }
        }
    }
    hits
}

/// Smallest signed distance between any robot sphere and any obstacle.
pub fn clearance(model: &RobotModel, q: &[f64], obstacles: &[Obstacle]) -> Result<f64, RobotError> {
    let state = model.chain_state(q)?;
    let mut best = f64::INFINITY;
    for s in model.collision_spheres() {
        let c = model.link_point(&state, s.link, &s.center);
        for o in obstacles {
            best = best.min((c - o.center).norm() - s.radius - o.radius);
        }
    }
    Ok(best)
}

pub fn cost_terms(traj: &[Configuration], req: &PlanRequest) -> Result<CostTerms, PlanError> {
    let model = req.model;
    let n = model.dof();
    check_traj(traj, n)?;
    let w = &req.weights;
    let mut terms = CostTerms::default();

    let last = traj.last().expect("non-empty");
    let eef = model.forward_kinematics(last)?;
    let (pos, rot) = pose_error(&eef, &req.goal);
    terms.eef = w.w_pos * pos * pos + w.w_rot * rot * rot;

    for pair in traj.windows(2) {
        for j in 0..n {
            let d = pair[1][j] - pair[0][j];
            terms.smooth += w.w_smooth[j] * d * d;
        }
    }

    let yaw_ref = req.yaw_ref();
    for q in traj {
        let d = q[YAW_INDEX] - yaw_ref;
        terms.yaw += w.w_yaw * d * d;
    }

    if w.w_col > 0.0 && !req.obstacles.is_empty() {
        for q in traj {
            let state = model.chain_state(q)?;
            for h in sphere_hits(model, &state, &req.obstacles, w.d_safe) {
                terms.collision += w.w_col * h.depth * h.depth;
            }
        }
    }
    Ok(terms)
}

pub fn total_cost(traj: &[Configuration], req: &PlanRequest) -> Result<f64, PlanError> {
    Ok(cost_terms(traj, req)?.total())
}

/// Analytic gradient of [`total_cost`] with respect to every waypoint.
pub fn cost_gradient(traj: &[Configuration], req: &PlanRequest) -> Result<Vec<Vec<f64>>, PlanError> {
    let n = req.model.dof();
    check_traj(traj, n)?;
    let mut grad = vec![vec![0.0; n]; traj.len()];
    accumulate(traj, req, &mut grad, None)?;
    Ok(grad)
}

/// Gauss-Newton blocks: diagonal `n×n` blocks per waypoint and the diagonal
/// of each off-diagonal block (smoothness couples only equal joints).
struct GnSystem {
    diag: Vec<DMatrix<f64>>,
    off: Vec<DVector<f64>>,
}

fn accumulate(traj: &[Configuration], req: &PlanRequest, grad: &mut [Vec<f64>], mut gn: Option<&mut GnSystem>) -> Result<(), PlanError> {
    let model = req.model;
    let n = model.dof();
    let w = &req.weights;
    let t_last = traj.len() - 1;

    // Terminal end-effector term.
    let state = model.chain_state(&traj[t_last])?;
    let jac = model.jacobian_from_state(&state);
    let jv = jac.fixed_rows::<3>(0);
    let jw = jac.fixed_rows::<3>(3);
    let dp = state.eef.translation() - req.goal.translation();
    let phi = rotation_error_vector(req.goal.rotation(), state.eef.rotation());
    let rg: Matrix3<f64> = req.goal.rotation_matrix();
    let g_pos = jv.transpose() * dp * (2.0 * w.w_pos);
    let g_rot = jw.transpose() * (rg * phi) * (2.0 * w.w_rot);
    for j in 0..n {
        grad[t_last][j] += g_pos[j] + g_rot[j];
    }
    if let Some(sys) = gn.as_deref_mut() {
        let jr = rg.transpose() * jw;
        let h = jv.transpose() * jv * w.w_pos + jr.transpose() * jr * w.w_rot;
        sys.diag[t_last] += DMatrix::from_iterator(n, n, h.iter().copied());
    }

    // Smoothness.
    for t in 0..t_last {
        for j in 0..n {
            let d = traj[t + 1][j] - traj[t][j];
            let g = 2.0 * w.w_smooth[j] * d;
            grad[t + 1][j] += g;
            grad[t][j] -= g;
        }
        if let Some(sys) = gn.as_deref_mut() {
            for j in 0..n {
                sys.diag[t][(j, j)] += w.w_smooth[j];
                sys.diag[t + 1][(j, j)] += w.w_smooth[j];
                sys.off[t][j] -= w.w_smooth[j];
            }
        }
    }

    // Base orientation.
    let yaw_ref = req.yaw_ref();
    for (t, q) in traj.iter().enumerate() {
        grad[t][YAW_INDEX] += 2.0 * w.w_yaw * (q[YAW_INDEX] - yaw_ref);
        if let Some(sys) = gn.as_deref_mut() {
            sys.diag[t][(YAW_INDEX, YAW_INDEX)] += w.w_yaw;
        }
    }

    // Collision hinge.
    if w.w_col > 0.0 && !req.obstacles.is_empty() {
        for (t, q) in traj.iter().enumerate() {
            let state = model.chain_state(q)?;
            for hit in sphere_hits(model, &state, &req.obstacles, w.d_safe) {
                let jp = model.point_jacobian(&state, hit.link, &hit.point);
                let row = hit.normal.transpose() * jp;
                for j in 0..n {
                    grad[t][j] -= 2.0 * w.w_col * hit.depth * row[j];
                }
                if let Some(sys) = gn.as_deref_mut() {
                    let h = row.transpose() * row * w.w_col;
                    sys.diag[t] += DMatrix::from_iterator(n, n, h.iter().copied());
                }
            }
        }
    }
    Ok(())
}

/// Solves the block-tridiagonal system for waypoints `1..T` (waypoint 0 is
/// pinned) with Levenberg damping `mu` on the diagonal.
fn solve_block_tridiagonal(sys: &GnSystem, rhs: &[Vec<f64>], free: &[bool], mu: f64) -> Option<Vec<Vec<f64>>> {
    let t_count = sys.diag.len();
    let n = free.len();
    let mut schur: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>> = Vec::with_capacity(t_count);
    let mut ys: Vec<DVector<f64>> = Vec::with_capacity(t_count);
    for t in 1..t_count {
        let mut d = sys.diag[t].clone();
        for j in 0..n {
            if free[j] {
                d[(j, j)] += mu * (d[(j, j)] + 1e-6);
            } else {
                d.row_mut(j).fill(0.0);
                d.column_mut(j).fill(0.0);
                d[(j, j)] = 1.0;
            }
        }
        let mut y = DVector::from_iterator(n, (0..n).map(|j| if free[j] { rhs[t][j] } else { 0.0 }));
        if t > 1 {
            // S_t = D_t − Bᵀ S_{t−1}⁻¹ B with B = diag(off[t−1]) on free joints.
            let b = DVector::from_iterator(n, (0..n).map(|j| if free[j] { sys.off[t - 1][j] } else { 0.0 }));
            let prev = &schur[schur.len() - 1];
            let inv = prev.inverse();
            for r in 0..n {
                for c in 0..n {
                    d[(r, c)] -= b[r] * inv[(r, c)] * b[c];
                }
            }
            let z = prev.solve(&ys[ys.len() - 1]);
            for j in 0..n {
                y[j] -= b[j] * z[j];
            }
        }
        schur.push(d.cholesky()?);
        ys.push(y);
    }
    let m = schur.len();
    let mut out = vec![vec![0.0; n]; t_count];
    let mut next: Option<DVector<f64>> = None;
    for k in (0..m).rev() {
        let t = k + 1;
        let mut y = ys[k].clone();
        if let Some(x_next) = &next {
            for j in 0..n {
                if free[j] {
                    y[j] -= sys.off[t][j] * x_next[j];
                }
            }
        }
        let x = schur[k].solve(&y);
        out[t] = x.iter().copied().collect();
        next = Some(x);
    }
    Some(out)
}

fn project(model: &RobotModel, traj: &mut [Configuration]) {
    for q in traj.iter_mut() {
        model.clamp(q);
    }
}

fn initial_guess(req: &PlanRequest) -> Vec<Configuration> {
    let model = req.model;
    let free = req.free_mask();
    let x0 = &req.x_init;
    let terminal = model
        .ik_damped_least_squares_masked(&req.goal, x0, 300, 1e-4, &free)
        .unwrap_or_else(|_| x0.clone());
    let t = req.waypoints;
    (0..t)
        .map(|k| {
            let s = k as f64 / (t - 1) as f64;
            let mut q: Vec<f64> = x0.iter().zip(terminal.iter()).map(|(a, b)| a + s * (b - a)).collect();
            for (j, f) in free.iter().enumerate() {
                if !f {
                    q[j] = x0[j];
                }
            }
            let mut q = Configuration(q);
            model.clamp(&mut q);
            q
        })
        .collect()
}

/// Optimizes a whole-body trajectory for `req`.
pub fn plan(req: &PlanRequest) -> Result<WholeBodyTrajectory, PlanError> {
    req.validate()?;
    let init = initial_guess(req);
    optimize(req, init)
}

/// Runs the solver from a caller-supplied initial trajectory.
pub fn optimize(req: &PlanRequest, mut traj: Vec<Configuration>) -> Result<WholeBodyTrajectory, PlanError> {
    req.validate()?;
    let model = req.model;
    let n = model.dof();
    check_traj(&traj, n)?;
    if traj.len() != req.waypoints {
        return Err(PlanError::InvalidRequest("initial trajectory length differs from the waypoint count".into()));
    }
    let free = req.free_mask();
    traj[0] = req.x_init.clone();
    for q in traj.iter_mut().skip(1) {
        for (j, f) in free.iter().enumerate() {
            if !f {
                q[j] = req.x_init[j];
            }
        }
    }
    project(model, &mut traj);

    let opts = req.options;
    let mut cost = total_cost(&traj, req)?;
    let mut mu = 1e-3;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        iterations += 1;
        let mut grad = vec![vec![0.0; n]; traj.len()];
        let mut sys = GnSystem {
            diag: vec![DMatrix::zeros(n, n); traj.len()],
            off: vec![DVector::zeros(n); traj.len()],
        };
        accumulate(&traj, req, &mut grad, Some(&mut sys))?;
        for g in grad.iter_mut() {
            for (j, f) in free.iter().enumerate() {
                if !f {
                    g[j] = 0.0;
                }
            }
        }
        grad[0].iter_mut().for_each(|g| *g = 0.0);

        let gn_dir = solve_block_tridiagonal(&sys, &grad, &free, mu).map(|d| {
            d.into_iter().map(|v| v.into_iter().map(|x| -x).collect::<Vec<f64>>()).collect::<Vec<_>>()
        });
        let grad_dir: Vec<Vec<f64>> = grad.iter().map(|g| g.iter().map(|x| -x).collect()).collect();

        let mut accepted = None;
        for (kind, dir) in [gn_dir.as_ref(), Some(&grad_dir)].into_iter().enumerate() {
            let Some(dir) = dir else { continue };
            // The raw gradient step needs a scale: start it at a unit-length move.
            let mut alpha = if kind == 0 {
                1.0
            } else {
                let norm = dir.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 { continue } else { 1.0 / norm }
            };
            for _ in 0..opts.max_backtracks {
                let mut cand: Vec<Configuration> = traj
                    .iter()
                    .zip(dir)
                    .map(|(q, d)| Configuration(q.iter().zip(d).map(|(a, b)| a + alpha * b).collect()))
                    .collect();
                cand[0] = req.x_init.clone();
                project(model, &mut cand);
                let decrease_model: f64 = cand
                    .iter()
                    .zip(&traj)
                    .zip(&grad)
                    .map(|((c, x), g)| c.iter().zip(x.iter()).zip(g).map(|((a, b), g)| g * (a - b)).sum::<f64>())
                    .sum();
                let c = total_cost(&cand, req)?;
                if c <= cost + opts.armijo * decrease_model && c <= cost {
                    accepted = Some((cand, c, alpha, kind));
                    break;
                }
                alpha *= opts.shrink;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((cand, c, alpha, kind)) = accepted else { break };
        let decrease = cost - c;
        traj = cand;
        cost = c;
        if kind == 0 && alpha == 1.0 {
            mu = (mu / 3.0).max(1e-9);
        } else {
            mu = (mu * 4.0).min(1e6);
        }
        if decrease < opts.min_decrease {
            break;
        }
    }

    let eef = model.forward_kinematics(traj.last().expect("non-empty"))?;
    let terminal_error = pose_error(&eef, &req.goal);
    let mut min_clearance = f64::INFINITY;
    if !req.obstacles.is_empty() {
        for q in &traj {
            min_clearance = min_clearance.min(clearance(model, q, &req.obstacles)?);
        }
    }
    let clear = req.obstacles.is_empty()
        || model.collision_spheres().is_empty()
        || req.weights.w_col == 0.0
        || min_clearance >= req.weights.d_safe - CLEARANCE_SLACK;
    let converged = terminal_error.0 <= TERMINAL_TOLERANCE.0
        && terminal_error.1 <= TERMINAL_TOLERANCE.1
        && traj.iter().all(|q| model.within_limits(q))
        && clear;
    Ok(WholeBodyTrajectory { waypoints: traj, converged, final_cost: cost, iterations, terminal_error, min_clearance })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    /// Target end-effector travel per waypoint interval, meters (radians count at 0.3 m/rad).
    pub max_step: f64,
    pub min_waypoints: usize,
    pub max_waypoints: usize,
    pub mode: PlanMode,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { max_step: 0.05, min_waypoints: 3, max_waypoints: 40, mode: PlanMode::WholeBody }
    }
}

/// Result of tracking a pose sequence: the concatenated trajectory and the
/// index of the configuration that reached each tracked pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub trajectory: WholeBodyTrajectory,
    pub reached_at: Vec<usize>,
    pub errors: Vec<(f64, f64)>,
}

/// Chains [`plan`] calls through `waypoints`, seeding each segment with the
/// previous segment's final configuration.
pub fn track_eef_waypoints(
    model: &RobotModel,
    x_init: &Configuration,
    waypoints: &[Pose],
    weights: &CostWeights,
    obstacles: &[Obstacle],
    opts: &TrackOptions,
) -> Result<TrackResult, PlanError> {
    if waypoints.is_empty() {
        return Err(PlanError::InvalidRequest("no waypoints to track".into()));
    }
    let mut weights = weights.clone();
    if weights.yaw_ref.is_none() {
        weights.yaw_ref = Some(x_init[YAW_INDEX]);
    }
    let mut all = vec![x_init.clone()];
    let mut reached_at = Vec::with_capacity(waypoints.len());
    let mut errors = Vec::with_capacity(waypoints.len());
    let mut converged = true;
    let mut cost = 0.0;
    let mut iterations = 0;
    let mut min_clearance = f64::INFINITY;
    let mut current = x_init.clone();
    let mut prev_pose = model.forward_kinematics(x_init)?;
    for goal in waypoints {
        let (dp, dr) = pose_error(&prev_pose, goal);
        let travel = dp.max(0.3 * dr);
        let t = ((travel / opts.max_step).ceil() as usize + 1).clamp(opts.min_waypoints, opts.max_waypoints);
        let mut req = PlanRequest::new(model, current.clone(), *goal, t);
        req.weights = weights.clone();
        req.obstacles = obstacles.to_vec();
        req.mode = opts.mode;
        let seg = plan(&req)?;
        converged &= seg.converged;
        cost += seg.final_cost;
        iterations += seg.iterations;
        min_clearance = min_clearance.min(seg.min_clearance);
        errors.push(seg.terminal_error);
        current = seg.waypoints.last().expect("non-empty").clone();
        all.extend(seg.waypoints.into_iter().skip(1));
        reached_at.push(all.len() - 1);
        prev_pose = model.forward_kinematics(&current)?;
    }
    let terminal_error = *errors.last().expect("non-empty");
    Ok(TrackResult {
        trajectory: WholeBodyTrajectory { waypoints: all, converged, final_cost: cost, iterations, terminal_error, min_clearance },
        reached_at,
        errors,
    })
}
