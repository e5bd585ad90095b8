//! Time-optimal path parameterization by reachability analysis.
//!
//! The path is sampled on a uniform grid `s_i`. With `x = ṡ²` and `u = s̈`
//! the joint accelerations `q''x + q'u` are linear in `(u, x)` and
//! `x_{i+1} = x_i + 2Δu_i`. A backward pass builds the controllable set of
//! `x` at every grid point, a forward pass picks the largest reachable `x`.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ToppError {
    #[error("path has zero length")]
    Degenerate,
    #[error("no feasible path velocity at grid point {index}")]
    Infeasible { index: usize },
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

/// Joint velocity cap used for grid points where a joint does not move along the path.
const UNBOUNDED: f64 = 1e12;
/// Slack when testing membership in a controllable interval.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricPath {
    pub grid: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub dq: Vec<Vec<f64>>,
    pub ddq: Vec<Vec<f64>>,
}

impl GeometricPath {
    /// Builds a path from configurations sampled on a uniform `s` grid.
    /// Derivatives are central finite differences (one-sided at the ends).
    pub fn from_grid(q: Vec<Vec<f64>>) -> Result<Self, ToppError> {
        let n = q.len();
        if n < 2 {
            return Err(ToppError::InvalidPath(format!("need at least 2 grid points, got {n}")));
        }
        let dof = q[0].len();
        if dof == 0 || q.iter().any(|c| c.len() != dof) {
            return Err(ToppError::InvalidPath("configurations must share a non-zero dimension".into()));
        }
        if q.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ToppError::InvalidPath("non-finite configuration".into()));
        }
        let h = 1.0 / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| if i == n - 1 { 1.0 } else { i as f64 * h }).collect();
        let mut dq = vec![vec![0.0; dof]; n];
        let mut ddq = vec![vec![0.0; dof]; n];
        for i in 0..n {
            for j in 0..dof {
                dq[i][j] = if i == 0 {
                    (q[1][j] - q[0][j]) / h
                } else if i == n - 1 {
                    (q[n - 1][j] - q[n - 2][j]) / h
                } else {
                    (q[i + 1][j] - q[i - 1][j]) / (2.0 * h)
                };
            }
        }
        if n >= 3 {
            for i in 1..n - 1 {
                for j in 0..dof {
                    ddq[i][j] = (q[i + 1][j] - 2.0 * q[i][j] + q[i - 1][j]) / (h * h);
                }
            }
            ddq[0] = ddq[1].clone();
            ddq[n - 1] = ddq[n - 2].clone();
        }
        Ok(Self { grid, q, dq, ddq })
    }

    /// Fits a natural cubic spline through `waypoints` (uniform knots) and
    /// samples it on an `n`-point grid.
    pub fn from_waypoints(waypoints: &[Vec<f64>], n: usize) -> Result<Self, ToppError> {
        if waypoints.len() < 2 {
            return Err(ToppError::InvalidPath("need at least 2 waypoints".into()));
        }
        if n < 2 {
            return Err(ToppError::InvalidPath("grid needs at least 2 points".into()));
        }
        let dof = waypoints[0].len();
        if waypoints.iter().any(|w| w.len() != dof) {
            return Err(ToppError::InvalidPath("waypoints must share a dimension".into()));
        }
        let splines: Vec<NaturalSpline> = (0..dof)
            .map(|j| NaturalSpline::fit(&waypoints.iter().map(|w| w[j]).collect::<Vec<_>>()))
            .collect();
        let q = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                splines.iter().map(|sp| sp.eval(s)).collect()
            })
            .collect();
        Self::from_grid(q)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.q[0].len()
    }
}

/// Natural cubic spline over uniform knots on `[0, 1]`.
struct NaturalSpline {
    y: Vec<f64>,
    m: Vec<f64>,
    h: f64,
}

impl NaturalSpline {
    fn fit(y: &[f64]) -> Self {
        let k = y.len();
        let h = 1.0 / (k - 1) as f64;
        let mut m = vec![0.0; k];
        if k > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let inner = k - 2;
            let mut c = vec![0.0; inner];
            let mut d = vec![0.0; inner];
            for i in 0..inner {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h * h);
                let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
                c[i] = 1.0 / denom;
                d[i] = (rhs - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
            }
            for i in (0..inner).rev() {
                m[i + 1] = d[i] - if i + 1 < inner { c[i] * m[i + 2] } else { 0.0 };
            }
        }
        Self { y: y.to_vec(), m, h }
    }

    fn eval(&self, s: f64) -> f64 {
        let k = self.y.len();
        let i = ((s / self.h).floor() as usize).min(k - 2);
        let a = (i + 1) as f64 * self.h - s;
        let b = s - i as f64 * self.h;
        let h = self.h;
        self.m[i] * a.powi(3) / (6.0 * h)
            + self.m[i + 1] * b.powi(3) / (6.0 * h)
            + (self.y[i] / h - self.m[i] * h / 6.0) * a
            + (self.y[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrajectory {
    pub times: Vec<f64>,
    pub configurations: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub sd: Vec<f64>,
}

impl TimedTrajectory {
    pub fn duration(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedSample {
    pub time: f64,
    pub configuration: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Lower/upper bounds on `u` that are affine in `x`: `α + βx`.
#[derive(Clone, Copy)]
struct Affine {
    a: f64,
    b: f64,
}

impl Affine {
    fn at(&self, x: f64) -> f64 {
        self.a + self.b * x
    }
}

/// Acceleration constraints on segment `i`: `u` bounds affine in `x = x_i`
/// plus a direct cap on `x`. Both segment ends are constrained, the far end
/// through `x_{i+1} = x + 2Δu`.
fn stage_bounds(path: &GeometricPath, i: usize, delta: f64, a_max: &[f64]) -> (Vec<Affine>, Vec<Affine>, f64) {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut x_cap = f64::INFINITY;
    let mut ends = vec![i];
    if i + 1 < path.len() {
        ends.push(i + 1);
    }
    for (k, &e) in ends.iter().enumerate() {
        for j in 0..path.dof() {
            let (d1, d2, a) = (path.dq[e][j], path.ddq[e][j], a_max[j]);
            // −a ≤ cu·u + cx·x ≤ a
            let (cu, cx) = if k == 0 { (d1, d2) } else { (d1 + 2.0 * delta * d2, d2) };
            if cu.abs() > 1e-12 {
                let lo = Affine { a: -a / cu, b: -cx / cu };
                let hi = Affine { a: a / cu, b: -cx / cu };
                if cu > 0.0 {
                    lower.push(lo);
                    upper.push(hi);
                } else {
                    lower.push(hi);
                    upper.push(lo);
                }
            } else if cx.abs() > 1e-12 {
                x_cap = x_cap.min(a / cx.abs());
            }
        }
    }
    (lower, upper, x_cap)
}

/// Interval of `x ∈ [0, cap]` for which every lower bound sits below every upper bound.
fn feasible_x(lower: &[Affine], upper: &[Affine], cap: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, cap);
    for l in lower {
        for u in upper {
            // l.a + l.b x ≤ u.a + u.b x  ⇔  (l.b − u.b) x ≤ u.a − l.a
            let coef = l.b - u.b;
            let rhs = u.a - l.a;
            if coef.abs() < 1e-14 {
                if rhs < -EPS * (1.0 + rhs.abs()) {
                    return None;
                }
            } else if coef > 0.0 {
                hi = hi.min(rhs / coef);
            } else {
                lo = lo.max(rhs / coef);
            }
        }
    }
    if lo <= hi + EPS * (1.0 + hi.abs()) {
        Some((lo, hi.max(lo)))
    } else {
        None
    }
}

fn check_limits(name: &str, v: &[f64], dof: usize) -> Result<(), ToppError> {
    if v.len() != dof {
        return Err(ToppError::InvalidLimits(format!("{name} has {} entries, path has {dof} joints", v.len())));
    }
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(ToppError::InvalidLimits(format!("{name} must be positive and finite")));
    }
    Ok(())
}

/// Time-optimal rest-to-rest retiming under joint velocity and acceleration limits.
pub fn retime(path: &GeometricPath, v_max: &[f64], a_max: &[f64]) -> Result<TimedTrajectory, ToppError> {
    let n = path.len();
    let dof = path.dof();
    check_limits("v_max", v_max, dof)?;
    check_limits("a_max", a_max, dof)?;
    let scale = path.q.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let moved = path.q.iter().any(|c| c.iter().zip(&path.q[0]).any(|(a, b)| (a - b).abs() > 1e-12 * scale));
    if !moved {
        return Err(ToppError::Degenerate);
    }
    let delta = path.grid[1] - path.grid[0];

    let vel_cap: Vec<f64> = (0..n)
        .map(|i| {
            (0..dof)
                .map(|j| {
                    let d = path.dq[i][j].abs();
                    if d > 1e-12 { (v_max[j] / d).powi(2) } else { UNBOUNDED }
                })
                .fold(UNBOUNDED, f64::min)
        })
        .collect();

    // Backward pass: controllable sets K_i, K_{N−1} = {0}.
    let mut k_sets = vec![(0.0, 0.0); n];
    for i in (0..n - 1).rev() {
        let (mut lower, mut upper, x_cap) = stage_bounds(path, i, delta, a_max);
        let (nlo, nhi) = k_sets[i + 1];
        // nlo ≤ x + 2Δu ≤ nhi
        lower.push(Affine { a: nlo / (2.0 * delta), b: -1.0 / (2.0 * delta) });
        upper.push(Affine { a: nhi / (2.0 * delta), b: -1.0 / (2.0 * delta) });
        let cap = x_cap.min(vel_cap[i]);
        k_sets[i] = feasible_x(&lower, &upper, cap).ok_or(ToppError::Infeasible { index: i })?;
    }
    if k_sets[0].0 > EPS {
        return Err(ToppError::Infeasible { index: 0 });
    }

    // Forward pass from rest.
    let mut xs = vec![0.0; n];
    for i in 0..n - 1 {
        let (lower, upper, _) = stage_bounds(path, i, delta, a_max);
        let x = xs[i];
        let u_max = upper.iter().map(|u| u.at(x)).fold(f64::INFINITY, f64::min);
        let u_min = lower.iter().map(|l| l.at(x)).fold(f64::NEG_INFINITY, f64::max);
        let (nlo, nhi) = k_sets[i + 1];
        let mut next = if u_max.is_finite() { x + 2.0 * delta * u_max } else { nhi };
        next = next.min(nhi);
        let floor = if u_min.is_finite() { x + 2.0 * delta * u_min } else { nlo };
        if next < floor.max(nlo) - EPS * (1.0 + nhi.abs()) {
            return Err(ToppError::Infeasible { index: i + 1 });
        }
        xs[i + 1] = next.max(0.0);
    }
    xs[n - 1] = 0.0;

    let sd: Vec<f64> = xs.iter().map(|x| x.max(0.0).sqrt()).collect();
    let mut times = vec![0.0; n];
    for i in 0..n - 1 {
        let denom = sd[i] + sd[i + 1];
        if denom <= 0.0 {
            return Err(ToppError::Infeasible { index: i + 1 });
        }
        times[i + 1] = times[i] + 2.0 * delta / denom;
    }
    let velocities = (0..n)
        .map(|i| path.dq[i].iter().map(|d| d * sd[i]).collect())
        .collect();
    Ok(TimedTrajectory { times, configurations: path.q.clone(), velocities, sd })
}

/// Resamples `traj` at a fixed period by linear interpolation between grid
/// points; the last sample lands exactly on the terminal time.
pub fn sample_timed(traj: &TimedTrajectory, dt: f64) -> Result<Vec<TimedSample>, ToppError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ToppError::InvalidPath("dt must be positive".into()));
    }
    let total = traj.duration();
    let steps = ((total / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut seg = 0;
    let last = traj.times.len() - 1;
    let lerp = |a: &[f64], b: &[f64], w: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect() };
    for k in 0..=steps {
        let t = if k == steps { total } else { k as f64 * dt };
        while seg + 1 < last && traj.times[seg + 1] <= t {
            seg += 1;
        }
        let (t0, t1) = (traj.times[seg], traj.times[(seg + 1).min(last)]);
        let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
        let nxt = (seg + 1).min(last);
        out.push(TimedSample {
            time: t,
            configuration: lerp(&traj.configurations[seg], &traj.configurations[nxt], w),
            velocity: lerp(&traj.velocities[seg], &traj.velocities[nxt], w),
        });
    }
    Ok(out)
}
