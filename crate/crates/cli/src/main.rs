//! `mmdemo`: generate demonstrations, plan, retime, preprocess clouds,
//! train and evaluate policies, and run benchmark sweeps.

use clap::{Parser, Subcommand, ValueEnum};
use mmdemo::dataset::{read_dataset, DatasetError};
use mmdemo::flow::{kinematic_rollout_eval, load_policy, save_policy, train_policy, write_loss_csv, FlowError, TrainConfig};
use mmdemo::harness::{self, BenchConfig, HarnessError, TaskEnv};
use mmdemo::pointcloud::{preprocess, Aabb, CameraExtrinsic, CloudError, PointCloud, PreprocessParams};
use mmdemo::robot::RobotError;
use mmdemo::synthesis::PlanMode;
use mmdemo::topp::{retime, sample_timed, GeometricPath, ToppError};
use mmdemo::wbopt::{plan, CostWeights, PlanError, PlanRequest};
use mmdemo::{Configuration, Pose, RobotModel};
use nalgebra::{UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Parser)]
#[command(name = "mmdemo", version, about = "Mobile-manipulation demonstration pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    WholeBody,
    BaseOnly,
    ArmOnly,
}

impl From<Mode> for PlanMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::WholeBody => PlanMode::WholeBody,
            Mode::BaseOnly => PlanMode::BaseOnly,
            Mode::ArmOnly => PlanMode::ArmOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize, validate and store demonstrations for a built-in task.
    Generate {
        #[arg(long)]
        task: String,
        #[arg(long)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Append pooled point-cloud features to observations.
        #[arg(long)]
        cloud_features: bool,
    },
    /// Whole-body trajectory optimization to an end-effector goal.
    Plan {
        /// Robot description (TOML); defaults to the toy mobile manipulator.
        #[arg(long)]
        robot: Option<PathBuf>,
        /// Start configuration, comma separated; defaults to zeros.
        #[arg(long)]
        start: Option<String>,
        /// Goal as x,y,z or x,y,z,roll,pitch,yaw.
        #[arg(long)]
        goal: String,
        #[arg(long, default_value_t = 20)]
        waypoints: usize,
        #[arg(long, value_enum, default_value = "whole-body")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time-optimal retiming of a waypoint path (CSV, one row per waypoint).
    Retime {
        #[arg(long)]
        path: PathBuf,
        /// Velocity limits, one value or one per joint.
        #[arg(long)]
        vmax: String,
        /// Acceleration limits, one value or one per joint.
        #[arg(long)]
        amax: String,
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Sampling period for the output table.
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse, crop, voxel-downsample and outlier-filter point clouds.
    Pc {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.02)]
        voxel: f64,
        #[arg(long, default_value_t = 8)]
        sor_k: usize,
        #[arg(long, default_value_t = 1.0)]
        sor_std: f64,
        /// Crop box as minx,miny,minz,maxx,maxy,maxz.
        #[arg(long)]
        crop: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a flow-matching chunk policy on one or two datasets.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Second source, co-trained with equal sampling probability.
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        min_lr: Option<f64>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Hidden widths, comma separated.
        #[arg(long)]
        hidden: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        inference_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Closed-loop kinematic evaluation of a trained policy.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 30)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Actions executed per predicted chunk; defaults to half the horizon.
        #[arg(long)]
        exec_horizon: Option<usize>,
        #[arg(long)]
        cloud_features: bool,
    },
    /// Generate, train and evaluate over a grid of tasks, demo counts and seeds.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(m: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: m.into() }
    }
    fn io(m: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: m.into() }
    }
    fn numerical(m: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: m.into() }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::io(e.to_string())
    }
}

impl From<CloudError> for Failure {
    fn from(e: CloudError) -> Self {
        match e {
            CloudError::Invalid(_) => Failure::config(e.to_string()),
            _ => Failure::io(e.to_string()),
        }
    }
}

impl From<ToppError> for Failure {
    fn from(e: ToppError) -> Self {
        match e {
            ToppError::InvalidLimits(_) | ToppError::InvalidPath(_) => Failure::config(e.to_string()),
            _ => Failure::numerical(e.to_string()),
        }
    }
}

impl From<RobotError> for Failure {
    fn from(e: RobotError) -> Self {
        match e {
            RobotError::Io(_) => Failure::io(e.to_string()),
            _ => Failure::config(e.to_string()),
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Robot(r) => r.into(),
            _ => Failure::config(e.to_string()),
        }
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Config(_) | FlowError::Dimension(_) | FlowError::NoData => Failure::config(e.to_string()),
            FlowError::Dataset(d) => d.into(),
            FlowError::Io { .. } => Failure::io(e.to_string()),
            FlowError::EmptyBatch => Failure::numerical(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownTask(_) | HarnessError::Config(_) => Failure::config(e.to_string()),
            HarnessError::Dataset(d) => d.into(),
            HarnessError::Flow(f) => f.into(),
            HarnessError::Io { .. } => Failure::io(e.to_string()),
            _ => Failure::numerical(e.to_string()),
        }
    }
}

fn parse_list(what: &str, text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Failure::config(format!("{what}: cannot parse {s:?} as a number"))))
        .collect()
}

fn broadcast(what: &str, text: &str, n: usize) -> Result<Vec<f64>, Failure> {
    let v = parse_list(what, text)?;
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        len if len == n => Ok(v),
        len => Err(Failure::config(format!("{what}: expected 1 or {n} values, got {len}"))),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_list("path", line) {
            Ok(r) => rows.push(r),
            // A non-numeric first line is a header.
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Failure::io(format!("{}:{}: {}", path.display(), i + 1, e.message))),
        }
    }
    Ok(rows)
}

fn cmd_generate(task: &str, episodes: u64, seed: u64, out: &Path, workers: usize, cloud: bool) -> Result<(), Failure> {
    let mut def = harness::builtin_task(task, seed)?;
    def.cloud_features = cloud;
    let (_, report) = harness::generate(&def, episodes, workers, Some(out))?;
    println!("kept {}/{}", report.kept, report.attempted);
    for (reason, n) in &report.failures {
        eprintln!("dropped {n}: {reason}");
    }
    Ok(())
}

fn cmd_plan(robot: Option<&Path>, start: Option<&str>, goal: &str, waypoints: usize, mode: Mode, out: Option<&Path>) -> Result<(), Failure> {
    let model = match robot {
        Some(p) => RobotModel::load(p)?,
        None => RobotModel::toy_mobile_manipulator(),
    };
    let x_init = match start {
        Some(s) => Configuration(parse_list("start", s)?),
        None => Configuration::zeros(model.dof()),
    };
    let g = parse_list("goal", goal)?;
    let goal = match g.as_slice() {
        [x, y, z] => Pose::from_translation(Vector3::new(*x, *y, *z)),
        [x, y, z, r, p, yaw] => Pose::new(UnitQuaternion::from_euler_angles(*r, *p, *yaw), Vector3::new(*x, *y, *z)),
        _ => return Err(Failure::config("goal: expected 3 or 6 values")),
    };
    let mut req = PlanRequest::new(&model, x_init, goal, waypoints);
    req.weights = CostWeights::for_model(&model);
    req.mode = mode.into();
    let traj = plan(&req)?;
    let mut text = String::new();
    let header: Vec<String> = (0..model.dof()).map(|j| format!("q{j}")).collect();
    writeln!(text, "{}", header.join(",")).expect("string write");
    for q in &traj.waypoints {
        let row: Vec<String> = q.0.iter().map(f64::to_string).collect();
        writeln!(text, "{}", row.join(",")).expect("string write");
    }
    write_output(out, &text)?;
    eprintln!(
        "converged: {}, iterations: {}, cost: {:.6e}, terminal error: {:.4} m / {:.4} rad, min clearance: {:.4} m",
        traj.converged, traj.iterations, traj.final_cost, traj.terminal_error.0, traj.terminal_error.1, traj.min_clearance
    );
    if traj.converged {
        Ok(())
    } else {
        Err(Failure::numerical("optimizer did not reach the terminal tolerance"))
    }
}

fn cmd_retime(path: &Path, vmax: &str, amax: &str, grid: usize, dt: f64, out: Option<&Path>) -> Result<(), Failure> {
    let rows = read_csv_rows(path)?;
    let dof = rows.first().map(Vec::len).ok_or_else(|| Failure::io(format!("{}: no waypoints", path.display())))?;
    let v = broadcast("vmax", vmax, dof)?;
    let a = broadcast("amax", amax, dof)?;
    let geo = GeometricPath::from_waypoints(&rows, grid)?;
    let timed = retime(&geo, &v, &a)?;
    let samples = sample_timed(&timed, dt)?;
    println!("duration_s: {:.6}", timed.duration());
    if let Some(out) = out {
        let mut text = String::from("t");
        for j in 0..dof {
            write!(text, ",q{j}").expect("string write");
        }
        for j in 0..dof {
            write!(text, ",v{j}").expect("string write");
        }
        text.push('\n');
        for s in &samples {
            let cols: Vec<String> = std::iter::once(s.time).chain(s.configuration.iter().copied()).chain(s.velocity.iter().copied()).map(|x| x.to_string()).collect();
            writeln!(text, "{}", cols.join(",")).expect("string write");
        }
        write_output(Some(out), &text)?;
    }
    Ok(())
}

fn cmd_pc(inputs: &[PathBuf], voxel: f64, sor_k: usize, sor_std: f64, crop: Option<&str>, out: &Path) -> Result<(), Failure> {
    let crop = match crop {
        Some(c) => match parse_list("crop", c)?.as_slice() {
            [a, b, c, d, e, f] => Some(Aabb { min: Vector3::new(*a, *b, *c), max: Vector3::new(*d, *e, *f) }),
            _ => return Err(Failure::config("crop: expected 6 values")),
        },
        None => None,
    };
    let mut views = Vec::new();
    for (id, p) in inputs.iter().enumerate() {
        let cloud = PointCloud::read(p).map_err(|e| Failure::from(e).with_path(p))?;
        views.push((CameraExtrinsic { id: id as u32, camera_to_world: Pose::identity() }, cloud));
    }
    let total: usize = views.iter().map(|(_, c)| c.len()).sum();
    let cloud = preprocess(&views, &PreprocessParams { voxel, sor_k, sor_std, crop })?;
    cloud.write(out).map_err(|e| Failure::from(e).with_path(out))?;
    println!("points: {total} -> {}", cloud.len());
    Ok(())
}

impl Failure {
    fn with_path(mut self, p: &Path) -> Self {
        self.message = format!("{}: {}", p.display(), self.message);
        self
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    real: Option<&Path>,
    out: &Path,
    steps: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    min_lr: Option<f64>,
    warmup: Option<usize>,
    hidden: Option<&str>,
    horizon: Option<usize>,
    inference_steps: Option<usize>,
    seed: u64,
) -> Result<(), Failure> {
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    cfg.total_steps = steps.unwrap_or(cfg.total_steps);
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.peak_lr = lr.unwrap_or(cfg.peak_lr);
    cfg.min_lr = min_lr.unwrap_or(cfg.min_lr);
    cfg.warmup_steps = warmup.unwrap_or(cfg.warmup_steps);
    cfg.horizon = horizon.unwrap_or(cfg.horizon);
    cfg.inference_steps = inference_steps.unwrap_or(cfg.inference_steps);
    if let Some(h) = hidden {
        cfg.hidden = h
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Failure::config(format!("hidden: cannot parse {s:?}"))))
            .collect::<Result<_, _>>()?;
    }
    cfg.validate()?;
    let sim = read_dataset(data)?;
    let real = match real {
        Some(r) => read_dataset(r)?,
        None => Vec::new(),
    };
    let keep = |v: Vec<_>| v.into_iter().filter(|d: &mmdemo::dataset::Demonstration| d.success).collect::<Vec<_>>();
    let (sim, real) = (keep(sim), keep(real));
    let (policy, history) = train_policy(&sim, &real, &cfg)?;
    save_policy(&policy, &cfg, out)?;
    write_loss_csv(&history, &out.join("loss.csv"))?;
    let last = history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("trained on {} + {} demos, {} steps, final loss {last:.6}", sim.len(), real.len(), cfg.total_steps);
    Ok(())
}

fn cmd_eval(policy: &Path, task: &str, episodes: u64, seed: u64, max_steps: Option<usize>, exec: Option<usize>, cloud: bool) -> Result<(), Failure> {
    let policy = load_policy(policy)?;
    let mut def = harness::builtin_task(task, seed)?;
    def.cloud_features = cloud;
    let env = TaskEnv::for_evaluation(&def);
    let probe = env.try_reset(0)?;
    let obs_dim = env.observation(&probe).len();
    if obs_dim != policy.net.obs_dim || env.action_dim() != policy.action_dim {
        return Err(Failure::config(format!(
            "policy expects observation/action widths {}/{}, task {task} provides {obs_dim}/{}",
            policy.net.obs_dim,
            policy.action_dim,
            env.action_dim()
        )));
    }
    let exec = exec.unwrap_or((policy.horizon / 2).max(1));
    let r = kinematic_rollout_eval(&policy, &env, episodes, max_steps.unwrap_or(def.max_steps), exec, seed);
    println!("successes {}/{} rate {:.4}", r.successes, r.episodes, r.rate());
    Ok(())
}

fn cmd_bench(config: &Path, out: Option<&Path>, workers: Option<usize>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::io(format!("{}: {e}", config.display())))?;
    let mut cfg = BenchConfig::from_toml_str(&text)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let (rows, _) = harness::run_bench(&cfg, |c| eprintln!("{} seed {} demos {}: {}/{}", c.task, c.seed, c.demos, c.successes, c.rollouts))?;
    let mut buf = Vec::new();
    harness::write_bench_csv(&rows, &mut buf).map_err(|e| Failure::io(e.to_string()))?;
    write_output(out, &String::from_utf8(buf).expect("CSV is UTF-8"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { task, episodes, seed, out, workers, cloud_features } => cmd_generate(&task, episodes, seed, &out, workers, cloud_features),
        Command::Plan { robot, start, goal, waypoints, mode, out } => cmd_plan(robot.as_deref(), start.as_deref(), &goal, waypoints, mode, out.as_deref()),
        Command::Retime { path, vmax, amax, grid, dt, out } => cmd_retime(&path, &vmax, &amax, grid, dt, out.as_deref()),
        Command::Pc { input, voxel, sor_k, sor_std, crop, out } => cmd_pc(&input, voxel, sor_k, sor_std, crop.as_deref(), &out),
        Command::Train { data, real, out, steps, batch_size, lr, min_lr, warmup, hidden, horizon, inference_steps, seed } => {
            cmd_train(&data, real.as_deref(), &out, steps, batch_size, lr, min_lr, warmup, hidden.as_deref(), horizon, inference_steps, seed)
        }
        Command::Eval { policy, task, episodes, seed, max_steps, exec_horizon, cloud_features } => {
            cmd_eval(&policy, &task, episodes, seed, max_steps, exec_horizon, cloud_features)
        }
        Command::Bench { config, out, workers } => cmd_bench(&config, out.as_deref(), workers),
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
