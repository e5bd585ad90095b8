//! End-to-end pipelines: demonstration generation, kinematic playback,
//! and the train/evaluate benchmark sweep.

use crate::dataset::{episode_dir, write_demo, DatasetError, Demonstration, Step};
use crate::flow::{kinematic_rollout_eval, train_policy, FlowError, RolloutEnv, TrainConfig};
use crate::pointcloud::{self, Aabb, CameraExtrinsic, Intrinsics, NoiseParams, PreprocessParams, Shape};
use crate::robot::{RobotError, RobotModel, BASE_DOF};
use crate::scene::{check_success, reset_episode, ArticulatedObject, FunctionalAxis, ResetSpec, RigidObject, SceneError, SceneState, SceneTemplate, SuccessPredicate, Subject};
use crate::se3::Pose;
use crate::synthesis::{compose_primitives, Gripper, GraspTarget, MotionTarget, Primitive, SynthesisError, GRASP_REACH};
use crate::topp::{retime, sample_timed, GeometricPath, ToppError};
use crate::wbopt::{track_eef_waypoints, CostWeights, Obstacle, PlanError, TrackOptions};
use crate::JointSpec;
use nalgebra::{UnitQuaternion, Vector3};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Control period of generated demonstrations, seconds.
pub const CONTROL_DT: f64 = 0.1;
pub const TASK_NAMES: [&str; 4] = ["reach", "open-drawer", "open-door", "pick-place"];
/// Offset added to the task seed so evaluation scenes differ from training scenes.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown task {0:?} (known: reach, open-drawer, open-door, pick-place)")]
    UnknownTask(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Topp(#[from] ToppError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Everything needed to synthesize and evaluate one task.
#[derive(Debug, Clone)]
pub struct TaskDef {
    pub name: String,
    pub robot: RobotModel,
    pub reset: ResetSpec,
    pub script: Vec<Primitive>,
    pub success: SuccessPredicate,
    pub obstacles: Vec<Obstacle>,
    pub weights: CostWeights,
    pub track: TrackOptions,
    /// Control-step budget for policy rollouts.
    pub max_steps: usize,
    /// Append pooled point-cloud features to observations.
    pub cloud_features: bool,
}

fn grasp_facing_minus_x(height: f64, offset: Vector3<f64>) -> Pose {
    // Approach axis (gripper z) along −x of the link.
    let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI) * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2);
    Pose::new(r, Vector3::new(offset.x, offset.y, height + offset.z))
}

fn home_arm() -> Vec<(f64, f64)> {
    vec![(-0.2, 0.2), (-0.3, -0.1), (0.8, 1.2), (0.2, 0.5)]
}

pub fn builtin_task(name: &str, seed: u64) -> Result<TaskDef, HarnessError> {
    let robot = RobotModel::toy_mobile_manipulator();
    let weights = CostWeights::for_model(&robot);
    let facing = Pose::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI));
    let side_grasp = |h: f64| Pose::new(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2), Vector3::new(0.0, 0.0, h));
    let (template, position, yaw, scale, script, success, max_steps) = match name {
        "reach" => {
            let target = RigidObject { pose: Pose::identity(), grasp: side_grasp(0.0), functional_axis: None, extent: 0.04 };
            (
                SceneTemplate { articulated: None, objects: vec![target] },
                [(0.6, 0.9), (-0.4, 0.4), (0.3, 0.6)],
                (-0.5, 0.5),
                (1.0, 1.0),
                vec![Primitive::Approach { target: Some(GraspTarget::Object(0)) }],
                SuccessPredicate::distance_between(0.05, Subject::Eef, Subject::Grasp(0))?,
                60,
            )
        }
        "open-drawer" => {
            let joint = JointSpec::prismatic(Vector3::x(), Pose::identity(), (0.0, 0.4));
            let drawer = ArticulatedObject::new(facing, joint, Pose::identity(), grasp_facing_minus_x(0.45, Vector3::new(0.02, 0.0, 0.0)), 0.0)?;
            (
                SceneTemplate { articulated: Some(drawer), objects: vec![] },
                [(1.0, 1.3), (-0.3, 0.3), (0.0, 0.0)],
                (-0.3, 0.3),
                (1.0, 1.0),
                vec![Primitive::Approach { target: None }, Primitive::GripperClose, Primitive::VkcSweep { theta_goal: 0.25, steps: 20 }, Primitive::GripperOpen, Primitive::Retreat { distance: 0.08 }],
                SuccessPredicate::joint_angle(0.25, 0.02)?,
                120,
            )
        }
        "open-door" => {
            let joint = JointSpec::revolute(Vector3::z(), Pose::identity(), (0.0, 1.6));
            let door = ArticulatedObject::new(facing, joint, Pose::identity(), grasp_facing_minus_x(0.45, Vector3::new(0.04, -0.4, 0.0)), 0.0)?;
            (
                SceneTemplate { articulated: Some(door), objects: vec![] },
                [(1.0, 1.3), (-0.2, 0.2), (0.0, 0.0)],
                (-0.2, 0.2),
                (0.9, 1.1),
                vec![Primitive::Approach { target: None }, Primitive::GripperClose, Primitive::VkcSweep { theta_goal: 1.0, steps: 20 }, Primitive::GripperOpen, Primitive::Retreat { distance: 0.08 }],
                SuccessPredicate::joint_angle(1.0, 0.05)?,
                150,
            )
        }
        "pick-place" => {
            let cup = RigidObject {
                pose: Pose::identity(),
                grasp: side_grasp(0.05),
                functional_axis: Some(FunctionalAxis::new(Vector3::zeros(), -Vector3::z())?),
                extent: 0.05,
            };
            let tray = RigidObject {
                pose: Pose::from_translation(Vector3::new(0.5, 0.6, 0.25)),
                grasp: Pose::identity(),
                functional_axis: Some(FunctionalAxis::new(Vector3::zeros(), Vector3::z())?),
                extent: 0.15,
            };
            (
                SceneTemplate { articulated: None, objects: vec![cup, tray] },
                [(0.7, 0.9), (-0.3, 0.2), (0.3, 0.3)],
                (-0.4, 0.4),
                (1.0, 1.0),
                vec![
                    Primitive::Approach { target: Some(GraspTarget::Object(0)) },
                    Primitive::GripperClose,
                    Primitive::Align { target: 1, standoff: 0.02 },
                    Primitive::GripperOpen,
                    Primitive::Retreat { distance: 0.08 },
                ],
                SuccessPredicate::distance_between(0.05, Subject::Object(0), Subject::Object(1))?,
                150,
            )
        }
        other => return Err(HarnessError::UnknownTask(other.to_string())),
    };
    Ok(TaskDef {
        name: name.to_string(),
        robot,
        reset: ResetSpec { template, position, yaw, scale, arm: home_arm(), seed },
        script,
        success,
        obstacles: Vec::new(),
        weights,
        track: TrackOptions::default(),
        max_steps,
        cloud_features: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Attachment {
    Handle { eef_in_link: Pose },
    Object { index: usize, eef_in_object: Pose },
}

/// Scene plus gripper state during kinematic playback.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub scene: SceneState,
    pub gripper_closed: bool,
    attachment: Option<Attachment>,
    pub steps: usize,
}

/// Kinematic environment for a task: actions set base velocities, arm
/// targets and the gripper; grasped objects follow the gripper rigidly.
pub struct TaskEnv<'a> {
    pub task: &'a TaskDef,
    pub reset_seed: u64,
}

impl<'a> TaskEnv<'a> {
    pub fn new(task: &'a TaskDef) -> Self {
        Self { task, reset_seed: task.reset.seed }
    }

    pub fn for_evaluation(task: &'a TaskDef) -> Self {
        Self { task, reset_seed: task.reset.seed.wrapping_add(EVAL_SEED_OFFSET) }
    }

    pub fn try_reset(&self, episode: u64) -> Result<SimState, HarnessError> {
        let spec = ResetSpec { seed: self.reset_seed, ..self.task.reset.clone() };
        let mut scene = reset_episode(&spec, episode)?;
        scene.eef = Some(self.task.robot.forward_kinematics(&scene.robot)?);
        Ok(SimState { scene, gripper_closed: false, attachment: None, steps: 0 })
    }

    pub fn action_dim(&self) -> usize {
        self.task.robot.dof() + 1
    }

    fn grasp(&self, state: &mut SimState) {
        let eef = state.scene.eef.expect("eef is tracked");
        let mut best: (f64, Option<Attachment>) = (GRASP_REACH, None);
        if let Some(obj) = &state.scene.articulated {
            if let Ok(g) = obj.world_grasp(obj.joint_value) {
                let d = (g.translation() - eef.translation()).norm();
                if d <= best.0 {
                    let link = obj.link_pose(obj.joint_value).expect("current value is valid");
                    best = (d, Some(Attachment::Handle { eef_in_link: link.inverse().compose(&eef) }));
                }
            }
        }
        for (index, o) in state.scene.objects.iter().enumerate() {
            let d = (o.world_grasp().translation() - eef.translation()).norm();
            if d < best.0 {
                best = (d, Some(Attachment::Object { index, eef_in_object: o.pose.inverse().compose(&eef) }));
            }
        }
        state.attachment = best.1;
    }

    fn drag(&self, state: &mut SimState) {
        let eef = state.scene.eef.expect("eef is tracked");
        match state.attachment {
            Some(Attachment::Handle { eef_in_link }) => {
                if let Some(obj) = &mut state.scene.articulated {
                    let (lo, hi) = obj.joint.limits;
                    let v = obj.infer_joint_value(eef_in_link.translation(), eef.translation()).clamp(lo, hi);
                    obj.set_joint_value(v).expect("clamped to limits");
                }
            }
            Some(Attachment::Object { index, eef_in_object }) => {
                state.scene.objects[index].pose = eef.compose(&eef_in_object.inverse());
            }
            None => {}
        }
    }

    /// Task-level observation: configuration, gripper, object features and
    /// optionally pooled cloud features.
    pub fn observation(&self, state: &SimState) -> Vec<f64> {
        let mut o: Vec<f64> = state.scene.robot.to_vec();
        o.push(if state.gripper_closed { 1.0 } else { 0.0 });
        if let Some(obj) = &state.scene.articulated {
            let g = obj.world_grasp(obj.joint_value).expect("current value is valid");
            o.extend(g.translation().iter());
            o.push(obj.joint_value);
        }
        for obj in &state.scene.objects {
            o.extend(obj.pose.translation().iter());
            o.push(obj.pose.yaw());
        }
        if self.task.cloud_features {
            o.extend(cloud_features(&state.scene, (state.scene.episode << 16) ^ state.steps as u64));
        }
        o
    }
}

impl RolloutEnv for TaskEnv<'_> {
    type State = SimState;

    fn reset(&self, episode: u64) -> SimState {
        self.try_reset(episode).expect("validated task resets cleanly")
    }

    fn observe(&self, state: &SimState) -> Vec<f64> {
        self.observation(state)
    }

    fn apply(&self, state: &mut SimState, action: &[f64]) {
        let robot = &self.task.robot;
        let n = robot.dof();
        let q = &mut state.scene.robot;
        for j in 0..n {
            q[j] = if j < BASE_DOF { q[j] + action[j] * CONTROL_DT } else { action[j] };
        }
        robot.clamp(q);
        state.scene.eef = Some(robot.forward_kinematics(q).expect("configuration has model width"));
        let close = action[n] > 0.5;
        if close && !state.gripper_closed {
            self.grasp(state);
        } else if !close {
            state.attachment = None;
        }
        state.gripper_closed = close;
        self.drag(state);
        state.steps += 1;
    }

    fn success(&self, state: &SimState) -> bool {
        check_success(&state.scene, &self.task.success)
    }
}

/// Renders the scene from a fixed overhead camera, applies depth noise and
/// the shared preprocessing, and pools the cloud into centroid and spread.
pub fn cloud_features(scene: &SceneState, noise_seed: u64) -> Vec<f64> {
    let mut shapes: Vec<Shape> = scene.objects.iter().map(|o| Shape::Sphere { center: *o.pose.translation(), radius: o.extent }).collect();
    if let Some(obj) = &scene.articulated {
        if let Ok(g) = obj.world_grasp(obj.joint_value) {
            shapes.push(Shape::Sphere { center: *g.translation(), radius: 0.04 });
        }
    }
    let eye = Vector3::new(0.0, 0.0, 1.6);
    let look = (Vector3::new(1.0, 0.0, 0.3) - eye).normalize();
    let right = look.cross(&Vector3::z()).normalize();
    let down = look.cross(&right);
    let rot = nalgebra::Rotation3::from_basis_unchecked(&[right, down, look]);
    let camera = Pose::new(UnitQuaternion::from_rotation_matrix(&rot), eye);
    let k = Intrinsics { fx: 30.0, fy: 30.0, cx: 16.0, cy: 12.0 };
    let img = pointcloud::render_depth(&camera, k, 32, 24, &shapes, 4.0);
    let img = pointcloud::inject_depth_noise(&img, &NoiseParams::default(), noise_seed).expect("default noise parameters are valid");
    let view = (CameraExtrinsic { id: 0, camera_to_world: camera }, pointcloud::depth_to_cloud(&img));
    let params = PreprocessParams {
        voxel: 0.03,
        sor_k: 4,
        sor_std: 2.0,
        crop: Some(Aabb { min: Vector3::new(-0.5, -1.5, 0.0), max: Vector3::new(2.5, 1.5, 1.5) }),
    };
    let cloud = pointcloud::preprocess(&[view], &params).expect("valid preprocessing parameters");
    if cloud.is_empty() {
        return vec![0.0; 6];
    }
    let n = cloud.len() as f64;
    let mean = cloud.points.iter().sum::<Vector3<f64>>() / n;
    let var = cloud.points.iter().map(|p| (p - mean).component_mul(&(p - mean))).sum::<Vector3<f64>>() / n;
    vec![mean.x, mean.y, mean.z, var.x.sqrt(), var.y.sqrt(), var.z.sqrt()]
}

/// Result of synthesizing one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub demo: Option<Demonstration>,
    pub success: bool,
    /// Why synthesis stopped early, if it did.
    pub failure: Option<String>,
}

/// Control-rate configuration samples for a plan, with gripper states.
fn synthesize_motion(task: &TaskDef, scene: &SceneState) -> Result<Vec<(Vec<f64>, bool)>, String> {
    let robot = &task.robot;
    let eef0 = robot.forward_kinematics(&scene.robot).map_err(|e| e.to_string())?;
    let plan = compose_primitives(scene, &eef0, &task.script).map_err(|e| format!("synthesis: {e}"))?;
    let mut q = scene.robot.clone();
    let mut gripper = false;
    let mut frames = vec![(q.to_vec(), gripper)];
    for (index, step) in plan.steps.iter().enumerate() {
        match step.gripper {
            Gripper::Open => gripper = false,
            Gripper::Close => gripper = true,
            Gripper::Hold => {}
        }
        let targets = match &step.directive.target {
            MotionTarget::Hold => {
                frames.push((q.to_vec(), gripper));
                continue;
            }
            MotionTarget::Base(_) => vec![step.poses[0]],
            MotionTarget::Track(p) => p.clone(),
        };
        let opts = TrackOptions { mode: step.directive.mode, ..task.track };
        let tracked = track_eef_waypoints(robot, &q, &targets, &task.weights, &task.obstacles, &opts).map_err(|e| format!("step {index}: {e}"))?;
        if !tracked.trajectory.converged {
            return Err(format!("step {index}: whole-body plan did not converge (error {:?})", tracked.trajectory.terminal_error));
        }
        let wps: Vec<Vec<f64>> = tracked.trajectory.waypoints.iter().map(|c| c.to_vec()).collect();
        let grid = (wps.len() * 10).clamp(101, 801);
        let path = GeometricPath::from_waypoints(&wps, grid).map_err(|e| e.to_string())?;
        let timed = match retime(&path, &robot.v_max(), &robot.a_max()) {
            Ok(t) => t,
            Err(ToppError::Degenerate) => continue,
            Err(e) => return Err(format!("step {index}: retiming failed: {e}")),
        };
        let samples = sample_timed(&timed, CONTROL_DT).map_err(|e| e.to_string())?;
        for s in samples.into_iter().skip(1) {
            let mut c = crate::Configuration(s.configuration);
            robot.clamp(&mut c);
            frames.push((c.to_vec(), gripper));
        }
        q = crate::Configuration(frames.last().expect("non-empty").0.clone());
    }
    Ok(frames)
}

/// Actions that drive playback from frame `t` to frame `t + 1`.
fn frames_to_actions(frames: &[(Vec<f64>, bool)]) -> Vec<Vec<f64>> {
    frames
        .windows(2)
        .map(|w| {
            let (q0, _) = &w[0];
            let (q1, g1) = &w[1];
            let mut a: Vec<f64> = (0..q0.len()).map(|j| if j < BASE_DOF { (q1[j] - q0[j]) / CONTROL_DT } else { q1[j] }).collect();
            a.push(if *g1 { 1.0 } else { 0.0 });
            a
        })
        .collect()
}

/// Reset → plan → track → retime → sample → playback → success check.
pub fn run_episode(task: &TaskDef, episode: u64) -> Result<EpisodeRecord, HarnessError> {
    let env = TaskEnv::new(task);
    let mut state = env.try_reset(episode)?;
    let frames = match synthesize_motion(task, &state.scene) {
        Ok(f) => f,
        Err(reason) => return Ok(EpisodeRecord { episode, demo: None, success: false, failure: Some(reason) }),
    };
    let actions = frames_to_actions(&frames);
    if actions.is_empty() {
        return Ok(EpisodeRecord { episode, demo: None, success: false, failure: Some("empty plan".into()) });
    }
    let metadata = state.scene.params.clone();
    let mut steps = Vec::with_capacity(actions.len());
    for a in &actions {
        let obs = env.observation(&state);
        steps.push(Step { observation: obs.iter().map(|v| *v as f32).collect(), action: a.iter().map(|v| *v as f32).collect() });
        // Playback uses the stored (f32) action so replaying the file reproduces it.
        let stored: Vec<f64> = steps.last().expect("pushed").action.iter().map(|v| *v as f64).collect();
        env.apply(&mut state, &stored);
    }
    let success = env.success(&state);
    let demo = Demonstration { task: task.name.clone(), seed: task.reset.seed, episode, success, steps, metadata };
    let failure = (!success).then(|| "success predicate not met after playback".to_string());
    Ok(EpisodeRecord { episode, demo: Some(demo), success, failure })
}

/// Replays a stored demonstration's actions from its reset state.
pub fn replay_demo(task: &TaskDef, demo: &Demonstration) -> Result<bool, HarnessError> {
    let env = TaskEnv { task, reset_seed: demo.seed };
    let mut state = env.try_reset(demo.episode)?;
    for s in &demo.steps {
        let a: Vec<f64> = s.action.iter().map(|v| *v as f64).collect();
        if a.len() != env.action_dim() {
            return Err(HarnessError::Config(format!("action width {} does not match task {}", a.len(), task.name)));
        }
        env.apply(&mut state, &a);
    }
    Ok(env.success(&state))
}

/// Runs `run_episode` for every index in `episodes`, optionally on several
/// worker threads. Results come back in episode order either way.
pub fn run_episodes(task: &TaskDef, episodes: &[u64], workers: usize) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let workers = workers.max(1).min(episodes.len().max(1));
    if workers == 1 {
        return episodes.iter().map(|e| run_episode(task, *e)).collect();
    }
    let mut slots: Vec<Option<Result<EpisodeRecord, HarnessError>>> = (0..episodes.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..episodes.len()).step_by(workers).map(|i| (i, run_episode(task, episodes[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every episode ran")).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerateReport {
    pub attempted: usize,
    pub kept: usize,
    /// Failure reasons with their counts.
    pub failures: BTreeMap<String, usize>,
}

/// Generates episodes `0..episodes`, keeps the successful ones and writes
/// them under `out` (one directory per kept episode) when given.
pub fn generate(task: &TaskDef, episodes: u64, workers: usize, out: Option<&Path>) -> Result<(Vec<Demonstration>, GenerateReport), HarnessError> {
    let ids: Vec<u64> = (0..episodes).collect();
    let records = run_episodes(task, &ids, workers)?;
    let mut report = GenerateReport { attempted: records.len(), ..Default::default() };
    let mut kept = Vec::new();
    for r in records {
        match (r.success, r.demo) {
            (true, Some(d)) => kept.push(d),
            _ => {
                let reason = r.failure.unwrap_or_else(|| "unknown".into());
                let key = reason.split(':').next().unwrap_or("").to_string();
                *report.failures.entry(key).or_default() += 1;
            }
        }
    }
    report.kept = kept.len();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
        for d in &kept {
            write_demo(d, &episode_dir(dir, d.episode))?;
        }
    }
    Ok((kept, report))
}

/// Keeps generating until `count` successful demonstrations exist or
/// `max_attempts` episodes were tried.
pub fn generate_successes(task: &TaskDef, count: usize, max_attempts: u64, workers: usize) -> Result<(Vec<Demonstration>, GenerateReport), HarnessError> {
    let mut kept = Vec::with_capacity(count);
    let mut report = GenerateReport::default();
    let mut next = 0u64;
    while kept.len() < count && next < max_attempts {
        let batch = ((count - kept.len()) as u64 + 2).min(max_attempts - next);
        let ids: Vec<u64> = (next..next + batch).collect();
        next += batch;
        for r in run_episodes(task, &ids, workers)? {
            report.attempted += 1;
            if r.success && kept.len() < count {
                kept.push(r.demo.expect("successful episodes carry a demo"));
            } else if !r.success {
                *report.failures.entry(r.failure.unwrap_or_default().split(':').next().unwrap_or("").to_string()).or_default() += 1;
            }
        }
    }
    report.kept = kept.len();
    Ok((kept, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub tasks: Vec<String>,
    pub demo_counts: Vec<usize>,
    pub rollouts: usize,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub workers: usize,
    pub cloud_features: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tasks: vec!["reach".into()],
            demo_counts: vec![50, 100, 200],
            rollouts: 30,
            seeds: vec![0, 1, 2],
            train: bench_train_config(),
            workers: 1,
            cloud_features: false,
        }
    }
}

/// Desk-scale training settings used by the benchmark.
pub fn bench_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        total_steps: 5000,
        peak_lr: 1e-3,
        min_lr: 1e-5,
        warmup_steps: 100,
        weight_decay: 1e-6,
        clip_norm: 10.0,
        levels: 100,
        inference_steps: 10,
        horizon: 8,
        hidden: vec![128, 128, 128],
        seed: 0,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    tasks: Option<Vec<String>>,
    demo_counts: Option<Vec<usize>>,
    rollouts: Option<usize>,
    seeds: Option<Vec<u64>>,
    workers: Option<usize>,
    cloud_features: Option<bool>,
    train: Option<TrainSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    batch_size: Option<usize>,
    steps: Option<usize>,
    peak_lr: Option<f64>,
    min_lr: Option<f64>,
    warmup: Option<usize>,
    weight_decay: Option<f64>,
    clip_norm: Option<f64>,
    levels: Option<usize>,
    inference_steps: Option<usize>,
    horizon: Option<usize>,
    hidden: Option<Vec<usize>>,
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let f: BenchFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let d = Self::default();
        let mut train = d.train.clone();
        if let Some(t) = f.train {
            train.batch_size = t.batch_size.unwrap_or(train.batch_size);
            train.total_steps = t.steps.unwrap_or(train.total_steps);
            train.peak_lr = t.peak_lr.unwrap_or(train.peak_lr);
            train.min_lr = t.min_lr.unwrap_or(train.min_lr);
            train.warmup_steps = t.warmup.unwrap_or(train.warmup_steps);
            train.weight_decay = t.weight_decay.unwrap_or(train.weight_decay);
            train.clip_norm = t.clip_norm.unwrap_or(train.clip_norm);
            train.levels = t.levels.unwrap_or(train.levels);
            train.inference_steps = t.inference_steps.unwrap_or(train.inference_steps);
            train.horizon = t.horizon.unwrap_or(train.horizon);
            train.hidden = t.hidden.unwrap_or(train.hidden);
        }
        let cfg = Self {
            tasks: f.tasks.unwrap_or(d.tasks),
            demo_counts: f.demo_counts.unwrap_or(d.demo_counts),
            rollouts: f.rollouts.unwrap_or(d.rollouts),
            seeds: f.seeds.unwrap_or(d.seeds),
            workers: f.workers.unwrap_or(d.workers),
            cloud_features: f.cloud_features.unwrap_or(d.cloud_features),
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.tasks.is_empty() || self.demo_counts.is_empty() || self.seeds.is_empty() {
            return bad("tasks, demo_counts and seeds must be non-empty");
        }
        if self.demo_counts.contains(&0) || self.rollouts == 0 {
            return bad("demo counts and rollouts must be positive");
        }
        for t in &self.tasks {
            if !TASK_NAMES.contains(&t.as_str()) {
                return Err(HarnessError::UnknownTask(t.clone()));
            }
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub task: String,
    pub seed: u64,
    pub demos: usize,
    pub rollouts: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub task: String,
    pub demos: usize,
    pub rollouts: usize,
    pub successes: usize,
}

impl BenchRow {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.rollouts as f64
    }
}

/// Runs generate → train → evaluate for every task, seed and demo count.
/// Demo subsets are nested prefixes of one generated pool per seed.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchCell)) -> Result<(Vec<BenchRow>, Vec<BenchCell>), HarnessError> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let max_demos = *cfg.demo_counts.iter().max().expect("non-empty");
    for task_name in &cfg.tasks {
        for &seed in &cfg.seeds {
            let mut task = builtin_task(task_name, seed)?;
            task.cloud_features = cfg.cloud_features;
            let (pool, _) = generate_successes(&task, max_demos, 4 * max_demos as u64, cfg.workers)?;
            let env = TaskEnv::for_evaluation(&task);
            for &n in &cfg.demo_counts {
                let n_used = n.min(pool.len());
                let cell = if n_used == 0 {
                    BenchCell { task: task_name.clone(), seed, demos: n, rollouts: cfg.rollouts, successes: 0 }
                } else {
                    let train = TrainConfig { seed, ..cfg.train.clone() };
                    let (policy, _) = train_policy(&pool[..n_used], &[], &train)?;
                    let exec = (train.horizon / 2).max(1);
                    let r = kinematic_rollout_eval(&policy, &env, cfg.rollouts as u64, task.max_steps, exec, seed);
                    BenchCell { task: task_name.clone(), seed, demos: n, rollouts: r.episodes, successes: r.successes }
                };
                progress(&cell);
                cells.push(cell);
            }
        }
    }
    let mut rows = Vec::new();
    for task in &cfg.tasks {
        for &n in &cfg.demo_counts {
            let group: Vec<&BenchCell> = cells.iter().filter(|c| &c.task == task && c.demos == n).collect();
            rows.push(BenchRow {
                task: task.clone(),
                demos: n,
                rollouts: group.iter().map(|c| c.rollouts).sum(),
                successes: group.iter().map(|c| c.successes).sum(),
            });
        }
    }
    Ok((rows, cells))
}

pub fn write_bench_csv(rows: &[BenchRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "task,demos,rollouts,successes,rate")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{:.4}", r.task, r.demos, r.rollouts, r.successes, r.rate())?;
    }
    Ok(())
}
