//! Key end-effector poses for manipulation tasks.
//!
//! Articulated objects are handled by treating the grasped link and the
//! gripper as one rigid chain: once the gripper closes, sweeping the object
//! joint from `θ_init` to `θ_goal` moves the gripper along
//! `link(θ) · link(θ_init)⁻¹ · eef_init`. Rigid pick-and-place is reduced to
//! aligning the functional axes of the held object and its target.

use crate::scene::{ArticulatedObject, RigidObject, SceneError, SceneState};
use crate::se3::Pose;
use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default number of joint samples in a sweep.
pub const DEFAULT_SWEEP_STEPS: usize = 20;
/// Pre-grasp retreat along the grasp frame's −z axis, meters.
pub const APPROACH_OFFSET: f64 = 0.08;
/// Maximum eef-to-grasp distance at which the gripper can close on an object.
pub const GRASP_REACH: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("a sweep needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("object has no functional axis")]
    MissingFunctionalAxis,
    #[error("primitive sequence is empty")]
    EmptyScript,
    #[error("gripper-close with no graspable object within {GRASP_REACH} m (nearest {0:.3} m)")]
    NothingToGrasp(f64),
    #[error("primitive {index}: {reason}")]
    BadPrimitive { index: usize, reason: String },
    #[error("failed to read task script: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse task script: {0}")]
    Parse(#[from] toml::de::Error),
}

/// End-effector poses that keep a gripper rigidly attached to the moving link
/// while its joint sweeps linearly from `theta_init` to `theta_goal`.
pub fn vkc_eef_trajectory(
    obj: &ArticulatedObject,
    eef_init: &Pose,
    theta_init: f64,
    theta_goal: f64,
    steps: usize,
) -> Result<Vec<Pose>, SynthesisError> {
    if steps < 2 {
        return Err(SynthesisError::TooFewSteps(steps));
    }
    let link_init_inv = obj.link_pose(theta_init)?.inverse();
    obj.check_value(theta_goal)?;
    let grip_in_link = link_init_inv.compose(eef_init);
    let mut out = Vec::with_capacity(steps);
    out.push(*eef_init);
    for k in 1..steps {
        let theta = if k == steps - 1 {
            theta_goal
        } else {
            theta_init + (theta_goal - theta_init) * k as f64 / (steps - 1) as f64
        };
        out.push(obj.link_pose(theta)?.compose(&grip_in_link));
    }
    Ok(out)
}

fn minimal_rotation(from: &Vector3<f64>, to: &Vector3<f64>) -> UnitQuaternion<f64> {
    if let Some(q) = UnitQuaternion::rotation_between(from, to) {
        return q;
    }
    // Antiparallel: half turn about an axis perpendicular to `from`, horizontal when possible.
    let helper = if from.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let axis = if from.z.abs() < 0.9 { from.cross(&helper) } else { helper.cross(from) };
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), std::f64::consts::PI)
}

/// World pose for `held` that points its functional axis against the
/// target's and puts its axis point `standoff` meters along the target axis.
pub fn align_functional_axes(
    held: &RigidObject,
    held_pose: &Pose,
    target: &RigidObject,
    target_pose: &Pose,
    standoff: f64,
) -> Result<Pose, SynthesisError> {
    let ha = held.functional_axis.ok_or(SynthesisError::MissingFunctionalAxis)?;
    let ta = target.functional_axis.ok_or(SynthesisError::MissingFunctionalAxis)?;
    let held_dir = held_pose.transform_vector(&ha.direction);
    let target_dir = target_pose.transform_vector(&ta.direction);
    let rotation = minimal_rotation(&held_dir, &(-target_dir)) * held_pose.rotation();
    let anchor = target_pose.transform_point(&ta.point) + target_dir * standoff;
    let translation = anchor - rotation * ha.point;
    Ok(Pose::new(rotation, translation))
}

pub fn pregrasp(grasp: &Pose) -> Pose {
    grasp.compose(&Pose::from_translation(Vector3::new(0.0, 0.0, -APPROACH_OFFSET)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gripper {
    Open,
    Close,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Approach,
    Grasp,
    Manipulate,
    Retreat,
}

/// Which joints a planning call may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    #[default]
    WholeBody,
    BaseOnly,
    ArmOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotionTarget {
    /// Stay in place (gripper actions).
    Hold,
    /// Base-only move to a planar pose `(x, y, yaw)`.
    Base([f64; 3]),
    /// Track the listed end-effector poses in order.
    Track(Vec<Pose>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub mode: PlanMode,
    pub target: MotionTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EefWaypoint {
    pub pose: Pose,
    pub gripper: Gripper,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EefWaypointPlan {
    pub waypoints: Vec<EefWaypoint>,
}

impl EefWaypointPlan {
    pub fn phases(&self) -> Vec<Phase> {
        self.waypoints.iter().map(|w| w.phase).collect()
    }
}

/// One expanded primitive: its poses and the planner directive that realizes it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub phase: Phase,
    pub gripper: Gripper,
    pub poses: Vec<Pose>,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub steps: Vec<PlanStep>,
}

impl TaskPlan {
    pub fn waypoint_plan(&self) -> EefWaypointPlan {
        let waypoints = self
            .steps
            .iter()
            .flat_map(|s| s.poses.iter().map(move |&pose| EefWaypoint { pose, gripper: s.gripper, phase: s.phase }))
            .collect();
        EefWaypointPlan { waypoints }
    }

    pub fn phases(&self) -> Vec<Phase> {
        self.steps.iter().map(|s| s.phase).collect()
    }
}

/// Reference to the thing being approached or grasped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraspTarget {
    Handle,
    Object(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "kebab-case")]
pub enum Primitive {
    MoveBase { x: f64, y: f64, yaw: f64 },
    MoveArm { translation: [f64; 3], rotation: [f64; 4] },
    MoveWholeBody { translation: [f64; 3], rotation: [f64; 4] },
    /// Whole-body move to the pre-grasp pose followed by the grasp pose.
    Approach {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<GraspTarget>,
    },
    GripperOpen,
    GripperClose,
    /// Sweep the grasped articulation to `theta_goal`.
    VkcSweep {
        theta_goal: f64,
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// Carry the held object so its functional axis meets object `target`'s.
    Align {
        #[serde(default = "one")]
        target: usize,
        #[serde(default)]
        standoff: f64,
    },
    /// Move the gripper back along its approach axis.
    Retreat {
        #[serde(default = "default_retreat")]
        distance: f64,
    },
}

fn default_steps() -> usize {
    DEFAULT_SWEEP_STEPS
}

fn one() -> usize {
    1
}

fn default_retreat() -> f64 {
    APPROACH_OFFSET
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptFile {
    #[serde(rename = "step")]
    steps: Vec<Primitive>,
}

pub fn parse_script(text: &str) -> Result<Vec<Primitive>, SynthesisError> {
    Ok(toml::from_str::<ScriptFile>(text)?.steps)
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Vec<Primitive>, SynthesisError> {
    parse_script(&std::fs::read_to_string(path)?)
}

pub fn script_to_toml(primitives: &[Primitive]) -> String {
    toml::to_string_pretty(&ScriptFile { steps: primitives.to_vec() }).expect("script serializes")
}

#[derive(Debug, Clone, Copy)]
enum Attachment {
    Handle { theta: f64 },
    Object { index: usize, eef_in_object: Pose },
}

/// Expands a primitive script into planner steps, tracking the symbolic
/// state (eef pose, base pose, what is held) along the way.
pub fn compose_primitives(scene: &SceneState, eef_init: &Pose, primitives: &[Primitive]) -> Result<TaskPlan, SynthesisError> {
    if primitives.is_empty() {
        return Err(SynthesisError::EmptyScript);
    }
    let mut eef = *eef_init;
    let base = scene.robot.base();
    let mut base = Pose::planar(base[0], base[1], base[2]);
    let mut held: Option<Attachment> = None;
    let mut objects = scene.objects.clone();
    let mut grasped_once = false;
    let mut steps = Vec::with_capacity(primitives.len());

    let bad = |index: usize, reason: &str| SynthesisError::BadPrimitive { index, reason: reason.to_string() };

    for (index, prim) in primitives.iter().enumerate() {
        let manip_phase = if held.is_some() { Phase::Manipulate } else if grasped_once { Phase::Retreat } else { Phase::Approach };
        let step = match prim {
            Primitive::MoveBase { x, y, yaw } => {
                let goal = Pose::planar(*x, *y, *yaw);
                eef = goal.compose(&base.inverse()).compose(&eef);
                base = goal;
                PlanStep {
                    phase: manip_phase,
                    gripper: Gripper::Hold,
                    poses: vec![eef],
                    directive: Directive { mode: PlanMode::BaseOnly, target: MotionTarget::Base([*x, *y, *yaw]) },
                }
            }
            Primitive::MoveArm { translation, rotation } | Primitive::MoveWholeBody { translation, rotation } => {
                eef = Pose::from_parts(*rotation, *translation);
                let mode = if matches!(prim, Primitive::MoveArm { .. }) { PlanMode::ArmOnly } else { PlanMode::WholeBody };
                PlanStep { phase: manip_phase, gripper: Gripper::Hold, poses: vec![eef], directive: Directive { mode, target: MotionTarget::Track(vec![eef]) } }
            }
            Primitive::Approach { target } => {
                let target = target.unwrap_or(if scene.articulated.is_some() { GraspTarget::Handle } else { GraspTarget::Object(0) });
                let grasp = match target {
                    GraspTarget::Handle => {
                        let obj = scene.articulated.as_ref().ok_or_else(|| bad(index, "scene has no articulated object"))?;
                        obj.world_grasp(obj.joint_value)?
                    }
                    GraspTarget::Object(i) => objects.get(i).ok_or_else(|| bad(index, "no such object"))?.world_grasp(),
                };
                let poses = vec![pregrasp(&grasp), grasp];
                eef = grasp;
                PlanStep {
                    phase: manip_phase,
                    gripper: Gripper::Hold,
                    poses: poses.clone(),
                    directive: Directive { mode: PlanMode::WholeBody, target: MotionTarget::Track(poses) },
                }
            }
            Primitive::GripperClose => {
                let mut best = (f64::INFINITY, None);
                if let Some(obj) = &scene.articulated {
                    let d = (obj.world_grasp(obj.joint_value)?.translation() - eef.translation()).norm();
                    best = (d, Some(Attachment::Handle { theta: obj.joint_value }));
                }
                for (i, o) in objects.iter().enumerate() {
                    let d = (o.world_grasp().translation() - eef.translation()).norm();
                    if d < best.0 {
                        best = (d, Some(Attachment::Object { index: i, eef_in_object: o.pose.inverse().compose(&eef) }));
                    }
                }
                if best.0 > GRASP_REACH {
                    return Err(SynthesisError::NothingToGrasp(best.0));
                }
                held = best.1;
                grasped_once = true;
                PlanStep { phase: Phase::Grasp, gripper: Gripper::Close, poses: vec![eef], directive: hold() }
            }
            Primitive::GripperOpen => {
                held = None;
                let phase = if grasped_once { Phase::Retreat } else { Phase::Approach };
                PlanStep { phase, gripper: Gripper::Open, poses: vec![eef], directive: hold() }
            }
            Primitive::VkcSweep { theta_goal, steps: n } => {
                let Some(Attachment::Handle { theta }) = held else {
                    return Err(bad(index, "vkc-sweep requires a grasped handle"));
                };
                let obj = scene.articulated.as_ref().ok_or_else(|| bad(index, "scene has no articulated object"))?;
                let poses = vkc_eef_trajectory(obj, &eef, theta, *theta_goal, *n)?;
                eef = *poses.last().expect("sweep is non-empty");
                held = Some(Attachment::Handle { theta: *theta_goal });
                let tracked = poses[1..].to_vec();
                PlanStep {
                    phase: Phase::Manipulate,
                    gripper: Gripper::Hold,
                    poses,
                    directive: Directive { mode: PlanMode::WholeBody, target: MotionTarget::Track(tracked) },
                }
            }
            Primitive::Align { target, standoff } => {
                let Some(Attachment::Object { index: hi, eef_in_object }) = held else {
                    return Err(bad(index, "align requires a held rigid object"));
                };
                let tgt = objects.get(*target).ok_or_else(|| bad(index, "no such target object"))?;
                let goal = align_functional_axes(&objects[hi], &objects[hi].pose, tgt, &tgt.pose, *standoff)?;
                objects[hi].pose = goal;
                eef = goal.compose(&eef_in_object);
                PlanStep {
                    phase: Phase::Manipulate,
                    gripper: Gripper::Hold,
                    poses: vec![eef],
                    directive: Directive { mode: PlanMode::WholeBody, target: MotionTarget::Track(vec![eef]) },
                }
            }
            Primitive::Retreat { distance } => {
                eef = eef.compose(&Pose::from_translation(Vector3::new(0.0, 0.0, -distance)));
                PlanStep {
                    phase: Phase::Retreat,
                    gripper: Gripper::Hold,
                    poses: vec![eef],
                    directive: Directive { mode: PlanMode::ArmOnly, target: MotionTarget::Track(vec![eef]) },
                }
            }
        };
        // Carried rigid objects follow the gripper.
        if let Some(Attachment::Object { index: hi, eef_in_object }) = held {
            objects[hi].pose = eef.compose(&eef_in_object.inverse());
        }
        steps.push(step);
    }
    if let Some(first) = steps.first_mut() {
        first.phase = Phase::Approach;
    }
    Ok(TaskPlan { steps })
}

fn hold() -> Directive {
    Directive { mode: PlanMode::WholeBody, target: MotionTarget::Hold }
}
