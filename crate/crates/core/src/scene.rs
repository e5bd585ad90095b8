//! Articulated and rigid objects, randomized episode resets and success checks.

use crate::rng::{keyed_rng, stream};
use crate::robot::{Configuration, JointDesc, JointKind, JointSpec, PoseDesc, BASE_DOF};
use crate::se3::Pose;
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Default distance threshold for placement checks, meters.
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.02;
/// Default joint-angle threshold for articulation checks, radians.
pub const DEFAULT_ANGLE_THRESHOLD: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("joint value {value} outside limits [{min}, {max}]")]
    OutOfLimits { value: f64, min: f64, max: f64 },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("failed to read scene description: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scene description: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedObject {
    pub base_pose: Pose,
    pub joint: JointSpec,
    /// Pose of the moving link at joint value 0, relative to the joint frame.
    pub link_origin: Pose,
    /// Annotated grasp, relative to the moving link.
    pub handle_grasp: Pose,
    pub joint_value: f64,
}

impl ArticulatedObject {
    pub fn new(base_pose: Pose, joint: JointSpec, link_origin: Pose, handle_grasp: Pose, joint_value: f64) -> Result<Self, SceneError> {
        joint.validate().map_err(SceneError::Invalid)?;
        if !matches!(joint.kind, JointKind::Revolute | JointKind::Prismatic) {
            return Err(SceneError::Invalid("articulated objects need a revolute or prismatic joint".into()));
        }
        let obj = Self { base_pose, joint, link_origin, handle_grasp, joint_value };
        obj.check_value(joint_value)?;
        Ok(obj)
    }

    pub fn check_value(&self, value: f64) -> Result<(), SceneError> {
        let (min, max) = self.joint.limits;
        // A small slack absorbs rounding in interpolated sweeps.
        if value < min - 1e-12 || value > max + 1e-12 || !value.is_finite() {
            return Err(SceneError::OutOfLimits { value, min, max });
        }
        Ok(())
    }

    fn link_pose_unchecked(&self, theta: f64) -> Pose {
        self.base_pose
            .compose(&self.joint.origin)
            .compose(&self.joint.motion(theta))
            .compose(&self.link_origin)
    }

    /// World pose of the moving link at joint value `theta`.
    pub fn link_pose(&self, theta: f64) -> Result<Pose, SceneError> {
        self.check_value(theta)?;
        Ok(self.link_pose_unchecked(theta))
    }

    pub fn world_grasp(&self, theta: f64) -> Result<Pose, SceneError> {
        Ok(self.link_pose(theta)?.compose(&self.handle_grasp))
    }

    pub fn set_joint_value(&mut self, theta: f64) -> Result<(), SceneError> {
        self.check_value(theta)?;
        self.joint_value = theta;
        Ok(())
    }

    /// Joint value that best explains a world point rigidly attached to the
    /// moving link at `point_in_link`, clamped to the joint limits.
    pub fn infer_joint_value(&self, point_in_link: &Vector3<f64>, world_point: &Vector3<f64>) -> f64 {
        let frame = self.base_pose.compose(&self.joint.origin);
        let axis = frame.transform_vector(&self.joint.axis);
        let at_zero = self.link_pose_unchecked(0.0).transform_point(point_in_link);
        let theta = match self.joint.kind {
            JointKind::Prismatic => axis.dot(&(world_point - at_zero)),
            _ => {
                let pivot = frame.translation();
                let r0 = at_zero - pivot;
                let r = world_point - pivot;
                let r0p = r0 - axis * axis.dot(&r0);
                let rp = r - axis * axis.dot(&r);
                axis.dot(&r0p.cross(&rp)).atan2(r0p.dot(&rp))
            }
        };
        self.joint.clamp(theta)
    }

    fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.link_origin = Pose::new(*self.link_origin.rotation(), self.link_origin.translation() * s);
        out.handle_grasp = Pose::new(*self.handle_grasp.rotation(), self.handle_grasp.translation() * s);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalAxis {
    pub point: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl FunctionalAxis {
    pub fn new(point: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, SceneError> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(SceneError::Invalid("functional axis direction must be unit length".into()));
        }
        Ok(Self { point, direction })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidObject {
    pub pose: Pose,
    /// Annotated grasp relative to the object frame.
    pub grasp: Pose,
    pub functional_axis: Option<FunctionalAxis>,
    /// Bounding radius in meters.
    pub extent: f64,
}

impl RigidObject {
    pub fn world_grasp(&self) -> Pose {
        self.pose.compose(&self.grasp)
    }

    /// Functional-axis point in the world, or the object origin when no axis is annotated.
    pub fn reference_point(&self) -> Vector3<f64> {
        match &self.functional_axis {
            Some(ax) => self.pose.transform_point(&ax.point),
            None => *self.pose.translation(),
        }
    }

    fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.grasp = Pose::new(*self.grasp.rotation(), self.grasp.translation() * s);
        if let Some(ax) = &mut out.functional_axis {
            ax.point *= s;
        }
        out.extent *= s;
        out
    }
}

/// Objects present in a task before randomization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneTemplate {
    pub articulated: Option<ArticulatedObject>,
    pub objects: Vec<RigidObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetSpec {
    pub template: SceneTemplate,
    /// Absolute world position ranges `(min, max)` of the randomized object.
    pub position: [(f64, f64); 3],
    /// Yaw range about world z, added to the template orientation.
    pub yaw: (f64, f64),
    pub scale: (f64, f64),
    /// Initial value ranges for the arm joints (base joints always start at zero).
    pub arm: Vec<(f64, f64)>,
    pub seed: u64,
}

impl ResetSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |what: &str| Err(SceneError::Invalid(format!("{what} range has min > max")));
        for (axis, (lo, hi)) in ["x", "y", "z"].iter().zip(self.position) {
            if lo > hi {
                return bad(axis);
            }
        }
        if self.yaw.0 > self.yaw.1 {
            return bad("yaw");
        }
        if self.scale.0 > self.scale.1 {
            return bad("scale");
        }
        if !(self.scale.0 > 0.0) {
            return Err(SceneError::Invalid("scale range must be positive".into()));
        }
        if self.arm.iter().any(|(lo, hi)| lo > hi) {
            return bad("arm joint");
        }
        if self.template.articulated.is_none() && self.template.objects.is_empty() {
            return Err(SceneError::Invalid("scene has no objects".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub seed: u64,
    pub episode: u64,
    pub robot: Configuration,
    pub articulated: Option<ArticulatedObject>,
    pub objects: Vec<RigidObject>,
    /// End-effector pose, filled in by kinematic playback.
    pub eef: Option<Pose>,
    /// Scalar parameters drawn at reset.
    pub params: BTreeMap<String, f64>,
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws the scene of episode `episode_index`. The robot base sits at the
/// world origin with zero yaw. The articulated object (or the first rigid
/// object when there is none) is placed and scaled from the spec's ranges.
pub fn reset_episode(spec: &ResetSpec, episode_index: u64) -> Result<SceneState, SceneError> {
    spec.validate()?;
    let mut rng = keyed_rng(spec.seed, episode_index, stream::RESET);
    let x = draw(&mut rng, spec.position[0]);
    let y = draw(&mut rng, spec.position[1]);
    let z = draw(&mut rng, spec.position[2]);
    let yaw = draw(&mut rng, spec.yaw);
    let scale = draw(&mut rng, spec.scale);
    let arm: Vec<f64> = spec.arm.iter().map(|&r| draw(&mut rng, r)).collect();

    let place = |template: &Pose| {
        Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * template.rotation(),
            Vector3::new(x, y, z),
        )
    };
    let mut articulated = spec.template.articulated.clone();
    let mut objects = spec.template.objects.clone();
    if let Some(obj) = &mut articulated {
        *obj = obj.scaled(scale);
        obj.base_pose = place(&obj.base_pose);
    } else if let Some(first) = objects.first_mut() {
        *first = first.scaled(scale);
        first.pose = place(&first.pose);
    }

    let mut robot = vec![0.0; BASE_DOF];
    robot.extend(arm);
    let params = BTreeMap::from([
        ("object_x".to_string(), x),
        ("object_y".to_string(), y),
        ("object_z".to_string(), z),
        ("object_yaw".to_string(), yaw),
        ("object_scale".to_string(), scale),
    ]);
    Ok(SceneState {
        seed: spec.seed,
        episode: episode_index,
        robot: Configuration(robot),
        articulated,
        objects,
        eef: None,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessKind {
    Distance,
    JointAngle,
}

/// Point of the scene a distance predicate measures from or to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subject {
    /// Reference point (functional axis point or origin) of rigid object `i`.
    Object(usize),
    /// World grasp position of rigid object `i`.
    Grasp(usize),
    Eef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessPredicate {
    pub kind: SuccessKind,
    pub threshold: f64,
    #[serde(default)]
    pub target_joint_value: f64,
    #[serde(default = "default_subjects")]
    pub subjects: (Subject, Subject),
}

fn default_subjects() -> (Subject, Subject) {
    (Subject::Object(0), Subject::Object(1))
}

impl SuccessPredicate {
    pub fn distance(threshold: f64) -> Result<Self, SceneError> {
        Self::build(SuccessKind::Distance, threshold, 0.0, default_subjects())
    }

    pub fn distance_between(threshold: f64, a: Subject, b: Subject) -> Result<Self, SceneError> {
        Self::build(SuccessKind::Distance, threshold, 0.0, (a, b))
    }

    pub fn joint_angle(target: f64, threshold: f64) -> Result<Self, SceneError> {
        Self::build(SuccessKind::JointAngle, threshold, target, default_subjects())
    }

    fn build(kind: SuccessKind, threshold: f64, target_joint_value: f64, subjects: (Subject, Subject)) -> Result<Self, SceneError> {
        if !(threshold > 0.0) {
            return Err(SceneError::Invalid("success threshold must be positive".into()));
        }
        Ok(Self { kind, threshold, target_joint_value, subjects })
    }
}

fn subject_point(state: &SceneState, s: Subject) -> Option<Vector3<f64>> {
    match s {
        Subject::Object(i) => state.objects.get(i).map(RigidObject::reference_point),
        Subject::Grasp(i) => state.objects.get(i).map(|o| *o.world_grasp().translation()),
        Subject::Eef => state.eef.map(|p| *p.translation()),
    }
}

/// Residual of the predicate: distance in meters or joint error, `None` when
/// the scene lacks what the predicate refers to.
pub fn success_residual(state: &SceneState, pred: &SuccessPredicate) -> Option<f64> {
    match pred.kind {
        SuccessKind::Distance => {
            let a = subject_point(state, pred.subjects.0)?;
            let b = subject_point(state, pred.subjects.1)?;
            Some((a - b).norm())
        }
        SuccessKind::JointAngle => {
            let obj = state.articulated.as_ref()?;
            Some((obj.joint_value - pred.target_joint_value).abs())
        }
    }
}

pub fn check_success(state: &SceneState, pred: &SuccessPredicate) -> bool {
    success_residual(state, pred).is_some_and(|r| r < pred.threshold)
}

// ---------------------------------------------------------------------------
// Text description
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArticulatedDesc {
    #[serde(default)]
    base_pose: PoseDesc,
    joint: JointDesc,
    #[serde(default)]
    link_origin: PoseDesc,
    #[serde(default)]
    handle_grasp: PoseDesc,
    #[serde(default)]
    joint_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AxisDesc {
    point: [f64; 3],
    direction: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RigidDesc {
    #[serde(default)]
    pose: PoseDesc,
    #[serde(default)]
    grasp: PoseDesc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    functional_axis: Option<AxisDesc>,
    extent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RangesDesc {
    x: [f64; 2],
    y: [f64; 2],
    z: [f64; 2],
    yaw: [f64; 2],
    scale: [f64; 2],
    #[serde(default)]
    arm: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneDescription {
    #[serde(default)]
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    articulated: Option<ArticulatedDesc>,
    #[serde(rename = "object", default)]
    objects: Vec<RigidDesc>,
    randomization: RangesDesc,
    #[serde(skip_serializing_if = "Option::is_none")]
    success: Option<SuccessPredicate>,
}

/// A scene file: the reset spec plus an optional success predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub reset: ResetSpec,
    pub success: Option<SuccessPredicate>,
}

impl SceneFile {
    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let d: SceneDescription = toml::from_str(text)?;
        let articulated = match &d.articulated {
            Some(a) => Some(ArticulatedObject::new(
                Pose::from(&a.base_pose),
                JointSpec::from(&a.joint),
                Pose::from(&a.link_origin),
                Pose::from(&a.handle_grasp),
                a.joint_value,
            )?),
            None => None,
        };
        let mut objects = Vec::new();
        for o in &d.objects {
            let functional_axis = match &o.functional_axis {
                Some(ax) => Some(FunctionalAxis::new(Vector3::from(ax.point), Vector3::from(ax.direction))?),
                None => None,
            };
            objects.push(RigidObject { pose: Pose::from(&o.pose), grasp: Pose::from(&o.grasp), functional_axis, extent: o.extent });
        }
        let r = &d.randomization;
        let pair = |a: [f64; 2]| (a[0], a[1]);
        let reset = ResetSpec {
            template: SceneTemplate { articulated, objects },
            position: [pair(r.x), pair(r.y), pair(r.z)],
            yaw: pair(r.yaw),
            scale: pair(r.scale),
            arm: r.arm.iter().copied().map(pair).collect(),
            seed: d.seed,
        };
        reset.validate()?;
        if let Some(p) = &d.success {
            SuccessPredicate::build(p.kind, p.threshold, p.target_joint_value, p.subjects)?;
        }
        Ok(Self { reset, success: d.success })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let t = &self.reset.template;
        let d = SceneDescription {
            seed: self.reset.seed,
            articulated: t.articulated.as_ref().map(|a| ArticulatedDesc {
                base_pose: PoseDesc::from(&a.base_pose),
                joint: JointDesc::from(&a.joint),
                link_origin: PoseDesc::from(&a.link_origin),
                handle_grasp: PoseDesc::from(&a.handle_grasp),
                joint_value: a.joint_value,
            }),
            objects: t
                .objects
                .iter()
                .map(|o| RigidDesc {
                    pose: PoseDesc::from(&o.pose),
                    grasp: PoseDesc::from(&o.grasp),
                    functional_axis: o.functional_axis.map(|ax| AxisDesc {
                        point: ax.point.into(),
                        direction: ax.direction.into(),
                    }),
                    extent: o.extent,
                })
                .collect(),
            randomization: RangesDesc {
                x: self.reset.position[0].into(),
                y: self.reset.position[1].into(),
                z: self.reset.position[2].into(),
                yaw: self.reset.yaw.into(),
                scale: self.reset.scale.into(),
                arm: self.reset.arm.iter().map(|&r| r.into()).collect(),
            },
            success: self.success.clone(),
        };
        toml::to_string_pretty(&d).expect("scene description serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::pose_error;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn drawer() -> ArticulatedObject {
        ArticulatedObject::new(
            Pose::planar(1.0, 0.5, 0.3),
            JointSpec::prismatic(Vector3::x(), Pose::identity(), (0.0, 0.4)),
            Pose::from_translation(Vector3::new(-0.2, 0.0, 0.6)),
            Pose::from_axis_angle(&Vector3::y(), FRAC_PI_2),
            0.0,
        )
        .unwrap()
    }

    fn door() -> ArticulatedObject {
        ArticulatedObject::new(
            Pose::identity(),
            JointSpec::revolute(Vector3::z(), Pose::identity(), (-2.0, 2.0)),
            Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)),
            Pose::identity(),
            0.0,
        )
        .unwrap()
    }

    fn spec(seed: u64) -> ResetSpec {
        ResetSpec {
            template: SceneTemplate { articulated: Some(drawer()), objects: vec![] },
            position: [(1.0, 2.0), (-0.5, 0.5), (0.0, 0.0)],
            yaw: (-0.2, 0.2),
            scale: (0.9, 1.1),
            arm: vec![(-0.1, 0.1); 4],
            seed,
        }
    }

    #[test]
    fn link_pose_at_zero() {
        let d = drawer();
        let p = d.link_pose(0.0).unwrap();
        let (dp, dr) = pose_error(&p, &d.base_pose.compose(&d.link_origin));
        assert!(dp < 1e-15 && dr < 1e-15);
    }

    #[test]
    fn prismatic_link_translates_along_base_x() {
        let d = drawer();
        let p0 = d.link_pose(0.0).unwrap();
        let p1 = d.link_pose(0.3).unwrap();
        let expected = d.base_pose.transform_vector(&Vector3::new(0.3, 0.0, 0.0));
        assert!((p1.translation() - p0.translation() - expected).norm() < 1e-12);
    }

    #[test]
    fn revolute_link_rotates() {
        let d = door();
        let p = d.link_pose(FRAC_PI_2).unwrap();
        assert!((p.translation() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn out_of_limits_rejected() {
        assert!(matches!(drawer().link_pose(0.5), Err(SceneError::OutOfLimits { .. })));
    }

    #[test]
    fn infer_joint_value_recovers_theta() {
        for obj in [drawer(), door()] {
            let point = Vector3::new(0.05, -0.02, 0.1);
            for &theta in &[0.0, 0.1, 0.25, 0.35] {
                let world = obj.link_pose(theta).unwrap().transform_point(&point);
                assert!((obj.infer_joint_value(&point, &world) - theta).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn grasp_is_rigidly_attached(theta in 0.0f64..0.4) {
            let d = drawer();
            let rel = d.link_pose(theta).unwrap().inverse().compose(&d.world_grasp(theta).unwrap());
            let (dp, dr) = pose_error(&rel, &d.handle_grasp);
            prop_assert!(dp < 1e-9 && dr < 1e-9);
        }
    }

    #[test]
    fn degenerate_ranges_give_single_scene() {
        let mut s = spec(3);
        s.position = [(1.5, 1.5), (0.2, 0.2), (0.0, 0.0)];
        s.yaw = (0.1, 0.1);
        s.scale = (1.0, 1.0);
        s.arm = vec![(0.3, 0.3); 4];
        let a = reset_episode(&s, 0).unwrap();
        let b = reset_episode(&s, 17).unwrap();
        assert_eq!(a.robot, b.robot);
        assert_eq!(a.articulated, b.articulated);
        let obj = a.articulated.unwrap();
        assert!((obj.base_pose.translation() - Vector3::new(1.5, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(a.robot.0, vec![0.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.3]);
    }

    #[test]
    fn reset_is_deterministic_and_order_independent() {
        let s = spec(99);
        let a = reset_episode(&s, 5).unwrap();
        for i in 0..5 {
            reset_episode(&s, i).unwrap();
        }
        let b = reset_episode(&s, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, reset_episode(&s, 6).unwrap());
    }

    #[test]
    fn reset_x_is_uniform() {
        let s = spec(1234);
        let n = 10_000;
        let mean: f64 = (0..n).map(|i| reset_episode(&s, i).unwrap().params["object_x"]).sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() < 0.015, "mean {mean}");
    }

    #[test]
    fn reset_scales_geometry() {
        let mut s = spec(5);
        s.scale = (2.0, 2.0);
        let st = reset_episode(&s, 0).unwrap();
        let obj = st.articulated.unwrap();
        assert!((obj.link_origin.translation() - Vector3::new(-0.4, 0.0, 1.2)).norm() < 1e-12);
        assert_eq!(obj.joint.limits, (0.0, 0.4));
    }

    #[test]
    fn invalid_reset_spec() {
        let mut s = spec(0);
        s.scale = (0.0, 1.0);
        assert!(reset_episode(&s, 0).is_err());
        let mut s = spec(0);
        s.position[1] = (1.0, -1.0);
        assert!(reset_episode(&s, 0).is_err());
    }

    fn two_objects(a: Vector3<f64>, b: Vector3<f64>) -> SceneState {
        let obj = |p| RigidObject { pose: Pose::from_translation(p), grasp: Pose::identity(), functional_axis: None, extent: 0.05 };
        SceneState {
            seed: 0,
            episode: 0,
            robot: Configuration::zeros(7),
            articulated: Some(drawer()),
            objects: vec![obj(a), obj(b)],
            eef: None,
            params: BTreeMap::new(),
        }
    }

    #[test]
    fn distance_predicate() {
        let pred = SuccessPredicate::distance(0.02).unwrap();
        let p = Vector3::new(0.3, 0.2, 0.1);
        assert!(check_success(&two_objects(p, p), &pred));
        assert!(!check_success(&two_objects(p, p + Vector3::new(0.03, 0.0, 0.0)), &pred));
    }

    #[test]
    fn eef_predicate_needs_eef() {
        let pred = SuccessPredicate::distance_between(0.02, Subject::Eef, Subject::Grasp(0)).unwrap();
        let mut st = two_objects(Vector3::zeros(), Vector3::zeros());
        assert!(!check_success(&st, &pred));
        st.eef = Some(Pose::from_translation(Vector3::new(0.01, 0.0, 0.0)));
        assert!(check_success(&st, &pred));
    }

    #[test]
    fn joint_angle_predicate() {
        let mut st = two_objects(Vector3::zeros(), Vector3::zeros());
        st.articulated.as_mut().unwrap().joint_value = 0.29;
        assert!(check_success(&st, &SuccessPredicate::joint_angle(0.30, 0.02).unwrap()));
        st.articulated.as_mut().unwrap().joint_value = 0.0;
        assert!(!check_success(&st, &SuccessPredicate::joint_angle(0.5, 0.02).unwrap()));
        assert!(SuccessPredicate::joint_angle(0.5, 0.0).is_err());
    }

    #[test]
    fn scene_file_round_trip() {
        let file = SceneFile { reset: spec(42), success: Some(SuccessPredicate::joint_angle(0.3, 0.05).unwrap()) };
        let text = file.to_toml_string();
        let back = SceneFile::from_toml_str(&text).unwrap();
        assert_eq!(back.success, file.success);
        assert_eq!(back.reset.position, file.reset.position);
        assert_eq!(reset_episode(&back.reset, 3).unwrap().robot, reset_episode(&file.reset, 3).unwrap().robot);
    }
}
