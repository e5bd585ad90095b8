//! Kinematic model of a mobile manipulator.
//!
//! The mobile base is three virtual joints (x, y, yaw) at the head of the
//! chain, so base and arm live in one configuration vector and whole-body
//! planning is an ordinary joint-space problem.

use crate::se3::{pose_error, rotation_error_vector, Pose};
use nalgebra::{Matrix3xX, Matrix6, Matrix6xX, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};
use std::path::Path;

/// Damping used by [`RobotModel::ik_damped_least_squares`].
pub const DLS_DAMPING: f64 = 0.05;

/// Number of virtual base joints at the head of every chain.
pub const BASE_DOF: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum RobotError {
    #[error("configuration has {got} values, model has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("failed to read robot description: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse robot description: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum IkError {
    /// Iteration budget exhausted; the residual errors of the best iterate are reported.
    NotConverged { pos_err: f64, rot_err: f64 },
    BadTolerance,
}

impl std::fmt::Display for IkError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IkError::NotConverged { pos_err, rot_err } => {
                write!(f, "ik did not converge (pos {pos_err:.3e} m, rot {rot_err:.3e} rad)")
            }
            IkError::BadTolerance => write!(f, "ik tolerance must be positive"),
        }
    }
}

impl std::error::Error for IkError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    Revolute,
    Prismatic,
    PlanarX,
    PlanarY,
    PlanarYaw,
}

impl JointKind {
    pub fn is_rotational(self) -> bool {
        matches!(self, JointKind::Revolute | JointKind::PlanarYaw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    /// Pose of the joint frame relative to the parent link.
    pub origin: Pose,
    pub limits: (f64, f64),
    pub v_max: f64,
    pub a_max: f64,
}

impl JointSpec {
    pub fn new(kind: JointKind, axis: Vector3<f64>, origin: Pose, limits: (f64, f64), v_max: f64, a_max: f64) -> Self {
        Self { kind, axis, origin, limits, v_max, a_max }
    }

    pub fn revolute(axis: Vector3<f64>, origin: Pose, limits: (f64, f64)) -> Self {
        Self::new(JointKind::Revolute, axis, origin, limits, 1.5, 3.0)
    }

    pub fn prismatic(axis: Vector3<f64>, origin: Pose, limits: (f64, f64)) -> Self {
        Self::new(JointKind::Prismatic, axis, origin, limits, 0.5, 1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.limits;
        if !(lo < hi) {
            return Err(format!("joint limits must satisfy min < max, got ({lo}, {hi})"));
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0) {
            return Err("v_max and a_max must be positive".into());
        }
        if (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(format!("joint axis must be unit length, got norm {}", self.axis.norm()));
        }
        Ok(())
    }

    /// Motion of the joint at value `q`, expressed in the joint frame.
    pub fn motion(&self, q: f64) -> Pose {
        if self.kind.is_rotational() {
            Pose::from_axis_angle(&self.axis, q)
        } else {
            Pose::from_translation(self.axis * q)
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limits.0, self.limits.1)
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.limits.0 && q <= self.limits.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSphere {
    /// Index of the joint whose child link carries the sphere.
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn base(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn arm(&self) -> &[f64] {
        &self.0[BASE_DOF..]
    }
}

impl Deref for Configuration {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Configuration {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// World-frame quantities of every joint for one configuration.
#[derive(Debug, Clone)]
pub struct ChainState {
    /// Pose of each link (the frame after joint `i` has moved).
    pub links: Vec<Pose>,
    pub axes: Vec<Vector3<f64>>,
    pub pivots: Vec<Vector3<f64>>,
    pub eef: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    joints: Vec<JointSpec>,
    eef_offset: Pose,
    collision_spheres: Vec<CollisionSphere>,
}

impl RobotModel {
    pub fn new(joints: Vec<JointSpec>, eef_offset: Pose, collision_spheres: Vec<CollisionSphere>) -> Result<Self, RobotError> {
        let invalid = |m: String| Err(RobotError::InvalidModel(m));
        if joints.len() < BASE_DOF {
            return invalid(format!("need at least {BASE_DOF} base joints, got {}", joints.len()));
        }
        let base_kinds = [JointKind::PlanarX, JointKind::PlanarY, JointKind::PlanarYaw];
        let base_axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        for (i, j) in joints.iter().enumerate() {
            j.validate().map_err(|m| RobotError::InvalidModel(format!("joint {i}: {m}")))?;
            if i < BASE_DOF {
                if j.kind != base_kinds[i] {
                    return invalid(format!("joint {i} must be {:?}, got {:?}", base_kinds[i], j.kind));
                }
                if (j.axis - base_axes[i]).norm() > 1e-9 || pose_error(&j.origin, &Pose::identity()) != (0.0, 0.0) {
                    return invalid(format!("base joint {i} must use the canonical axis and an identity origin"));
                }
            } else if !matches!(j.kind, JointKind::Revolute | JointKind::Prismatic) {
                return invalid(format!("joint {i}: planar joints are only allowed in the base"));
            }
        }
        for (k, s) in collision_spheres.iter().enumerate() {
            if s.link >= joints.len() {
                return invalid(format!("collision sphere {k} references link {} of {}", s.link, joints.len()));
            }
            if !(s.radius > 0.0) {
                return invalid(format!("collision sphere {k} has non-positive radius"));
            }
        }
        Ok(Self { joints, eef_offset, collision_spheres })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RobotError> {
        let desc: RobotDescription = toml::from_str(text)?;
        desc.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RobotError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&RobotDescription::from_model(self)).expect("robot description serializes")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn eef_offset(&self) -> &Pose {
        &self.eef_offset
    }

    pub fn collision_spheres(&self) -> &[CollisionSphere] {
        &self.collision_spheres
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limits.0).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limits.1).collect()
    }

    pub fn v_max(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.v_max).collect()
    }

    pub fn a_max(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.a_max).collect()
    }

    fn check_dim(&self, q: &[f64]) -> Result<(), RobotError> {
        if q.len() != self.dof() {
            return Err(RobotError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof() && self.joints.iter().zip(q).all(|(j, &v)| j.contains(v))
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            *v = j.clamp(*v);
        }
    }

    pub fn chain_state(&self, q: &[f64]) -> Result<ChainState, RobotError> {
        self.check_dim(q)?;
        let n = self.dof();
        let mut links = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut pivots = Vec::with_capacity(n);
        let mut frame = Pose::identity();
        for (joint, &value) in self.joints.iter().zip(q) {
            let joint_frame = frame.compose(&joint.origin);
            axes.push(joint_frame.transform_vector(&joint.axis));
            pivots.push(*joint_frame.translation());
            frame = joint_frame.compose(&joint.motion(value));
            links.push(frame);
        }
        let eef = frame.compose(&self.eef_offset);
        Ok(ChainState { links, axes, pivots, eef })
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose, RobotError> {
        Ok(self.chain_state(q)?.eef)
    }

    /// Geometric Jacobian in the world frame. Rows 0..3 are linear velocity,
    /// rows 3..6 angular velocity of the end-effector frame.
    pub fn jacobian(&self, q: &[f64]) -> Result<Matrix6xX<f64>, RobotError> {
        let state = self.chain_state(q)?;
        Ok(self.jacobian_from_state(&state))
    }

    pub fn jacobian_from_state(&self, state: &ChainState) -> Matrix6xX<f64> {
        let p = state.eef.translation();
        let mut jac = Matrix6xX::zeros(self.dof());
        for (i, joint) in self.joints.iter().enumerate() {
            let a = state.axes[i];
            let col = if joint.kind.is_rotational() {
                let v = a.cross(&(p - state.pivots[i]));
                Vector6::new(v.x, v.y, v.z, a.x, a.y, a.z)
            } else {
                Vector6::new(a.x, a.y, a.z, 0.0, 0.0, 0.0)
            };
            jac.set_column(i, &col);
        }
        jac
    }

    /// World position of a point rigidly attached to `link`.
    pub fn link_point(&self, state: &ChainState, link: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        state.links[link].transform_point(offset)
    }

    /// Linear-velocity Jacobian of a world point attached to `link`.
    pub fn point_jacobian(&self, state: &ChainState, link: usize, point: &Vector3<f64>) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(self.dof());
        for (i, joint) in self.joints.iter().enumerate().take(link + 1) {
            let a = state.axes[i];
            let col = if joint.kind.is_rotational() { a.cross(&(point - state.pivots[i])) } else { a };
            jac.set_column(i, &col);
        }
        jac
    }

    /// World centers and radii of all collision spheres.
    pub fn sphere_centers(&self, state: &ChainState) -> Vec<(Vector3<f64>, f64)> {
        self.collision_spheres
            .iter()
            .map(|s| (self.link_point(state, s.link, &s.center), s.radius))
            .collect()
    }

    pub fn ik_damped_least_squares(
        &self,
        target: &Pose,
        seed: &[f64],
        max_iters: usize,
        tol: f64,
    ) -> Result<Configuration, IkError> {
        let free = vec![true; self.dof()];
        self.ik_damped_least_squares_masked(target, seed, max_iters, tol, &free)
    }

    /// Damped least-squares IK where only joints with `free[i] == true` move.
    pub fn ik_damped_least_squares_masked(
        &self,
        target: &Pose,
        seed: &[f64],
        max_iters: usize,
        tol: f64,
        free: &[bool],
    ) -> Result<Configuration, IkError> {
        if !(tol > 0.0) {
            return Err(IkError::BadTolerance);
        }
        let mut q = seed.to_vec();
        self.clamp(&mut q);
        let lambda2 = DLS_DAMPING * DLS_DAMPING;
        let mut last = (f64::INFINITY, f64::INFINITY);
        for _ in 0..=max_iters {
            let state = match self.chain_state(&q) {
                Ok(s) => s,
                Err(_) => return Err(IkError::NotConverged { pos_err: f64::INFINITY, rot_err: f64::INFINITY }),
            };
            let (pos_err, rot_err) = pose_error(&state.eef, target);
            last = (pos_err, rot_err);
            if pos_err <= tol && rot_err <= tol {
                return Ok(Configuration(q));
            }
            let dp = target.translation() - state.eef.translation();
            let dr = state.eef.rotation() * rotation_error_vector(state.eef.rotation(), target.rotation());
            let err = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);
            let mut jac = self.jacobian_from_state(&state);
            for (i, &f) in free.iter().enumerate() {
                if !f {
                    jac.column_mut(i).fill(0.0);
                }
            }
            let jjt: Matrix6<f64> = &jac * jac.transpose() + Matrix6::identity() * lambda2;
            let Some(chol) = jjt.cholesky() else { break };
            let mut dq = jac.transpose() * chol.solve(&err);
            let step = dq.norm();
            if step > 0.5 {
                dq *= 0.5 / step;
            }
            for (v, d) in q.iter_mut().zip(dq.iter()) {
                *v += d;
            }
            self.clamp(&mut q);
        }
        Err(IkError::NotConverged { pos_err: last.0, rot_err: last.1 })
    }

    /// A mobile base with a four-joint arm (shoulder yaw, shoulder pitch,
    /// elbow pitch, wrist pitch). The gripper's approach axis (+z) points
    /// along the forearm.
    pub fn toy_mobile_manipulator() -> Self {
        let mut joints = base_joints();
        let y = Vector3::y();
        joints.push(JointSpec::new(JointKind::Revolute, Vector3::z(), Pose::from_translation(Vector3::new(0.1, 0.0, 0.4)), (-2.8, 2.8), 1.5, 3.0));
        joints.push(JointSpec::new(JointKind::Revolute, y, Pose::from_translation(Vector3::new(0.0, 0.0, 0.1)), (-1.6, 1.6), 1.5, 3.0));
        joints.push(JointSpec::new(JointKind::Revolute, y, Pose::from_translation(Vector3::new(0.35, 0.0, 0.0)), (-2.5, 2.5), 1.5, 3.0));
        joints.push(JointSpec::new(JointKind::Revolute, y, Pose::from_translation(Vector3::new(0.3, 0.0, 0.0)), (-2.0, 2.0), 2.0, 4.0));
        let eef = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::new(0.1, 0.0, 0.0),
        );
        let spheres = vec![
            CollisionSphere { link: 2, center: Vector3::new(0.0, 0.0, 0.2), radius: 0.3 },
            CollisionSphere { link: 5, center: Vector3::new(0.15, 0.0, 0.0), radius: 0.06 },
        ];
        Self::new(joints, eef, spheres).expect("built-in model is valid")
    }

    /// A mobile base with a three-joint arm (yaw, pitch, pitch).
    pub fn planar_base_arm3() -> Self {
        let mut joints = base_joints();
        let y = Vector3::y();
        joints.push(JointSpec::new(JointKind::Revolute, Vector3::z(), Pose::from_translation(Vector3::new(0.1, 0.0, 0.5)), (-2.8, 2.8), 1.5, 3.0));
        joints.push(JointSpec::new(JointKind::Revolute, y, Pose::identity(), (-1.6, 1.6), 1.5, 3.0));
        joints.push(JointSpec::new(JointKind::Revolute, y, Pose::from_translation(Vector3::new(0.4, 0.0, 0.0)), (-2.5, 2.5), 1.5, 3.0));
        let eef = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::new(0.4, 0.0, 0.0),
        );
        let spheres = vec![CollisionSphere { link: 2, center: Vector3::new(0.0, 0.0, 0.2), radius: 0.3 }];
        Self::new(joints, eef, spheres).expect("built-in model is valid")
    }
}

fn base_joints() -> Vec<JointSpec> {
    use std::f64::consts::PI;
    vec![
        JointSpec::new(JointKind::PlanarX, Vector3::x(), Pose::identity(), (-5.0, 5.0), 0.6, 1.0),
        JointSpec::new(JointKind::PlanarY, Vector3::y(), Pose::identity(), (-5.0, 5.0), 0.6, 1.0),
        JointSpec::new(JointKind::PlanarYaw, Vector3::z(), Pose::identity(), (-PI, PI), 1.0, 2.0),
    ]
}

// ---------------------------------------------------------------------------
// Text description
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseDesc {
    #[serde(default = "zero3")]
    pub translation: [f64; 3],
    /// Quaternion `(w, x, y, z)`.
    #[serde(default = "unit_quat")]
    pub rotation: [f64; 4],
}

fn zero3() -> [f64; 3] {
    [0.0; 3]
}

fn unit_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseDesc {
    fn default() -> Self {
        Self { translation: zero3(), rotation: unit_quat() }
    }
}

impl From<&Pose> for PoseDesc {
    fn from(p: &Pose) -> Self {
        let t = p.translation();
        Self { translation: [t.x, t.y, t.z], rotation: p.wxyz() }
    }
}

impl From<&PoseDesc> for Pose {
    fn from(d: &PoseDesc) -> Self {
        Pose::from_parts(d.rotation, d.translation)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct JointDesc {
    kind: JointKind,
    axis: [f64; 3],
    #[serde(default)]
    origin: PoseDesc,
    limits: [f64; 2],
    #[serde(default = "unit_rate")]
    v_max: f64,
    #[serde(default = "unit_rate")]
    a_max: f64,
}

fn unit_rate() -> f64 {
    1.0
}

impl From<&JointDesc> for JointSpec {
    fn from(j: &JointDesc) -> Self {
        JointSpec {
            kind: j.kind,
            axis: Vector3::from(j.axis),
            origin: Pose::from(&j.origin),
            limits: (j.limits[0], j.limits[1]),
            v_max: j.v_max,
            a_max: j.a_max,
        }
    }
}

impl From<&JointSpec> for JointDesc {
    fn from(j: &JointSpec) -> Self {
        JointDesc {
            kind: j.kind,
            axis: [j.axis.x, j.axis.y, j.axis.z],
            origin: PoseDesc::from(&j.origin),
            limits: [j.limits.0, j.limits.1],
            v_max: j.v_max,
            a_max: j.a_max,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SphereDesc {
    link: usize,
    center: [f64; 3],
    radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RobotDescription {
    #[serde(default)]
    eef_offset: PoseDesc,
    #[serde(rename = "joint")]
    joints: Vec<JointDesc>,
    #[serde(rename = "collision_sphere", default)]
    spheres: Vec<SphereDesc>,
}

impl RobotDescription {
    fn into_model(self) -> Result<RobotModel, RobotError> {
        let joints = self.joints.iter().map(JointSpec::from).collect();
        let spheres = self
            .spheres
            .iter()
            .map(|s| CollisionSphere { link: s.link, center: Vector3::from(s.center), radius: s.radius })
            .collect();
        RobotModel::new(joints, Pose::from(&self.eef_offset), spheres)
    }

    fn from_model(m: &RobotModel) -> Self {
        Self {
            eef_offset: PoseDesc::from(&m.eef_offset),
            joints: m.joints.iter().map(JointDesc::from).collect(),
            spheres: m
                .collision_spheres
                .iter()
                .map(|s| SphereDesc { link: s.link, center: [s.center.x, s.center.y, s.center.z], radius: s.radius })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar_arm(lengths: [f64; 3]) -> RobotModel {
        let mut joints = base_joints();
        let mut offset = 0.0;
        for l in lengths {
            joints.push(JointSpec::revolute(Vector3::z(), Pose::from_translation(Vector3::new(offset, 0.0, 0.0)), (-3.0, 3.0)));
            offset = l;
        }
        RobotModel::new(joints, Pose::from_translation(Vector3::new(lengths[2], 0.0, 0.0)), vec![]).unwrap()
    }

    fn random_config(model: &RobotModel, rng: &mut impl Rng) -> Vec<f64> {
        model.joints().iter().map(|j| rng.gen_range(j.limits.0.max(-2.0)..j.limits.1.min(2.0))).collect()
    }

    #[test]
    fn zero_config_with_identity_origins_gives_eef_offset() {
        let mut joints = base_joints();
        joints.push(JointSpec::revolute(Vector3::z(), Pose::identity(), (-1.0, 1.0)));
        let eef = Pose::from_parts([0.9, 0.0, 0.3, 0.1], [0.2, 0.1, 0.4]);
        let m = RobotModel::new(joints, eef, vec![]).unwrap();
        let p = m.forward_kinematics(&[0.0; 4]).unwrap();
        assert_eq!(pose_error(&p, &eef), (0.0, 0.0));
    }

    #[test]
    fn base_translation_shifts_eef() {
        let m = RobotModel::toy_mobile_manipulator();
        let mut q = vec![0.0; m.dof()];
        let p0 = m.forward_kinematics(&q).unwrap();
        q[0] = 1.0;
        q[1] = 2.0;
        let p1 = m.forward_kinematics(&q).unwrap();
        let d = p1.translation() - p0.translation();
        assert!((d - Vector3::new(1.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn planar_arm_matches_trigonometry() {
        let lengths = [0.5, 0.4, 0.3];
        let m = planar_arm(lengths);
        let angles = [30f64.to_radians(), 45f64.to_radians(), -15f64.to_radians()];
        let q = [0.0, 0.0, 0.0, angles[0], angles[1], angles[2]];
        let p = m.forward_kinematics(&q).unwrap();
        let mut cum = 0.0;
        let (mut x, mut y) = (0.0, 0.0);
        for (l, a) in lengths.iter().zip(angles) {
            cum += a;
            x += l * cum.cos();
            y += l * cum.sin();
        }
        assert!((p.translation() - Vector3::new(x, y, 0.0)).norm() < 1e-12);
        assert!((p.yaw() - cum).abs() < 1e-12);
    }

    #[test]
    fn revolute_jacobian_speed_is_radius() {
        let mut joints = base_joints();
        joints.push(JointSpec::revolute(Vector3::z(), Pose::identity(), (-3.0, 3.0)));
        let m = RobotModel::new(joints, Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)), vec![]).unwrap();
        let j = m.jacobian(&[0.0, 0.0, 0.0, 0.7]).unwrap();
        let lin = j.fixed_view::<3, 1>(0, 3).norm();
        assert!((lin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prismatic_jacobian_is_axis() {
        let mut joints = base_joints();
        let axis = Vector3::new(0.0, 0.6, 0.8);
        joints.push(JointSpec::prismatic(axis, Pose::from_translation(Vector3::new(0.3, 0.0, 0.0)), (0.0, 1.0)));
        let m = RobotModel::new(joints, Pose::identity(), vec![]).unwrap();
        let j = m.jacobian(&[0.0, 0.0, 0.0, 0.2]).unwrap();
        let col = j.column(3);
        assert!((col.fixed_rows::<3>(0) - axis).norm() < 1e-12);
        assert_eq!(col.fixed_rows::<3>(3).norm(), 0.0);
    }

    fn fd_jacobian(m: &RobotModel, q: &[f64], h: f64) -> Matrix6xX<f64> {
        let mut jac = Matrix6xX::zeros(m.dof());
        for i in 0..m.dof() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let pp = m.forward_kinematics(&qp).unwrap();
            let pm = m.forward_kinematics(&qm).unwrap();
            let v = (pp.translation() - pm.translation()) / (2.0 * h);
            // World-frame angular velocity: Log(R+ R-ᵀ) / 2h.
            let rel = pp.rotation() * pm.rotation().inverse();
            let w = rel.scaled_axis() / (2.0 * h);
            jac.set_column(i, &Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z));
        }
        jac
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = keyed_rng(11, 0, 0);
        for m in [RobotModel::toy_mobile_manipulator(), RobotModel::planar_base_arm3(), planar_arm([0.3, 0.2, 0.1])] {
            for _ in 0..50 {
                let q = random_config(&m, &mut rng);
                let a = m.jacobian(&q).unwrap();
                let f = fd_jacobian(&m, &q, 1e-6);
                let rel = (&a - &f).abs().max() / f.abs().max();
                assert!(rel < 1e-5, "relative error {rel}");
            }
        }
    }

    #[test]
    fn base_arm_decomposition() {
        let m = RobotModel::toy_mobile_manipulator();
        let mut rng = keyed_rng(12, 0, 0);
        for _ in 0..100 {
            let q = random_config(&m, &mut rng);
            let mut arm_only = q.clone();
            arm_only[..3].fill(0.0);
            let lhs = m.forward_kinematics(&q).unwrap();
            let rhs = Pose::planar(q[0], q[1], q[2]).compose(&m.forward_kinematics(&arm_only).unwrap());
            let (dp, dr) = pose_error(&lhs, &rhs);
            assert!(dp < 1e-12 && dr < 1e-12);
        }
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let m = RobotModel::toy_mobile_manipulator();
        let q = [0.3, -0.2, 0.4, 0.5, -0.3, 0.8, 0.2];
        let s = m.collision_spheres()[1];
        let state = m.chain_state(&q).unwrap();
        let p = m.link_point(&state, s.link, &s.center);
        let jac = m.point_jacobian(&state, s.link, &p);
        for i in 0..m.dof() {
            let h = 1e-6;
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let pp = m.link_point(&m.chain_state(&qp).unwrap(), s.link, &s.center);
            let pm = m.link_point(&m.chain_state(&qm).unwrap(), s.link, &s.center);
            let fd = (pp - pm) / (2.0 * h);
            assert!((jac.column(i) - fd).norm() < 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = RobotModel::toy_mobile_manipulator();
        assert!(matches!(m.forward_kinematics(&[0.0; 3]), Err(RobotError::DimensionMismatch { expected: 7, got: 3 })));
        assert!(m.jacobian(&[0.0; 8]).is_err());
    }

    #[test]
    fn ik_returns_seed_when_already_there() {
        let m = RobotModel::toy_mobile_manipulator();
        let seed = vec![0.1, 0.2, 0.1, 0.3, -0.2, 0.5, 0.1];
        let target = m.forward_kinematics(&seed).unwrap();
        let q = m.ik_damped_least_squares(&target, &seed, 100, 1e-4).unwrap();
        assert_eq!(q.0, seed);
    }

    #[test]
    fn ik_reaches_nearby_target() {
        let m = RobotModel::toy_mobile_manipulator();
        let seed = vec![0.0, 0.0, 0.0, 0.2, -0.4, 0.9, 0.3];
        let start = m.forward_kinematics(&seed).unwrap();
        let target = Pose::new(*start.rotation(), start.translation() + Vector3::new(0.06, -0.05, 0.058));
        let q = m.ik_damped_least_squares(&target, &seed, 100, 1e-4).unwrap();
        let (dp, dr) = pose_error(&m.forward_kinematics(&q).unwrap(), &target);
        assert!(dp <= 1e-4 && dr <= 1e-4);
        assert!(m.within_limits(&q));
    }

    #[test]
    fn ik_fails_far_outside_reach() {
        let m = RobotModel::toy_mobile_manipulator();
        let seed = vec![0.0; m.dof()];
        let target = Pose::from_translation(Vector3::new(10.0, 0.0, 0.5));
        let free = [false, false, false, true, true, true, true];
        let r = m.ik_damped_least_squares_masked(&target, &seed, 200, 1e-4, &free);
        assert!(matches!(r, Err(IkError::NotConverged { .. })));
    }

    #[test]
    fn rejects_bad_models() {
        let mut joints = base_joints();
        joints.swap(0, 1);
        assert!(RobotModel::new(joints, Pose::identity(), vec![]).is_err());
        let joints = base_joints();
        let bad_sphere = CollisionSphere { link: 9, center: Vector3::zeros(), radius: 0.1 };
        assert!(RobotModel::new(joints, Pose::identity(), vec![bad_sphere]).is_err());
        let mut joints = base_joints();
        joints.push(JointSpec::revolute(Vector3::new(0.0, 0.0, 2.0), Pose::identity(), (-1.0, 1.0)));
        assert!(RobotModel::new(joints, Pose::identity(), vec![]).is_err());
        let mut joints = base_joints();
        joints.push(JointSpec::revolute(Vector3::z(), Pose::identity(), (1.0, -1.0)));
        assert!(RobotModel::new(joints, Pose::identity(), vec![]).is_err());
    }

    #[test]
    fn description_round_trip() {
        let m = RobotModel::toy_mobile_manipulator();
        let text = m.to_toml_string();
        let back = RobotModel::from_toml_str(&text).unwrap();
        let q = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let (dp, dr) = pose_error(&m.forward_kinematics(&q).unwrap(), &back.forward_kinematics(&q).unwrap());
        assert!(dp < 1e-12 && dr < 1e-12);
        assert_eq!(back.collision_spheres().len(), 2);
    }

    #[test]
    fn yaw_joint_rotates_about_base() {
        let m = RobotModel::planar_base_arm3();
        let mut q = vec![0.0; m.dof()];
        let p0 = m.forward_kinematics(&q).unwrap();
        q[2] = FRAC_PI_2;
        let p1 = m.forward_kinematics(&q).unwrap();
        let expected = Pose::planar(0.0, 0.0, FRAC_PI_2).compose(&p0);
        let (dp, dr) = pose_error(&p1, &expected);
        assert!(dp < 1e-12 && dr < 1e-12);
    }
}
