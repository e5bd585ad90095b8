//! Demonstration synthesis and toy imitation learning for mobile manipulators.
//!
//! The crate is organised bottom-up: [`se3`] pose algebra, the [`robot`]
//! kinematic model, [`scene`] objects and episode resets, [`synthesis`] of
//! key end-effector poses, whole-body trajectory optimisation in [`wbopt`],
//! time-optimal retiming in [`topp`], sensor processing in [`pointcloud`],
//! flow-matching policies in [`flow`], file formats in [`dataset`], and the
//! end-to-end pipelines driven by the command line in [`harness`].

pub mod rng;
pub mod dataset;
pub mod flow;
pub mod harness;
pub mod pointcloud;
pub mod robot;
pub mod scene;
pub mod se3;
pub mod synthesis;
pub mod topp;
pub mod wbopt;

pub use robot::{Configuration, JointKind, JointSpec, RobotModel};
pub use se3::{pose_error, Pose, Twist};
