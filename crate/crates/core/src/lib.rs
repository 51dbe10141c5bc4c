//! Grasp-pose optimization toolkit for capsule-modelled articulated hands.
//!
//! Works directly on explicit hand-pose parameters and object point clouds:
//! forward kinematics with analytic pullbacks, the grasp loss suite,
//! Hungarian set matching, dynamic-static matching training on a learnable
//! pose table, test-time refinement, and grasp quality/diversity metrics.

pub mod dsmt;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod geometry;
pub mod hand;
pub mod io;
pub mod losses;
pub mod matching;
pub mod math;
pub mod metrics;
pub mod tta;

pub use error::{Error, Result};
pub use exec::Exec;
pub use hand::{AttachedPoint, HandModel, HandPose, PoseGrad};
pub use math::Vec3;
