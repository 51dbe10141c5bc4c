//! Mapping between physical poses and per-dimension normalized values.
//!
//! Translation and joints map linearly onto `[0, 1]` over the workspace box
//! and joint limits; the rotation is carried as an unnormalized 4-vector and
//! L2-normalized on the way back. Learnable parameterizations store logits
//! and squash them with the logistic function ([`NormalizedPose::from_logits`]).

use super::{HandModel, HandPose};
use crate::error::{Error, Result};
use crate::math::{logit, quat_normalize, sigmoid, Quat, Vec3};

/// Values kept away from the open interval's ends when saturating.
const EDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose {
    pub rotation: Quat,
    pub translation: [f64; 3],
    pub joints: Vec<f64>,
}

/// Result of [`normalize_pose`]; `saturated` lists flat parameter indices
/// (layout `[r(4), t(3), q(J)]`) that fell outside their range and were pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub pose: NormalizedPose,
    pub saturated: Vec<usize>,
}

impl Normalization {
    pub fn is_saturated(&self) -> bool {
        !self.saturated.is_empty()
    }
}

impl NormalizedPose {
    pub fn from_logits(rotation: Quat, translation: &[f64; 3], joints: &[f64]) -> Self {
        Self {
            rotation,
            translation: translation.map(sigmoid),
            joints: joints.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    pub fn translation_logits(&self) -> [f64; 3] {
        self.translation.map(logit)
    }

    pub fn joint_logits(&self) -> Vec<f64> {
        self.joints.iter().map(|&u| logit(u)).collect()
    }

    /// `[r̄, 2u_t - 1, 2u_q - 1]` with the rotation L2-normalized.
    pub fn centered_vector(&self) -> Vec<f64> {
        let r = quat_normalize(&self.rotation).unwrap_or(self.rotation);
        let mut v = Vec::with_capacity(7 + self.joints.len());
        v.extend_from_slice(&r);
        v.extend(self.translation.iter().map(|u| 2.0 * u - 1.0));
        v.extend(self.joints.iter().map(|u| 2.0 * u - 1.0));
        v
    }
}

fn unit_interval(x: f64, lo: f64, hi: f64) -> f64 {
    (x - lo) / (hi - lo)
}

pub fn normalize_pose(model: &HandModel, pose: &HandPose) -> Result<Normalization> {
    if pose.joints.len() != model.dof() {
        return Err(Error::Dimension {
            what: "joint angles",
            expected: model.dof(),
            actual: pose.joints.len(),
        });
    }
    let mut saturated = Vec::new();
    let mut pin = |idx: usize, u: f64| -> f64 {
        if (0.0..=1.0).contains(&u) {
            u
        } else {
            saturated.push(idx);
            u.clamp(EDGE, 1.0 - EDGE)
        }
    };
    let ws = model.workspace();
    let translation: [f64; 3] = std::array::from_fn(|a| {
        pin(
            4 + a,
            unit_interval(pose.translation[a], ws.lower[a], ws.upper[a]),
        )
    });
    let joints = pose
        .joints
        .iter()
        .zip(model.joints())
        .enumerate()
        .map(|(k, (q, j))| pin(7 + k, unit_interval(*q, j.lower, j.upper)))
        .collect();
    Ok(Normalization {
        pose: NormalizedPose {
            rotation: pose.rotation,
            translation,
            joints,
        },
        saturated,
    })
}

pub fn denormalize_pose(model: &HandModel, n: &NormalizedPose) -> Result<HandPose> {
    if n.joints.len() != model.dof() {
        return Err(Error::Dimension {
            what: "normalized joints",
            expected: model.dof(),
            actual: n.joints.len(),
        });
    }
    let rotation = quat_normalize(&n.rotation)
        .ok_or_else(|| Error::InvalidInput("rotation 4-vector is zero".into()))?;
    let ws = model.workspace();
    let translation =
        Vec3::from_fn(|a, _| ws.lower[a] + (ws.upper[a] - ws.lower[a]) * n.translation[a]);
    let joints = n
        .joints
        .iter()
        .zip(model.joints())
        .map(|(u, j)| j.lower + j.range() * u)
        .collect();
    Ok(HandPose {
        rotation,
        translation,
        joints,
    })
}
