//! Articulated hand: kinematic tree, capsule geometry, keypoints, poses.

mod config;
mod kinematics;
mod normalize;
mod surface;

pub use config::{
    load_hand_config, parse_hand_config, BoxSpec, CapsuleSpec, HandConfig, JointSpec, KeypointSpec,
    LinkSpec,
};
pub use kinematics::{forward_kinematics, pose_pullback, HandState};
pub use normalize::{denormalize_pose, normalize_pose, Normalization, NormalizedPose};
pub use surface::{keypoints_and_surface, sample_surface, HandPoints};

use crate::error::{Error, Result};
use crate::math::{quat_norm, quat_normalize, Quat, Rigid, Vec3, IDENTITY_QUAT};

/// Tolerance on `‖r‖ - 1` accepted by kinematics.
pub const UNIT_QUAT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub rest: Rigid,
}

/// Revolute joint; rotates `link` about `axis` (link-local, unit) after the rest transform.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub link: usize,
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
}

impl Joint {
    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Segment `[a, b]` in link coordinates swept by a sphere of `radius`.
#[derive(Debug, Clone)]
pub struct Capsule {
    pub link: usize,
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn area(&self) -> f64 {
        let h = (self.b - self.a).norm();
        2.0 * std::f64::consts::PI * self.radius * h
            + 4.0 * std::f64::consts::PI * self.radius * self.radius
    }
}

#[derive(Debug, Clone)]
pub struct Keypoint {
    pub link: usize,
    pub offset: Vec3,
    pub radius: f64,
}

/// A point rigidly attached to a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachedPoint {
    pub link: usize,
    pub local: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceBox {
    pub lower: Vec3,
    pub upper: Vec3,
}

/// Keypoint pair checked for self-penetration, with its minimum separation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfPair {
    pub i: usize,
    pub j: usize,
    pub min_separation: f64,
}

/// Immutable articulated hand.
#[derive(Debug, Clone)]
pub struct HandModel {
    pub name: String,
    links: Vec<Link>,
    joints: Vec<Joint>,
    capsules: Vec<Capsule>,
    keypoints: Vec<Keypoint>,
    workspace: WorkspaceBox,
    /// Parent-before-child link order.
    order: Vec<usize>,
    /// Joint driving each link, if any.
    link_joint: Vec<Option<usize>>,
    /// Joints on the path from the root to each link.
    link_ancestry: Vec<Vec<usize>>,
    self_pairs: Vec<SelfPair>,
}

impl HandModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        name: String,
        dof: usize,
        links: Vec<Link>,
        joints: Vec<Joint>,
        capsules: Vec<Capsule>,
        keypoints: Vec<Keypoint>,
        extra_exclusions: &[Vec<usize>],
        workspace: WorkspaceBox,
    ) -> Result<Self> {
        let n = links.len();
        if dof != joints.len() {
            return Err(Error::Structure(format!(
                "dof is {dof} but {} revolute joints are defined",
                joints.len()
            )));
        }

        // Reachability from the root doubles as the cycle check: with one
        // parent per link, a link on a cycle can never be reached from link 0.
        let mut children = vec![Vec::new(); n];
        for (i, l) in links.iter().enumerate() {
            if let Some(p) = l.parent {
                if p == i {
                    return Err(Error::Structure(format!(
                        "link `{}` is its own parent",
                        l.name
                    )));
                }
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![0usize];
        let mut seen = vec![false; n];
        while let Some(i) = stack.pop() {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            order.push(i);
            for &c in children[i].iter().rev() {
                stack.push(c);
            }
        }
        if let Some(bad) = seen.iter().position(|s| !s) {
            return Err(Error::Structure(format!(
                "link `{}` is not reachable from the root (cycle in parent chain)",
                links[bad].name
            )));
        }

        let mut link_joint = vec![None; n];
        for (j, joint) in joints.iter().enumerate() {
            if joint.lower >= joint.upper {
                return Err(Error::Structure(format!(
                    "joint `{}` has lower limit {} not below upper limit {}",
                    joint.name, joint.lower, joint.upper
                )));
            }
            if joint.link == 0 {
                return Err(Error::Structure(format!(
                    "joint `{}` drives the root link",
                    joint.name
                )));
            }
            if link_joint[joint.link].replace(j).is_some() {
                return Err(Error::Structure(format!(
                    "link `{}` is driven by more than one joint",
                    links[joint.link].name
                )));
            }
        }

        for (i, c) in capsules.iter().enumerate() {
            if !(c.radius > 0.0 && c.radius.is_finite()) {
                return Err(Error::Structure(format!(
                    "capsule {i} has non-positive radius"
                )));
            }
        }
        for (i, k) in keypoints.iter().enumerate() {
            if !(k.radius >= 0.0 && k.radius.is_finite()) {
                return Err(Error::Structure(format!(
                    "keypoint {i} has negative radius"
                )));
            }
        }
        let w = &workspace;
        if (0..3).any(|a| w.lower[a] >= w.upper[a]) {
            return Err(Error::Structure(
                "workspace box lower must be below upper".into(),
            ));
        }

        let mut link_ancestry = vec![Vec::new(); n];
        for &i in &order {
            let mut chain = match links[i].parent {
                Some(p) => link_ancestry[p].clone(),
                None => Vec::new(),
            };
            if let Some(j) = link_joint[i] {
                chain.push(j);
            }
            link_ancestry[i] = chain;
        }

        let related =
            |a: usize, b: usize| a == b || links[a].parent == Some(b) || links[b].parent == Some(a);
        let mut self_pairs = Vec::new();
        for i in 0..keypoints.len() {
            for j in (i + 1)..keypoints.len() {
                let (li, lj) = (keypoints[i].link, keypoints[j].link);
                let excluded = related(li, lj)
                    || extra_exclusions.get(i).is_some_and(|e| e.contains(&j))
                    || extra_exclusions.get(j).is_some_and(|e| e.contains(&i));
                if !excluded {
                    self_pairs.push(SelfPair {
                        i,
                        j,
                        min_separation: keypoints[i].radius + keypoints[j].radius,
                    });
                }
            }
        }

        Ok(Self {
            name,
            links,
            joints,
            capsules,
            keypoints,
            workspace,
            order,
            link_joint,
            link_ancestry,
            self_pairs,
        })
    }

    /// Number of revolute joints (J).
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Length of the flat pose parameter vector, `4 + 3 + J`.
    pub fn param_count(&self) -> usize {
        7 + self.joints.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn capsules(&self) -> &[Capsule] {
        &self.capsules
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn workspace(&self) -> &WorkspaceBox {
        &self.workspace
    }

    pub fn self_pairs(&self) -> &[SelfPair] {
        &self.self_pairs
    }

    pub(crate) fn order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn link_joint(&self, link: usize) -> Option<usize> {
        self.link_joint[link]
    }

    pub(crate) fn link_ancestry(&self, link: usize) -> &[usize] {
        &self.link_ancestry[link]
    }

    pub fn keypoint_attachments(&self) -> Vec<AttachedPoint> {
        self.keypoints
            .iter()
            .map(|k| AttachedPoint {
                link: k.link,
                local: k.offset,
            })
            .collect()
    }

    /// Both endpoints of every capsule, `[a0, b0, a1, b1, ...]`.
    pub fn capsule_endpoints(&self) -> Vec<AttachedPoint> {
        self.capsules
            .iter()
            .flat_map(|c| {
                [
                    AttachedPoint {
                        link: c.link,
                        local: c.a,
                    },
                    AttachedPoint {
                        link: c.link,
                        local: c.b,
                    },
                ]
            })
            .collect()
    }

    /// Identity rotation, zero translation, joints at mid-range.
    pub fn mid_pose(&self) -> HandPose {
        HandPose {
            rotation: IDENTITY_QUAT,
            translation: Vec3::zeros(),
            joints: self.joints.iter().map(Joint::mid).collect(),
        }
    }

    /// Identity rotation, zero translation, all joints zero (clamped into limits).
    pub fn rest_pose(&self) -> HandPose {
        HandPose {
            rotation: IDENTITY_QUAT,
            translation: Vec3::zeros(),
            joints: self
                .joints
                .iter()
                .map(|j| 0.0f64.clamp(j.lower, j.upper))
                .collect(),
        }
    }
}

/// Grasp pose `g = (r, t, q)`: scalar-first unit quaternion, meters, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub rotation: Quat,
    pub translation: Vec3,
    pub joints: Vec<f64>,
}

impl HandPose {
    /// Builds a pose, renormalizing the quaternion.
    pub fn new(rotation: Quat, translation: Vec3, joints: Vec<f64>) -> Result<Self> {
        let rotation = quat_normalize(&rotation)
            .ok_or_else(|| Error::InvalidInput("zero or non-finite quaternion".into()))?;
        if !translation.iter().all(|c| c.is_finite()) || !joints.iter().all(|q| q.is_finite()) {
            return Err(Error::InvalidInput("non-finite pose component".into()));
        }
        Ok(Self {
            rotation,
            translation,
            joints,
        })
    }

    /// Flat parameters `[r(4), t(3), q(J)]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(7 + self.joints.len());
        v.extend_from_slice(&self.rotation);
        v.extend(self.translation.iter());
        v.extend_from_slice(&self.joints);
        v
    }

    /// Inverse of [`HandPose::to_params`]; the rotation block is kept as given.
    pub fn from_params(p: &[f64]) -> Self {
        Self {
            rotation: [p[0], p[1], p[2], p[3]],
            translation: Vec3::new(p[4], p[5], p[6]),
            joints: p[7..].to_vec(),
        }
    }

    pub fn check_against(&self, model: &HandModel) -> Result<()> {
        if self.joints.len() != model.dof() {
            return Err(Error::Dimension {
                what: "joint angles",
                expected: model.dof(),
                actual: self.joints.len(),
            });
        }
        let n = quat_norm(&self.rotation);
        if (n - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation quaternion has norm {n}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn within_limits(&self, model: &HandModel) -> bool {
        self.joints
            .iter()
            .zip(model.joints())
            .all(|(q, j)| *q >= j.lower && *q <= j.upper)
    }

    pub fn clamp_to_limits(&mut self, model: &HandModel) {
        for (q, j) in self.joints.iter_mut().zip(model.joints()) {
            *q = q.clamp(j.lower, j.upper);
        }
    }

    pub fn renormalize(&mut self) {
        if let Some(q) = quat_normalize(&self.rotation) {
            self.rotation = q;
        }
    }

    /// Applies a world-frame rigid transform to the root.
    pub fn transformed(&self, rotation: &Quat, translation: &Vec3) -> HandPose {
        let r = crate::math::quat_mul(rotation, &self.rotation);
        HandPose {
            rotation: quat_normalize(&r).unwrap_or(r),
            translation: crate::math::quat_to_matrix(rotation) * self.translation + translation,
            joints: self.joints.clone(),
        }
    }
}

/// Gradient over the `4 + 3 + J` pose parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGrad {
    pub rotation: [f64; 4],
    pub translation: Vec3,
    pub joints: Vec<f64>,
}

impl PoseGrad {
    pub fn zeros(dof: usize) -> Self {
        Self {
            rotation: [0.0; 4],
            translation: Vec3::zeros(),
            joints: vec![0.0; dof],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(7 + self.joints.len());
        v.extend_from_slice(&self.rotation);
        v.extend(self.translation.iter());
        v.extend_from_slice(&self.joints);
        v
    }

    pub fn add_scaled(&mut self, other: &PoseGrad, s: f64) {
        for i in 0..4 {
            self.rotation[i] += s * other.rotation[i];
        }
        self.translation += other.translation * s;
        for (a, b) in self.joints.iter_mut().zip(&other.joints) {
            *a += s * b;
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for r in &mut self.rotation {
            *r *= s;
        }
        self.translation *= s;
        for q in &mut self.joints {
            *q *= s;
        }
        self
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}
