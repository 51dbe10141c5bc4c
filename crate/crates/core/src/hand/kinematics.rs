//! Forward kinematics and the reverse-mode pullback of attached points.
//!
//! Link transforms compose as `T_child = T_parent ∘ rest_child ∘ Rot(axis, q)`
//! and the root is `(r, t) ∘ rest_0`. The rotation block of the parameter
//! vector is treated as an ambient 4-vector that is normalized before use,
//! so gradients with respect to it are tangent to the unit sphere and match
//! finite differences taken in 4-space.

use super::{AttachedPoint, HandModel, HandPose, PoseGrad};
use crate::error::Result;
use crate::math::{axis_angle_matrix, quat_norm, Quat, Rigid, Vec3};

/// World placement of every link for one pose.
#[derive(Debug, Clone)]
pub struct HandState {
    /// Root placement `(R(r̄), t)`.
    pub root: Rigid,
    /// Normalized rotation used for `root`.
    pub unit_rotation: Quat,
    /// Norm of the rotation parameters before normalization.
    pub rotation_norm: f64,
    pub links: Vec<Rigid>,
    /// World axis and origin of each joint.
    pub joint_axes: Vec<Vec3>,
    pub joint_origins: Vec<Vec3>,
}

impl HandState {
    /// Evaluates the chain; `rotation` need not be unit length but must be nonzero.
    pub fn compute(model: &HandModel, rotation: &Quat, translation: &Vec3, joints: &[f64]) -> Self {
        let norm = quat_norm(rotation);
        let unit = [
            rotation[0] / norm,
            rotation[1] / norm,
            rotation[2] / norm,
            rotation[3] / norm,
        ];
        let root = Rigid::from_quat(&unit, *translation);
        let n = model.links().len();
        let mut links = vec![Rigid::identity(); n];
        let dof = model.dof();
        let mut joint_axes = vec![Vec3::zeros(); dof];
        let mut joint_origins = vec![Vec3::zeros(); dof];
        for &i in model.order() {
            let link = &model.links()[i];
            let base = match link.parent {
                Some(p) => links[p].compose(&link.rest),
                None => root.compose(&link.rest),
            };
            links[i] = match model.link_joint(i) {
                Some(j) => {
                    let joint = &model.joints()[j];
                    joint_axes[j] = base.rotation * joint.axis;
                    joint_origins[j] = base.translation;
                    Rigid {
                        rotation: base.rotation * axis_angle_matrix(&joint.axis, joints[j]),
                        translation: base.translation,
                    }
                }
                None => base,
            };
        }
        Self {
            root,
            unit_rotation: unit,
            rotation_norm: norm,
            links,
            joint_axes,
            joint_origins,
        }
    }

    pub fn of_pose(model: &HandModel, pose: &HandPose) -> Self {
        Self::compute(model, &pose.rotation, &pose.translation, &pose.joints)
    }

    pub fn point(&self, p: &AttachedPoint) -> Vec3 {
        self.links[p.link].apply(&p.local)
    }

    pub fn points(&self, ps: &[AttachedPoint]) -> Vec<Vec3> {
        ps.iter().map(|p| self.point(p)).collect()
    }

    /// Accumulates `Jᵀ c` for a world point `world` on `link` into `grad`.
    pub fn accumulate(
        &self,
        model: &HandModel,
        link: usize,
        world: &Vec3,
        cotangent: &Vec3,
        grad: &mut PoseGrad,
    ) {
        grad.translation += cotangent;

        // R(q)x = (w² - u·u)x + 2(u·x)u + 2w(u × x), x the root-frame point.
        let x = self.root.rotation.transpose() * (world - self.root.translation);
        let [w, ux, uy, uz] = self.unit_rotation;
        let u = Vec3::new(ux, uy, uz);
        let c = cotangent;
        let ux_dot = u.dot(&x);
        let dw = 2.0 * w * x + 2.0 * u.cross(&x);
        let mut g = [c.dot(&dw), 0.0, 0.0, 0.0];
        for (i, gi) in g.iter_mut().skip(1).enumerate() {
            let e = Vec3::ith(i, 1.0);
            let d = -2.0 * u[i] * x + 2.0 * x[i] * u + 2.0 * ux_dot * e + 2.0 * w * e.cross(&x);
            *gi = c.dot(&d);
        }
        // project through the normalization r -> r/|r|
        let q = &self.unit_rotation;
        let along = g[0] * q[0] + g[1] * q[1] + g[2] * q[2] + g[3] * q[3];
        for k in 0..4 {
            grad.rotation[k] += (g[k] - along * q[k]) / self.rotation_norm;
        }

        for &j in model.link_ancestry(link) {
            let lever = world - self.joint_origins[j];
            grad.joints[j] += cotangent.dot(&self.joint_axes[j].cross(&lever));
        }
    }

    /// Pullback of world-space cotangents on attached points.
    pub fn pullback(
        &self,
        model: &HandModel,
        points: &[AttachedPoint],
        cotangents: &[Vec3],
    ) -> PoseGrad {
        let mut grad = PoseGrad::zeros(model.dof());
        for (p, c) in points.iter().zip(cotangents) {
            if c.x == 0.0 && c.y == 0.0 && c.z == 0.0 {
                continue;
            }
            let world = self.point(p);
            self.accumulate(model, p.link, &world, c, &mut grad);
        }
        grad
    }
}

/// World transform of every link for a validated pose.
pub fn forward_kinematics(model: &HandModel, pose: &HandPose) -> Result<Vec<Rigid>> {
    pose.check_against(model)?;
    Ok(HandState::of_pose(model, pose).links)
}

/// Gradient over the `7 + J` pose parameters of `Σ cᵢ · pᵢ(pose)`.
pub fn pose_pullback(
    model: &HandModel,
    pose: &HandPose,
    points: &[AttachedPoint],
    cotangents: &[Vec3],
) -> Result<PoseGrad> {
    if points.len() != cotangents.len() {
        return Err(crate::Error::Dimension {
            what: "cotangents",
            expected: points.len(),
            actual: cotangents.len(),
        });
    }
    if pose.joints.len() != model.dof() {
        return Err(crate::Error::Dimension {
            what: "joint angles",
            expected: model.dof(),
            actual: pose.joints.len(),
        });
    }
    Ok(HandState::of_pose(model, pose).pullback(model, points, cotangents))
}
