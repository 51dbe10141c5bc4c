//! Grasp losses and their gradients over the `7 + J` pose parameters.
//!
//! Every loss has a value form and a gradient form that share one evaluator.
//! Gradients are exact wherever the discrete choices a loss makes (nearest
//! object points, active capsules, indicator gates, self-collision pairs)
//! stay fixed; [`discrete_signature`] exposes those choices so callers can
//! tell when a finite-difference comparison is meaningful. At kinks the
//! one-sided subgradient that favors zero is returned, and indicators are
//! treated as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    capsule_sdf_grad, chamfer_with_grad, world_capsules, ObjectCloud, WorldCapsule,
};
use crate::hand::{sample_surface, AttachedPoint, HandModel, HandPose, HandState, PoseGrad};
use crate::math::{quat_norm, Quat, Vec3};

/// Loss weights and thresholds.
///
/// `lambda1..lambda3` weight translation, joints and rotation inside the
/// parameter loss, `lambda4..lambda6` weight chamfer, self-penetration and
/// object penetration in the grasp loss, and `alpha1..alpha3` weight
/// penetration, contact distance and self-penetration during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Contact threshold for the distance losses (m).
    pub tau: f64,
    /// Smooth-L1 transition width in normalized units.
    pub smooth_l1_beta: f64,
    /// Surface samples per hand for the chamfer loss (keypoints are added).
    pub chamfer_samples: usize,
    pub chamfer_seed: u64,
    /// Length unit (m) in which the penetration term of the composite
    /// objectives is measured; depths are divided by it before squaring.
    pub pen_unit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 10.0,
            lambda3: 10.0,
            lambda4: 1.0,
            lambda5: 10.0,
            lambda6: 0.0,
            alpha1: 5.0,
            alpha2: 3.0,
            alpha3: 5.0,
            tau: 0.01,
            smooth_l1_beta: 0.1,
            chamfer_samples: 64,
            chamfer_seed: 0,
            pen_unit: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda6", self.lambda6),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parse(
                    name,
                    format!("weight must be finite and ≥ 0, got {v}"),
                ));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::parse(
                "tau",
                format!("must be > 0, got {}", self.tau),
            ));
        }
        if !(self.smooth_l1_beta.is_finite() && self.smooth_l1_beta > 0.0) {
            return Err(Error::parse(
                "smooth_l1_beta",
                format!("must be > 0, got {}", self.smooth_l1_beta),
            ));
        }
        if !(self.pen_unit.is_finite() && self.pen_unit > 0.0) {
            return Err(Error::parse(
                "pen_unit",
                format!("must be > 0, got {}", self.pen_unit),
            ));
        }
        if self.chamfer_samples == 0 {
            return Err(Error::parse("chamfer_samples", "must be at least 1"));
        }
        Ok(())
    }
}

fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

fn unit(q: &Quat) -> (Quat, f64) {
    let n = quat_norm(q);
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// `1 − |r̄·r̂|`, computed as `min(|r̄ − r̂|², |r̄ + r̂|²) / 2` so that
/// `r̂ = ±r` gives exactly 0. Returns the value and the ambient gradient
/// with respect to the unnormalized `r`.
fn rotation_term(r: &Quat, target: &Quat) -> (f64, [f64; 4]) {
    let (rb, n) = unit(r);
    let (tb, _) = unit(target);
    let mut minus = 0.0;
    let mut plus = 0.0;
    let mut dot = 0.0;
    for k in 0..4 {
        minus += (rb[k] - tb[k]).powi(2);
        plus += (rb[k] + tb[k]).powi(2);
        dot += rb[k] * tb[k];
    }
    let value = 0.5 * minus.min(plus);
    let sign = if dot > 0.0 {
        1.0
    } else if dot < 0.0 {
        -1.0
    } else {
        0.0
    };
    // d/dr̄ (1 − s·r̄·r̂) = −s·r̂, projected onto the tangent space and scaled by 1/|r|
    let along: f64 = (0..4).map(|k| -sign * tb[k] * rb[k]).sum();
    let mut grad = [0.0; 4];
    for k in 0..4 {
        grad[k] = (-sign * tb[k] - along * rb[k]) / n;
    }
    (value, grad)
}

fn check_unit(q: &Quat, what: &str) -> Result<()> {
    let n = quat_norm(q);
    if !n.is_finite() || (n - 1.0).abs() > crate::hand::UNIT_QUAT_TOL {
        return Err(Error::InvalidInput(format!(
            "{what} is not a unit quaternion (norm {n})"
        )));
    }
    Ok(())
}

/// `1 − |r·r̂|` for unit quaternions; invariant under `r → −r`.
pub fn rotation_loss(r: &Quat, target: &Quat) -> Result<f64> {
    check_unit(r, "rotation")?;
    check_unit(target, "target rotation")?;
    Ok(rotation_term(r, target).0)
}

fn check_pair(model: &HandModel, g: &HandPose, target: &HandPose) -> Result<()> {
    g.check_against(model)?;
    target.check_against(model)
}

/// Weighted smooth-L1 on normalized translation and joints plus rotation loss.
fn param_eval(
    model: &HandModel,
    g: &HandPose,
    target: &HandPose,
    w: &LossWeights,
    grad: Option<&mut PoseGrad>,
) -> f64 {
    let ws = model.workspace();
    let beta = w.smooth_l1_beta;
    let mut t_val = 0.0;
    let mut t_grad = Vec3::zeros();
    for k in 0..3 {
        let range = ws.upper[k] - ws.lower[k];
        let (v, d) = smooth_l1((g.translation[k] - target.translation[k]) / range, beta);
        t_val += v / 3.0;
        t_grad[k] = d / (3.0 * range);
    }
    let dof = model.dof();
    let mut q_val = 0.0;
    let mut q_grad = vec![0.0; dof];
    for (j, joint) in model.joints().iter().enumerate() {
        let (v, d) = smooth_l1((g.joints[j] - target.joints[j]) / joint.range(), beta);
        q_val += v / dof as f64;
        q_grad[j] = d / (dof as f64 * joint.range());
    }
    let (r_val, r_grad) = rotation_term(&g.rotation, &target.rotation);
    if let Some(grad) = grad {
        grad.translation += t_grad * w.lambda1;
        for (gj, d) in grad.joints.iter_mut().zip(&q_grad) {
            *gj += w.lambda2 * d;
        }
        for (g, d) in grad.rotation.iter_mut().zip(&r_grad) {
            *g += w.lambda3 * d;
        }
    }
    w.lambda1 * t_val + w.lambda2 * q_val + w.lambda3 * r_val
}

/// Unweighted parameter-loss components `(translation, joints, rotation)`.
pub fn param_components(
    model: &HandModel,
    g: &HandPose,
    target: &HandPose,
    beta: f64,
) -> (f64, f64, f64) {
    let unit_weights = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
        lambda3: 0.0,
        smooth_l1_beta: beta,
        ..LossWeights::default()
    };
    let t = param_eval(model, g, target, &unit_weights, None);
    let q = param_eval(
        model,
        g,
        target,
        &LossWeights {
            lambda1: 0.0,
            lambda2: 1.0,
            ..unit_weights
        },
        None,
    );
    (t, q, rotation_term(&g.rotation, &target.rotation).0)
}

pub fn param_loss(
    model: &HandModel,
    g: &HandPose,
    target: &HandPose,
    w: &LossWeights,
) -> Result<f64> {
    check_pair(model, g, target)?;
    Ok(param_eval(model, g, target, w, None))
}

/// Keypoints followed by `count` seeded surface samples.
pub fn chamfer_attachments(model: &HandModel, count: usize, seed: u64) -> Vec<AttachedPoint> {
    let mut pts = model.keypoint_attachments();
    pts.extend(sample_surface(model, count, seed));
    pts
}

fn chamfer_eval(
    model: &HandModel,
    state: &HandState,
    attach: &[AttachedPoint],
    target: &[Vec3],
    grad: Option<&mut PoseGrad>,
) -> f64 {
    let pts = state.points(attach);
    let (value, point_grad) = chamfer_with_grad(&pts, target).expect("hand samples are nonempty");
    if let Some(grad) = grad {
        for ((a, p), c) in attach.iter().zip(&pts).zip(&point_grad) {
            state.accumulate(model, a.link, p, c, grad);
        }
    }
    value
}

/// Chamfer distance between seeded samples of the two posed hands (m²).
pub fn chamfer_loss(
    model: &HandModel,
    g: &HandPose,
    target: &HandPose,
    count: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(model, g, target)?;
    if count == 0 {
        return Err(Error::InvalidInput(
            "chamfer sample count must be at least 1".into(),
        ));
    }
    let attach = chamfer_attachments(model, count, seed);
    let target_pts = HandState::of_pose(model, target).points(&attach);
    Ok(chamfer_eval(
        model,
        &HandState::of_pose(model, g),
        &attach,
        &target_pts,
        None,
    ))
}

/// Object points that lie strictly inside the posed hand, with depth and the
/// capsule realizing the union distance, in ascending point order.
pub(crate) fn inside_points(
    caps: &[WorldCapsule],
    cloud: &ObjectCloud,
) -> Vec<(usize, f64, usize)> {
    let mut candidates = Vec::new();
    for c in caps {
        let center = (c.a + c.b) * 0.5;
        let reach = (c.b - c.a).norm() * 0.5 + c.radius;
        candidates.extend(cloud.index().within(&center, reach));
    }
    candidates.sort_unstable();
    candidates.dedup();
    let pts = cloud.points();
    candidates
        .into_iter()
        .filter_map(|i| {
            let (s, ci) = crate::geometry::capsule_union_sdf(caps, &pts[i]);
            (s < 0.0).then_some((i, -s, ci))
        })
        .collect()
}

/// Penetration loss value and the deepest object-point penetration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenEval {
    pub loss: f64,
    pub max_depth: f64,
}

/// Penetration loss with depths measured in units of `unit` meters.
fn pen_eval(
    model: &HandModel,
    state: &HandState,
    cloud: &ObjectCloud,
    unit: f64,
    grad: Option<&mut PoseGrad>,
) -> PenEval {
    if model.capsules().is_empty() {
        return PenEval::default();
    }
    let caps = world_capsules(model, state);
    let inside = inside_points(&caps, cloud);
    let m = cloud.len() as f64 * unit * unit;
    let mut out = PenEval::default();
    for &(_, depth, _) in &inside {
        out.loss += depth * depth / m;
        out.max_depth = out.max_depth.max(depth);
    }
    if let Some(grad) = grad {
        let pts = cloud.points();
        for &(i, depth, ci) in &inside {
            let (_, da, db) = capsule_sdf_grad(&caps[ci], &pts[i]);
            // d(depth²)/dθ = −2·depth·ds/dθ
            let scale = -2.0 * depth / m;
            let cap = &model.capsules()[ci];
            state.accumulate(model, cap.link, &caps[ci].a, &(da * scale), grad);
            state.accumulate(model, cap.link, &caps[ci].b, &(db * scale), grad);
        }
    }
    out
}

/// Mean over object points of the squared penetration depth into the hand (m²).
pub fn pen_loss(model: &HandModel, g: &HandPose, cloud: &ObjectCloud) -> Result<f64> {
    g.check_against(model)?;
    Ok(pen_eval(model, &HandState::of_pose(model, g), cloud, 1.0, None).loss)
}

fn spen_eval(model: &HandModel, state: &HandState, grad: Option<&mut PoseGrad>) -> f64 {
    let attach = model.keypoint_attachments();
    let pts = state.points(&attach);
    let mut value = 0.0;
    let mut cot = vec![Vec3::zeros(); pts.len()];
    for pair in model.self_pairs() {
        let diff = pts[pair.i] - pts[pair.j];
        let d = diff.norm();
        if d < pair.min_separation {
            value += pair.min_separation - d;
            if d > 0.0 {
                let n = diff / d;
                cot[pair.i] -= n;
                cot[pair.j] += n;
            }
        }
    }
    if let Some(grad) = grad {
        for ((a, p), c) in attach.iter().zip(&pts).zip(&cot) {
            if *c != Vec3::zeros() {
                state.accumulate(model, a.link, p, c, grad);
            }
        }
    }
    value
}

/// Sum over non-excluded keypoint pairs of `max(0, d_min − ‖p_i − p_j‖)`.
pub fn spen_loss(model: &HandModel, g: &HandPose) -> Result<f64> {
    g.check_against(model)?;
    Ok(spen_eval(model, &HandState::of_pose(model, g), None))
}

/// Keypoint-to-cloud distances of the coarse pose, fixed for a refinement run.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactAnchors {
    /// `d(p^c_i) < τ` per keypoint.
    pub gate: Vec<bool>,
}

impl ContactAnchors {
    /// Anchors of `coarse` against `cloud` with threshold `tau`.
    pub fn of_pose(model: &HandModel, coarse: &HandPose, cloud: &ObjectCloud, tau: f64) -> Self {
        let state = HandState::of_pose(model, coarse);
        let gate = state
            .points(&model.keypoint_attachments())
            .iter()
            .map(|p| cloud.nearest(p).1 < tau)
            .collect();
        Self { gate }
    }

    /// No anchored keypoints: the distance loss reduces to the vanilla one.
    pub fn none(model: &HandModel) -> Self {
        Self {
            gate: vec![false; model.keypoints().len()],
        }
    }

    pub fn count(&self) -> usize {
        self.gate.iter().filter(|g| **g).count()
    }
}

fn dist_eval(
    model: &HandModel,
    state: &HandState,
    cloud: &ObjectCloud,
    anchors: &ContactAnchors,
    tau: f64,
    grad: Option<&mut PoseGrad>,
) -> f64 {
    let attach = model.keypoint_attachments();
    let obj = cloud.points();
    let mut value = 0.0;
    let mut grad = grad;
    for (i, a) in attach.iter().enumerate() {
        let p = state.point(a);
        let (j, d) = cloud.nearest(&p);
        if anchors.gate[i] || d < tau {
            value += d;
            if let Some(g) = grad.as_deref_mut() {
                if d > 0.0 {
                    state.accumulate(model, a.link, &p, &((p - obj[j]) / d), g);
                }
            }
        }
    }
    value
}

/// `Σ_i 1[d(p_i) < τ]·d(p_i)` over hand keypoints.
pub fn van_dist_loss(
    model: &HandModel,
    g: &HandPose,
    cloud: &ObjectCloud,
    tau: f64,
) -> Result<f64> {
    g.check_against(model)?;
    check_tau(tau)?;
    let state = HandState::of_pose(model, g);
    Ok(dist_eval(
        model,
        &state,
        cloud,
        &ContactAnchors::none(model),
        tau,
        None,
    ))
}

/// `Σ_i 1[d(p^c_i) < τ ∨ d(p^r_i) < τ]·d(p^r_i)` with `p^c` from the coarse pose.
pub fn tta_dist_loss(
    model: &HandModel,
    refined: &HandPose,
    coarse: &HandPose,
    cloud: &ObjectCloud,
    tau: f64,
) -> Result<f64> {
    check_pair(model, refined, coarse)?;
    check_tau(tau)?;
    let anchors = ContactAnchors::of_pose(model, coarse, cloud, tau);
    let state = HandState::of_pose(model, refined);
    Ok(dist_eval(model, &state, cloud, &anchors, tau, None))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "contact threshold must be > 0, got {tau}"
        )))
    }
}

/// Runs `f` with a scratch gradient (when one is requested) and adds it
/// into `grad` scaled by `weight`; zero weights skip the gradient work.
fn weighted<T>(
    grad: &mut Option<&mut PoseGrad>,
    dof: usize,
    weight: f64,
    f: impl FnOnce(Option<&mut PoseGrad>) -> T,
) -> T {
    match grad.as_deref_mut() {
        Some(g) if weight != 0.0 => {
            let mut scratch = PoseGrad::zeros(dof);
            let v = f(Some(&mut scratch));
            g.add_scaled(&scratch, weight);
            v
        }
        _ => f(None),
    }
}

/// Components of the refinement objective at one pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TtaTerms {
    /// Penetration loss in units of `pen_unit`².
    pub pen: f64,
    pub dist: f64,
    pub spen: f64,
    pub total: f64,
    /// Deepest object-point penetration (m).
    pub max_depth: f64,
}

/// Refinement objective `α1·pen + α2·dist + α3·spen` against fixed anchors,
/// with its gradient when `grad` is given.
pub fn tta_terms(
    model: &HandModel,
    state: &HandState,
    cloud: &ObjectCloud,
    anchors: &ContactAnchors,
    w: &LossWeights,
    mut grad: Option<&mut PoseGrad>,
) -> TtaTerms {
    let dof = model.dof();
    let pen = weighted(&mut grad, dof, w.alpha1, |g| {
        pen_eval(model, state, cloud, w.pen_unit, g)
    });
    let dist = weighted(&mut grad, dof, w.alpha2, |g| {
        dist_eval(model, state, cloud, anchors, w.tau, g)
    });
    let spen = weighted(&mut grad, dof, w.alpha3, |g| spen_eval(model, state, g));
    TtaTerms {
        pen: pen.loss,
        dist,
        spen,
        total: w.alpha1 * pen.loss + w.alpha2 * dist + w.alpha3 * spen,
        max_depth: pen.max_depth,
    }
}

/// `α1·pen_loss + α2·tta_dist_loss + α3·spen_loss`, with the penetration
/// term measured in units of `w.pen_unit`.
pub fn ab_tta_loss(
    model: &HandModel,
    refined: &HandPose,
    coarse: &HandPose,
    cloud: &ObjectCloud,
    w: &LossWeights,
) -> Result<f64> {
    check_pair(model, refined, coarse)?;
    w.validate()?;
    let anchors = ContactAnchors::of_pose(model, coarse, cloud, w.tau);
    let state = HandState::of_pose(model, refined);
    Ok(tta_terms(model, &state, cloud, &anchors, w, None).total)
}

/// Components of the training loss for one matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GraspTerms {
    pub param: f64,
    pub chamfer: f64,
    pub spen: f64,
    /// Penetration loss in units of `pen_unit`².
    pub pen: f64,
    pub total: f64,
}

/// Precomputed target samples for repeated chamfer evaluations.
#[derive(Debug, Clone)]
pub struct ChamferTarget {
    pub attachments: Vec<AttachedPoint>,
    pub points: Vec<Vec3>,
}

impl ChamferTarget {
    pub fn new(model: &HandModel, target: &HandPose, w: &LossWeights) -> Self {
        let attachments = chamfer_attachments(model, w.chamfer_samples, w.chamfer_seed);
        let points = HandState::of_pose(model, target).points(&attachments);
        Self {
            attachments,
            points,
        }
    }
}

/// `param + λ4·chamfer + λ5·spen + λ6·pen` with optional gradient; the
/// penetration term (in units of `w.pen_unit`) is skipped entirely when
/// `λ6 = 0` or no cloud is given.
pub fn grasp_terms(
    model: &HandModel,
    g: &HandPose,
    target: &HandPose,
    chamfer: &ChamferTarget,
    cloud: Option<&ObjectCloud>,
    w: &LossWeights,
    mut grad: Option<&mut PoseGrad>,
) -> GraspTerms {
    let state = HandState::of_pose(model, g);
    let dof = model.dof();
    let mut terms = GraspTerms {
        param: param_eval(model, g, target, w, grad.as_deref_mut()),
        ..Default::default()
    };
    terms.chamfer = weighted(&mut grad, dof, w.lambda4, |g| {
        chamfer_eval(model, &state, &chamfer.attachments, &chamfer.points, g)
    });
    terms.spen = weighted(&mut grad, dof, w.lambda5, |g| spen_eval(model, &state, g));
    if let (Some(cloud), true) = (cloud, w.lambda6 > 0.0) {
        terms.pen = weighted(&mut grad, dof, w.lambda6, |g| {
            pen_eval(model, &state, cloud, w.pen_unit, g).loss
        });
    }
    terms.total =
        terms.param + w.lambda4 * terms.chamfer + w.lambda5 * terms.spen + w.lambda6 * terms.pen;
    terms
}

/// `param_loss + λ4·chamfer_loss + λ5·spen_loss + λ6·pen_loss / pen_unit²`
/// for one pair.
pub fn grasp_loss(
    model: &HandModel,
    g: &HandPose,
    target: &HandPose,
    cloud: &ObjectCloud,
    w: &LossWeights,
) -> Result<f64> {
    check_pair(model, g, target)?;
    w.validate()?;
    let chamfer = ChamferTarget::new(model, target, w);
    Ok(grasp_terms(model, g, target, &chamfer, Some(cloud), w, None).total)
}

/// Selects a loss for [`loss_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Rotation,
    Param,
    Chamfer,
    Pen,
    Spen,
    VanDist,
    TtaDist,
    AbTta,
    Grasp,
}

impl LossKind {
    pub const ALL: [LossKind; 9] = [
        LossKind::Rotation,
        LossKind::Param,
        LossKind::Chamfer,
        LossKind::Pen,
        LossKind::Spen,
        LossKind::VanDist,
        LossKind::TtaDist,
        LossKind::AbTta,
        LossKind::Grasp,
    ];

    fn needs_reference(self) -> bool {
        matches!(
            self,
            LossKind::Rotation
                | LossKind::Param
                | LossKind::Chamfer
                | LossKind::TtaDist
                | LossKind::AbTta
                | LossKind::Grasp
        )
    }

    fn needs_cloud(self) -> bool {
        matches!(
            self,
            LossKind::Pen
                | LossKind::VanDist
                | LossKind::TtaDist
                | LossKind::AbTta
                | LossKind::Grasp
        )
    }
}

/// Everything a loss may need besides the pose being differentiated.
///
/// `reference` is the ground-truth pose for regression losses and the coarse
/// pose for the refinement losses.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub model: &'a HandModel,
    pub reference: Option<&'a HandPose>,
    pub cloud: Option<&'a ObjectCloud>,
    pub weights: &'a LossWeights,
}

impl<'a> LossInputs<'a> {
    fn require(&self, kind: LossKind) -> Result<(Option<&'a HandPose>, Option<&'a ObjectCloud>)> {
        if kind.needs_reference() && self.reference.is_none() {
            return Err(Error::InvalidInput(format!(
                "{kind:?} loss needs a reference pose"
            )));
        }
        if kind.needs_cloud() && self.cloud.is_none() {
            return Err(Error::InvalidInput(format!(
                "{kind:?} loss needs an object cloud"
            )));
        }
        Ok((self.reference, self.cloud))
    }
}

/// Value and gradient of the selected loss at `pose`.
pub fn loss_gradient(
    kind: LossKind,
    inputs: &LossInputs<'_>,
    pose: &HandPose,
) -> Result<(f64, PoseGrad)> {
    let model = inputs.model;
    let w = inputs.weights;
    w.validate()?;
    if pose.joints.len() != model.dof() {
        return Err(Error::Dimension {
            what: "joint angles",
            expected: model.dof(),
            actual: pose.joints.len(),
        });
    }
    let norm = quat_norm(&pose.rotation);
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::InvalidInput("rotation must be nonzero".into()));
    }
    let (reference, cloud) = inputs.require(kind)?;
    if let Some(r) = reference {
        r.check_against(model)?;
    }
    let state = HandState::of_pose(model, pose);
    let mut grad = PoseGrad::zeros(model.dof());
    let value = match kind {
        LossKind::Rotation => {
            let (v, g) = rotation_term(&pose.rotation, &reference.unwrap().rotation);
            grad.rotation = g;
            v
        }
        LossKind::Param => param_eval(model, pose, reference.unwrap(), w, Some(&mut grad)),
        LossKind::Chamfer => {
            let target = ChamferTarget::new(model, reference.unwrap(), w);
            chamfer_eval(
                model,
                &state,
                &target.attachments,
                &target.points,
                Some(&mut grad),
            )
        }
        LossKind::Pen => pen_eval(model, &state, cloud.unwrap(), 1.0, Some(&mut grad)).loss,
        LossKind::Spen => spen_eval(model, &state, Some(&mut grad)),
        LossKind::VanDist => dist_eval(
            model,
            &state,
            cloud.unwrap(),
            &ContactAnchors::none(model),
            w.tau,
            Some(&mut grad),
        ),
        LossKind::TtaDist | LossKind::AbTta => {
            let cloud = cloud.unwrap();
            let anchors = ContactAnchors::of_pose(model, reference.unwrap(), cloud, w.tau);
            if kind == LossKind::TtaDist {
                dist_eval(model, &state, cloud, &anchors, w.tau, Some(&mut grad))
            } else {
                tta_terms(model, &state, cloud, &anchors, w, Some(&mut grad)).total
            }
        }
        LossKind::Grasp => {
            let target = ChamferTarget::new(model, reference.unwrap(), w);
            grasp_terms(
                model,
                pose,
                reference.unwrap(),
                &target,
                cloud,
                w,
                Some(&mut grad),
            )
            .total
        }
    };
    Ok((value, grad))
}

/// The discrete choices the selected loss makes at `pose`: nearest-point
/// indices, indicator gates, active capsules and active self-collision pairs.
/// The analytic gradient equals the derivative of the loss on any
/// neighborhood where this signature is constant.
pub fn discrete_signature(
    kind: LossKind,
    inputs: &LossInputs<'_>,
    pose: &HandPose,
) -> Result<Vec<u64>> {
    let model = inputs.model;
    let w = inputs.weights;
    let (reference, cloud) = inputs.require(kind)?;
    let state = HandState::of_pose(model, pose);
    let mut sig = Vec::new();
    let rot = |sig: &mut Vec<u64>| {
        let (rb, _) = unit(&pose.rotation);
        let (tb, _) = unit(&reference.unwrap().rotation);
        let dot: f64 = (0..4).map(|k| rb[k] * tb[k]).sum();
        sig.push((dot > 0.0) as u64 + 2 * (dot < 0.0) as u64);
    };
    let param = |sig: &mut Vec<u64>| {
        let r = reference.unwrap();
        let ws = model.workspace();
        for k in 0..3 {
            let d = (pose.translation[k] - r.translation[k]) / (ws.upper[k] - ws.lower[k]);
            sig.push((d.abs() < w.smooth_l1_beta) as u64 + 2 * (d > 0.0) as u64);
        }
        for (j, joint) in model.joints().iter().enumerate() {
            let d = (pose.joints[j] - r.joints[j]) / joint.range();
            sig.push((d.abs() < w.smooth_l1_beta) as u64 + 2 * (d > 0.0) as u64);
        }
        rot(sig);
    };
    let chamfer = |sig: &mut Vec<u64>| {
        let target = ChamferTarget::new(model, reference.unwrap(), w);
        let pts = state.points(&target.attachments);
        let ta = crate::geometry::KdTree::build(&pts);
        let tb = crate::geometry::KdTree::build(&target.points);
        sig.extend(pts.iter().map(|p| tb.nearest(p).unwrap().0 as u64));
        sig.extend(
            target
                .points
                .iter()
                .map(|q| ta.nearest(q).unwrap().0 as u64),
        );
    };
    let pen = |sig: &mut Vec<u64>| {
        let caps = world_capsules(model, &state);
        for (i, _, c) in inside_points(&caps, cloud.unwrap()) {
            sig.push(i as u64);
            sig.push(c as u64);
        }
        // also the clamp state of the segment parameter
        for (i, _, c) in inside_points(&caps, cloud.unwrap()) {
            let u = crate::math::segment_param(&caps[c].a, &caps[c].b, &cloud.unwrap().points()[i]);
            sig.push((u <= 0.0) as u64 + 2 * (u >= 1.0) as u64);
        }
    };
    let spen = |sig: &mut Vec<u64>| {
        let pts = state.points(&model.keypoint_attachments());
        for (k, pair) in model.self_pairs().iter().enumerate() {
            if (pts[pair.i] - pts[pair.j]).norm() < pair.min_separation {
                sig.push(k as u64);
            }
        }
    };
    let dist = |sig: &mut Vec<u64>, anchors: &ContactAnchors| {
        for (i, p) in state
            .points(&model.keypoint_attachments())
            .iter()
            .enumerate()
        {
            let (j, d) = cloud.unwrap().nearest(p);
            sig.push(j as u64);
            sig.push((anchors.gate[i] || d < w.tau) as u64);
        }
    };
    match kind {
        LossKind::Rotation => rot(&mut sig),
        LossKind::Param => param(&mut sig),
        LossKind::Chamfer => chamfer(&mut sig),
        LossKind::Pen => pen(&mut sig),
        LossKind::Spen => spen(&mut sig),
        LossKind::VanDist => dist(&mut sig, &ContactAnchors::none(model)),
        LossKind::TtaDist | LossKind::AbTta => {
            let anchors = ContactAnchors::of_pose(model, reference.unwrap(), cloud.unwrap(), w.tau);
            dist(&mut sig, &anchors);
            if kind == LossKind::AbTta {
                sig.push(u64::MAX);
                pen(&mut sig);
                sig.push(u64::MAX);
                spen(&mut sig);
            }
        }
        LossKind::Grasp => {
            param(&mut sig);
            sig.push(u64::MAX);
            chamfer(&mut sig);
            sig.push(u64::MAX);
            spen(&mut sig);
            if w.lambda6 > 0.0 && cloud.is_some() {
                sig.push(u64::MAX);
                pen(&mut sig);
            }
        }
    }
    Ok(sig)
}

/// Value of the selected loss at `pose` through the same evaluator as
/// [`loss_gradient`], without validating the rotation norm.
pub fn loss_value(kind: LossKind, inputs: &LossInputs<'_>, pose: &HandPose) -> Result<f64> {
    let model = inputs.model;
    let w = inputs.weights;
    let (reference, cloud) = inputs.require(kind)?;
    let state = HandState::of_pose(model, pose);
    Ok(match kind {
        LossKind::Rotation => rotation_term(&pose.rotation, &reference.unwrap().rotation).0,
        LossKind::Param => param_eval(model, pose, reference.unwrap(), w, None),
        LossKind::Chamfer => {
            let target = ChamferTarget::new(model, reference.unwrap(), w);
            chamfer_eval(model, &state, &target.attachments, &target.points, None)
        }
        LossKind::Pen => pen_eval(model, &state, cloud.unwrap(), 1.0, None).loss,
        LossKind::Spen => spen_eval(model, &state, None),
        LossKind::VanDist => dist_eval(
            model,
            &state,
            cloud.unwrap(),
            &ContactAnchors::none(model),
            w.tau,
            None,
        ),
        LossKind::TtaDist | LossKind::AbTta => {
            let cloud = cloud.unwrap();
            let anchors = ContactAnchors::of_pose(model, reference.unwrap(), cloud, w.tau);
            if kind == LossKind::TtaDist {
                dist_eval(model, &state, cloud, &anchors, w.tau, None)
            } else {
                tta_terms(model, &state, cloud, &anchors, w, None).total
            }
        }
        LossKind::Grasp => {
            let target = ChamferTarget::new(model, reference.unwrap(), w);
            grasp_terms(model, pose, reference.unwrap(), &target, cloud, w, None).total
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_cloud;
    use crate::hand::parse_hand_config;
    use approx::assert_relative_eq;

    fn single_capsule() -> HandModel {
        parse_hand_config(
            r#"{"dof":0,"links":[{"name":"l","parent":null}],"joints":[],
            "capsules":[{"link":"l","a":[0,0,-0.05],"b":[0,0,0.05],"radius":0.02}],
            "keypoints":[{"link":"l","offset":[0,0,0],"radius":0.005},
                         {"link":"l","offset":[0,0,0],"radius":0.005}],
            "workspace_box":{"lower":[-1,-1,-1],"upper":[1,1,1]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn rotation_loss_examples() {
        let r = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(rotation_loss(&r, &r).unwrap(), 0.0);
        assert_eq!(rotation_loss(&r, &[-0.5, -0.5, -0.5, -0.5]).unwrap(), 0.0);
        assert_relative_eq!(
            rotation_loss(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(rotation_loss(&[2.0, 0.0, 0.0, 0.0], &r).is_err());
    }

    #[test]
    fn rotation_gradient_vanishes_at_target() {
        let (_, g) = rotation_term(&[0.5, 0.5, 0.5, 0.5], &[0.5, 0.5, 0.5, 0.5]);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn smooth_l1_closed_form() {
        let model = single_capsule();
        let w = LossWeights::default();
        let g = model.rest_pose();
        let mut h = g.clone();
        // Δ = 0.05 normalized in x (range 2 m)
        h.translation.x = 0.1;
        let v = param_loss(&model, &g, &h, &w).unwrap();
        assert_relative_eq!(v, 10.0 * (0.05f64.powi(2) / 0.2) / 3.0, epsilon = 1e-14);
        assert_eq!(param_loss(&model, &g, &g, &w).unwrap(), 0.0);
    }

    #[test]
    fn pen_single_point_at_center() {
        let model = single_capsule();
        let cloud = build_cloud(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)], None).unwrap();
        let v = pen_loss(&model, &model.rest_pose(), &cloud).unwrap();
        assert_relative_eq!(v, 0.02 * 0.02 / 2.0, epsilon = 1e-16);
    }

    #[test]
    fn spen_coincident_keypoints() {
        // sibling links are not excluded; same-link keypoints are
        let model = parse_hand_config(
            r#"{"dof":0,"links":[{"name":"root","parent":null},
                {"name":"a","parent":"root"},{"name":"b","parent":"root"}],"joints":[],
            "capsules":[{"link":"root","a":[0,0,0],"b":[0,0,0.1],"radius":0.01}],
            "keypoints":[{"link":"a","offset":[0,0,0],"radius":0.005},
                         {"link":"b","offset":[0,0,0],"radius":0.005}],
            "workspace_box":{"lower":[-1,-1,-1],"upper":[1,1,1]}}"#,
        )
        .unwrap();
        assert_relative_eq!(
            spen_loss(&model, &model.rest_pose()).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        assert_eq!(
            spen_loss(&single_capsule(), &single_capsule().rest_pose()).unwrap(),
            0.0
        );
    }

    #[test]
    fn distance_loss_examples() {
        let model = single_capsule();
        let far = build_cloud(vec![Vec3::new(1.0, 0.0, 0.0)], None).unwrap();
        let g = model.rest_pose();
        assert_eq!(van_dist_loss(&model, &g, &far, 0.01).unwrap(), 0.0);
        let near = build_cloud(vec![Vec3::new(0.005, 0.0, 0.0)], None).unwrap();
        assert_relative_eq!(
            van_dist_loss(&model, &g, &near, 0.01).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        assert_eq!(
            tta_dist_loss(&model, &g, &g, &near, 0.01).unwrap(),
            van_dist_loss(&model, &g, &near, 0.01).unwrap()
        );
        let mut moved = g.clone();
        moved.translation.x = -0.045;
        assert_eq!(van_dist_loss(&model, &moved, &near, 0.01).unwrap(), 0.0);
        assert_relative_eq!(
            tta_dist_loss(&model, &moved, &g, &near, 0.01).unwrap(),
            0.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ab_tta_weights_recompose() {
        let model = single_capsule();
        let g = model.rest_pose();
        let cloud = build_cloud(vec![Vec3::new(0.005, 0.0, 0.0)], None).unwrap();
        let w = LossWeights::default();
        let expect = 5.0 * pen_loss(&model, &g, &cloud).unwrap() / (w.pen_unit * w.pen_unit)
            + 3.0 * tta_dist_loss(&model, &g, &g, &cloud, w.tau).unwrap()
            + 5.0 * spen_loss(&model, &g).unwrap();
        assert_relative_eq!(
            ab_tta_loss(&model, &g, &g, &cloud, &w).unwrap(),
            expect,
            epsilon = 1e-15
        );
    }

    #[test]
    fn weights_validate() {
        let mut w = LossWeights::default();
        assert!(w.validate().is_ok());
        w.tau = 0.0;
        assert!(w.validate().is_err());
        let w = LossWeights {
            lambda4: -1.0,
            ..Default::default()
        };
        assert!(w.validate().unwrap_err().to_string().contains("lambda4"));
    }
}
