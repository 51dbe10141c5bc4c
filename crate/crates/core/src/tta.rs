//! Adversarial-balanced test-time refinement of individual grasps.
//!
//! A pose is refined by plain gradient descent on
//! `α1·pen + α2·dist + α3·spen` in normalized coordinates: translation and
//! joints are stepped in their `[0, 1]` parameterization (so one step size
//! serves every block) and the rotation 4-vector directly. The translation
//! gradient is scaled by `β_t`; with `β_t = 0` the root translation never
//! moves. Contact anchors are taken once from the coarse pose and held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::ObjectCloud;
use crate::hand::{HandModel, HandPose, HandState, PoseGrad};
use crate::losses::{tta_terms, ContactAnchors, LossWeights, TtaTerms};
use crate::math::quat_normalize;
use crate::metrics::contact_count;

/// Consecutive loss increases after which refinement stops.
pub const DIVERGENCE_PATIENCE: usize = 10;

/// Which attraction term refinement uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceTerm {
    /// Keypoints in contact in the coarse pose stay attracted.
    #[default]
    Generalized,
    /// Only keypoints currently within `τ` are attracted.
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtaConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Scale on the translation gradient, in `[0, 1]`.
    pub beta_t: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Contact threshold (m).
    pub tau: f64,
    /// Length unit (m) of the penetration term.
    pub pen_unit: f64,
    /// Stop once the loss changes by less than this between steps.
    pub tolerance: f64,
    pub distance: DistanceTerm,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 1e-3,
            beta_t: 0.0,
            alpha1: 5.0,
            alpha2: 3.0,
            alpha3: 5.0,
            tau: 0.01,
            pen_unit: 0.001,
            tolerance: 1e-10,
            distance: DistanceTerm::Generalized,
        }
    }
}

impl TtaConfig {
    /// The penetration + vanilla-distance ablation: no anchors and a free
    /// root translation.
    pub fn pen_vdis() -> Self {
        Self {
            beta_t: 1.0,
            distance: DistanceTerm::Vanilla,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidInput(
                "refinement needs at least one step".into(),
            ));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidInput("step size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_t) {
            return Err(Error::InvalidInput(format!(
                "beta_t {} is outside [0, 1]",
                self.beta_t
            )));
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be a nonnegative number"
                )));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        if !(self.pen_unit.is_finite() && self.pen_unit > 0.0) {
            return Err(Error::InvalidInput("pen_unit must be positive".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::InvalidInput("tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            tau: self.tau,
            pen_unit: self.pen_unit,
            ..LossWeights::default()
        }
    }

    fn anchors(&self, model: &HandModel, coarse: &HandPose, cloud: &ObjectCloud) -> ContactAnchors {
        match self.distance {
            DistanceTerm::Generalized => ContactAnchors::of_pose(model, coarse, cloud, self.tau),
            DistanceTerm::Vanilla => ContactAnchors::none(model),
        }
    }
}

/// Why refinement stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    StepLimit,
    Converged,
    Diverged,
}

/// Early-stopping rule: converged when the objective changes by less than
/// the tolerance, diverged after [`DIVERGENCE_PATIENCE`] consecutive increases.
#[derive(Debug, Clone)]
struct StopMonitor {
    tolerance: f64,
    previous: Option<f64>,
    rising: usize,
}

impl StopMonitor {
    fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            previous: None,
            rising: 0,
        }
    }

    fn observe(&mut self, total: f64) -> Option<StopReason> {
        let previous = self.previous.replace(total)?;
        if (total - previous).abs() < self.tolerance {
            return Some(StopReason::Converged);
        }
        self.rising = if total > previous { self.rising + 1 } else { 0 };
        (self.rising >= DIVERGENCE_PATIENCE).then_some(StopReason::Diverged)
    }
}

/// Objective and diagnostics at one iterate; step 0 is the coarse pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub pen: f64,
    pub dist: f64,
    pub spen: f64,
    /// Deepest object-point penetration (m).
    pub max_depth: f64,
    /// Keypoints within `τ` of the object.
    pub contacts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// Lowest-objective iterate (never worse than the coarse pose).
    pub pose: HandPose,
    pub best_step: usize,
    pub initial: TtaTerms,
    pub best: TtaTerms,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

/// Applies one normalized-coordinate descent step in place.
fn descend(model: &HandModel, pose: &mut HandPose, grad: &PoseGrad, cfg: &TtaConfig) {
    for k in 0..4 {
        pose.rotation[k] -= cfg.step_size * grad.rotation[k];
    }
    pose.rotation = quat_normalize(&pose.rotation).unwrap_or(pose.rotation);
    if cfg.beta_t > 0.0 {
        // u = (t - lo) / w, so ∂L/∂u = w ∂L/∂t and Δt = w Δu
        let ws = model.workspace();
        for a in 0..3 {
            let width = ws.upper[a] - ws.lower[a];
            pose.translation[a] -= cfg.step_size * cfg.beta_t * width * width * grad.translation[a];
        }
    }
    for ((q, g), j) in pose.joints.iter_mut().zip(&grad.joints).zip(model.joints()) {
        let width = j.range();
        *q = (*q - cfg.step_size * width * width * g).clamp(j.lower, j.upper);
    }
}

/// Refines one coarse grasp against `cloud`.
pub fn refine(
    model: &HandModel,
    coarse: &HandPose,
    cloud: &ObjectCloud,
    cfg: &TtaConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    coarse.check_against(model)?;
    let anchors = cfg.anchors(model, coarse, cloud);
    refine_anchored(model, coarse, cloud, &anchors, cfg)
}

/// Refinement with explicitly chosen anchored keypoints; `cfg.distance` is
/// ignored.
pub fn refine_anchored(
    model: &HandModel,
    coarse: &HandPose,
    cloud: &ObjectCloud,
    anchors: &ContactAnchors,
    cfg: &TtaConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    coarse.check_against(model)?;
    if anchors.gate.len() != model.keypoints().len() {
        return Err(Error::Dimension {
            what: "contact anchors",
            expected: model.keypoints().len(),
            actual: anchors.gate.len(),
        });
    }
    let weights = cfg.weights();
    let dof = model.dof();

    let mut pose = coarse.clone();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best = (pose.clone(), 0, TtaTerms::default());
    let mut initial = TtaTerms::default();
    let mut monitor = StopMonitor::new(cfg.tolerance);
    let mut stop = StopReason::StepLimit;

    for step in 0..=cfg.steps {
        let state = HandState::of_pose(model, &pose);
        let mut grad = PoseGrad::zeros(dof);
        let terms = tta_terms(model, &state, cloud, anchors, &weights, Some(&mut grad));
        trace.push(TraceRow {
            step,
            total: terms.total,
            pen: terms.pen,
            dist: terms.dist,
            spen: terms.spen,
            max_depth: terms.max_depth,
            contacts: contact_count(model, &state, cloud, cfg.tau),
        });
        if step == 0 {
            initial = terms;
            best.2 = terms;
        } else if terms.total < best.2.total {
            best = (pose.clone(), step, terms);
        }
        if let Some(reason) = monitor.observe(terms.total) {
            stop = reason;
            break;
        }
        if step == cfg.steps {
            break;
        }
        if !grad.to_vec().iter().all(|g| g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite refinement gradient at step {step}"
            )));
        }
        descend(model, &mut pose, &grad, cfg);
    }

    let (pose, best_step, best_terms) = best;
    Ok(Refinement {
        pose,
        best_step,
        initial,
        best: best_terms,
        stop,
        trace,
    })
}

/// Aggregates over a refined set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefineSummary {
    pub count: usize,
    pub mean_initial_loss: f64,
    pub mean_final_loss: f64,
    pub mean_initial_depth: f64,
    pub mean_final_depth: f64,
    pub converged: usize,
    pub diverged: usize,
}

/// Refines every grasp of a set independently, preserving order.
pub fn refine_set(
    model: &HandModel,
    poses: &[HandPose],
    cloud: &ObjectCloud,
    cfg: &TtaConfig,
    exec: Exec,
) -> Result<(Vec<Refinement>, RefineSummary)> {
    cfg.validate()?;
    let results = exec
        .map(poses, |p| refine(model, p, cloud, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = results.len().max(1) as f64;
    let mean = |f: &dyn Fn(&Refinement) -> f64| results.iter().map(f).sum::<f64>() / n;
    let summary = RefineSummary {
        count: results.len(),
        mean_initial_loss: mean(&|r| r.initial.total),
        mean_final_loss: mean(&|r| r.best.total),
        mean_initial_depth: mean(&|r| r.initial.max_depth),
        mean_final_depth: mean(&|r| r.best.max_depth),
        converged: results
            .iter()
            .filter(|r| r.stop == StopReason::Converged)
            .count(),
        diverged: results
            .iter()
            .filter(|r| r.stop == StopReason::Diverged)
            .count(),
    };
    Ok((results, summary))
}
