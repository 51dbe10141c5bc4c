//! Dynamic-static matching training on a learnable grasp table.
//!
//! A [`GraspTable`] holds `N` directly learnable poses for one object in
//! logit form (raw rotation 4-vector, logistic translation and joints), so
//! every decoded pose is valid by construction. Training follows three
//! stages: dynamic matching (a Hungarian solve per epoch, regression losses
//! only), static-matching warm-up (the assignment recorded at the end of the
//! dynamic stage is frozen), and static-matching penetration training (frozen
//! assignment plus penetration and vanilla-distance losses). Optimization is
//! plain gradient descent with global gradient-norm clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fixtures::{close_hand, place_palm, FixtureParams};
use crate::geometry::{synth_object, ObjectCloud, ObjectKind};
use crate::hand::{HandModel, HandPose, HandState, PoseGrad};
use crate::losses::{grasp_terms, tta_terms, ChamferTarget, ContactAnchors, LossWeights};
use crate::matching::{cost_matrix, hungarian, matching_instability, Assignment, CostWeights};
use crate::math::{logit, quat_norm, quat_normalize, sigmoid, Quat, Vec3};
use crate::metrics::{contact_count, max_penetration, pose_similarity, Q1Params};
use crate::tta::{refine, TtaConfig};

/// Learnable poses of one object, stored as unconstrained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspTable {
    /// Raw rotation 4-vectors (L2-normalized on decode).
    pub rotations: Vec<Quat>,
    /// Translation logits over the workspace box.
    pub translations: Vec<[f64; 3]>,
    /// Joint logits over the joint limits.
    pub joints: Vec<Vec<f64>>,
}

/// Smallest rotation 4-vector norm kept during optimization.
const MIN_ROTATION_NORM: f64 = 1e-3;

fn gaussian_unit_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q: Quat = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Some(u) = quat_normalize(&q) {
            if quat_norm(&q) > 1e-6 {
                return u;
            }
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        if let Some(u) = v.try_normalize(1e-9) {
            return u;
        }
    }
}

fn logit_of(x: f64, lo: f64, hi: f64) -> f64 {
    let u = ((x - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
    logit(u)
}

impl GraspTable {
    /// `n` poses with translations on a sphere of `radius` around `center`,
    /// uniform random rotations and mid-range joints.
    pub fn init(
        model: &HandModel,
        center: &Vec3,
        radius: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput(
                "a grasp table needs at least one pose".into(),
            ));
        }
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidInput(
                "initial radius must be nonnegative".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<HandPose> = (0..n)
            .map(|_| {
                let rotation = gaussian_unit_quat(&mut rng);
                let translation = center + unit_vector(&mut rng) * radius;
                HandPose {
                    rotation,
                    translation,
                    joints: model.joints().iter().map(|j| j.mid()).collect(),
                }
            })
            .collect();
        Ok(Self::from_poses(model, &poses))
    }

    /// Encodes poses; values outside the workspace or limits are pinned just
    /// inside them.
    pub fn from_poses(model: &HandModel, poses: &[HandPose]) -> Self {
        let ws = model.workspace();
        Self {
            rotations: poses.iter().map(|p| p.rotation).collect(),
            translations: poses
                .iter()
                .map(|p| {
                    std::array::from_fn(|a| logit_of(p.translation[a], ws.lower[a], ws.upper[a]))
                })
                .collect(),
            joints: poses
                .iter()
                .map(|p| {
                    p.joints
                        .iter()
                        .zip(model.joints())
                        .map(|(q, j)| logit_of(*q, j.lower, j.upper))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn pose(&self, model: &HandModel, i: usize) -> HandPose {
        let ws = model.workspace();
        let r = self.rotations[i];
        let rotation = quat_normalize(&r).unwrap_or([1.0, 0.0, 0.0, 0.0]);
        HandPose {
            rotation,
            translation: Vec3::from_fn(|a, _| {
                ws.lower[a] + (ws.upper[a] - ws.lower[a]) * sigmoid(self.translations[i][a])
            }),
            joints: self.joints[i]
                .iter()
                .zip(model.joints())
                .map(|(z, j)| j.lower + j.range() * sigmoid(*z))
                .collect(),
        }
    }

    pub fn poses(&self, model: &HandModel) -> Vec<HandPose> {
        (0..self.len()).map(|i| self.pose(model, i)).collect()
    }

    /// Gradient over the table parameters of query `i` from a pose gradient.
    fn chain(&self, model: &HandModel, i: usize, g: &PoseGrad) -> Vec<f64> {
        let ws = model.workspace();
        let norm = quat_norm(&self.rotations[i]);
        let mut out = Vec::with_capacity(7 + model.dof());
        // pose gradients are already tangent to the unit sphere
        out.extend(g.rotation.iter().map(|c| c / norm));
        for a in 0..3 {
            let s = sigmoid(self.translations[i][a]);
            out.push(g.translation[a] * (ws.upper[a] - ws.lower[a]) * s * (1.0 - s));
        }
        for (k, j) in model.joints().iter().enumerate() {
            let s = sigmoid(self.joints[i][k]);
            out.push(g.joints[k] * j.range() * s * (1.0 - s));
        }
        out
    }

    fn apply(&mut self, i: usize, step: &[f64]) {
        for (c, s) in self.rotations[i].iter_mut().zip(step) {
            *c -= s;
        }
        // keep the 4-vector away from the origin; its direction is what counts
        let n = quat_norm(&self.rotations[i]);
        if n < MIN_ROTATION_NORM {
            let scale = if n > 0.0 { MIN_ROTATION_NORM / n } else { 0.0 };
            self.rotations[i] = self.rotations[i].map(|c| c * scale);
            if n == 0.0 {
                self.rotations[i] = [MIN_ROTATION_NORM, 0.0, 0.0, 0.0];
            }
        }
        for a in 0..3 {
            self.translations[i][a] -= step[4 + a];
        }
        for (k, z) in self.joints[i].iter_mut().enumerate() {
            *z -= step[7 + k];
        }
    }
}

/// Epoch counts and per-stage weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSchedule {
    pub t0: usize,
    pub t1: usize,
    pub t2: usize,
    pub steps_per_epoch: usize,
    pub step_size: f64,
    /// Step size of the penetration-training stage, whose clipped steps
    /// must stay small next to the contact scale.
    pub smpt_step_size: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Weights of the dynamic and warm-up stages (`lambda6` is ignored
    /// there); run configurations supply them separately.
    #[serde(skip)]
    pub regress: LossWeights,
    /// Penetration weight of the penetration-training stage.
    pub smpt_lambda6: f64,
    /// Vanilla-distance weight of the penetration-training stage.
    pub smpt_distance: f64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            t0: 15,
            t1: 5,
            t2: 5,
            steps_per_epoch: 50,
            step_size: 0.2,
            smpt_step_size: 0.005,
            clip_norm: 1.0,
            regress: LossWeights::default(),
            smpt_lambda6: 50.0,
            smpt_distance: 10.0,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        self.regress.validate()?;
        if self.steps_per_epoch == 0 {
            return Err(Error::InvalidInput(
                "an epoch needs at least one step".into(),
            ));
        }
        for (name, v) in [
            ("step_size", self.step_size),
            ("smpt_step_size", self.smpt_step_size),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if self.t2 > 0 && !(self.smpt_lambda6.is_finite() && self.smpt_lambda6 > 0.0) {
            return Err(Error::InvalidInput(
                "the penetration stage needs lambda6 > 0".into(),
            ));
        }
        if !(self.smpt_distance.is_finite() && self.smpt_distance >= 0.0) {
            return Err(Error::InvalidInput(
                "smpt_distance must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.t0 + self.t1 + self.t2
    }
}

/// Training stage of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Dynamic matching.
    Dmt,
    /// Static-matching warm-up.
    Smw,
    /// Static-matching penetration training.
    Smpt,
}

/// Loss weights in effect for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochWeights {
    pub weights: LossWeights,
    /// Weight of the vanilla distance loss.
    pub distance: f64,
}

/// One record per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Loss components averaged over matched pairs and the epoch's steps.
    pub param: f64,
    pub chamfer: f64,
    pub spen: f64,
    pub pen: f64,
    pub dist: f64,
    pub total: f64,
    /// Share of ground truths whose matched prediction changed.
    pub instability: f64,
    /// Mean pairwise similarity of the table at the end of the epoch.
    pub similarity: f64,
    /// Mean and maximum penetration depth over the table (cm).
    pub mean_pen_cm: f64,
    pub max_pen_cm: f64,
    /// Hungarian solves executed during the epoch.
    pub hungarian_solves: usize,
}

/// Matched-pair losses summed over one gradient step.
#[derive(Debug, Clone, Copy, Default)]
struct StepLosses {
    param: f64,
    chamfer: f64,
    spen: f64,
    pen: f64,
    dist: f64,
    total: f64,
}

/// One object's training problem.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub name: String,
    pub cloud: ObjectCloud,
    pub ground_truths: Vec<HandPose>,
}

/// Ground truths on a synthetic primitive; see [`toy_task_for_cloud`].
pub fn toy_task(
    model: &HandModel,
    object: ObjectKind,
    points: usize,
    count: usize,
    seed: u64,
) -> Result<ToyTask> {
    let cloud = synth_object(&object, points, seed)?;
    let name = match object {
        ObjectKind::Sphere { .. } => "sphere",
        ObjectKind::Box { .. } => "box",
        ObjectKind::Cylinder { .. } => "cylinder",
    };
    toy_task_for_cloud(model, name, cloud, count, seed)
}

/// Refinement attempts (each with a fresh roll) per ground truth.
const GROUND_TRUTH_ATTEMPTS: usize = 8;

/// Ground-truth grasps from evenly spread approach directions. Each one
/// places the palm, closes the fingers a few millimeters into the object and
/// refines the result with AB-TTA; an attempt is kept once it passes the
/// quality gates (penetration within the Q1 threshold and at least three
/// keypoint contacts), otherwise another roll is tried and, failing all, the
/// shallowest attempt is kept.
pub fn toy_task_for_cloud(
    model: &HandModel,
    name: impl Into<String>,
    cloud: ObjectCloud,
    count: usize,
    seed: u64,
) -> Result<ToyTask> {
    if count == 0 {
        return Err(Error::InvalidInput(
            "a toy task needs at least one ground truth".into(),
        ));
    }
    let tta = TtaConfig::default();
    let gates = Q1Params::default();
    let push = FixtureParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let dirs = crate::metrics::fibonacci_sphere(count);
    let name = name.into();
    let mut ground_truths = Vec::with_capacity(count);
    for (i, d) in dirs.iter().enumerate() {
        let mut best: Option<(f64, HandPose)> = None;
        for _ in 0..GROUND_TRUTH_ATTEMPTS {
            let roll = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let depth = rng.gen_range(push.push_min..=push.push_max);
            let open = place_palm(model, &cloud, d, roll)?;
            let (_, pushed) = close_hand(model, &open, &cloud, depth)?;
            let pose = refine(model, &pushed, &cloud, &tta)?.pose;
            let state = HandState::of_pose(model, &pose);
            let depth = max_penetration(model, &state, &cloud);
            let contacts = contact_count(model, &state, &cloud, tta.tau);
            if depth <= gates.penetration_threshold && contacts >= 3 {
                best = Some((depth, pose));
                break;
            }
            if best.as_ref().is_none_or(|(b, _)| depth < *b) {
                best = Some((depth, pose));
            }
        }
        let (depth, pose) = best.expect("at least one attempt");
        if depth > gates.penetration_threshold {
            log::warn!(
                "{name}: ground truth {i} keeps {:.2} mm penetration after {GROUND_TRUTH_ATTEMPTS} attempts",
                depth * 1e3
            );
        }
        ground_truths.push(pose);
    }
    Ok(ToyTask {
        name,
        cloud,
        ground_truths,
    })
}

/// Trainer state: the table plus an instrumented Hungarian counter.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub model: &'a HandModel,
    pub task: &'a ToyTask,
    pub table: GraspTable,
    pub cost: CostWeights,
    /// Hungarian solves executed so far.
    pub hungarian_solves: usize,
    chamfer: Vec<ChamferTarget>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a HandModel,
        task: &'a ToyTask,
        table: GraspTable,
        cost: CostWeights,
        regress: &LossWeights,
    ) -> Result<Self> {
        regress.validate()?;
        cost.validate()?;
        if task.ground_truths.is_empty() || table.is_empty() {
            return Err(Error::InvalidInput(
                "training needs poses and ground truths".into(),
            ));
        }
        for g in &task.ground_truths {
            g.check_against(model)?;
        }
        let chamfer = task
            .ground_truths
            .iter()
            .map(|g| ChamferTarget::new(model, g, regress))
            .collect();
        Ok(Self {
            model,
            task,
            table,
            cost,
            hungarian_solves: 0,
            chamfer,
        })
    }

    /// Hungarian assignment of the current table to the ground truths.
    pub fn solve_matching(&mut self) -> Result<Assignment> {
        let preds = self.table.poses(self.model);
        let cost = cost_matrix(self.model, &preds, &self.task.ground_truths, &self.cost)?;
        self.hungarian_solves += 1;
        hungarian(&cost)
    }

    /// One gradient step over all matched pairs; returns the pair-averaged
    /// losses before the step.
    fn step(
        &mut self,
        assignment: &Assignment,
        w: &EpochWeights,
        step_size: f64,
        clip: f64,
    ) -> Result<StepLosses> {
        let pairs = &assignment.pairs;
        let k = pairs.len().max(1) as f64;
        let anchors = ContactAnchors::none(self.model);
        let mut losses = StepLosses::default();
        let mut grads: Vec<(usize, Vec<f64>)> = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            let pose = self.table.pose(self.model, i);
            let mut g = PoseGrad::zeros(self.model.dof());
            let terms = grasp_terms(
                self.model,
                &pose,
                &self.task.ground_truths[j],
                &self.chamfer[j],
                Some(&self.task.cloud),
                &w.weights,
                Some(&mut g),
            );
            losses.param += terms.param / k;
            losses.chamfer += terms.chamfer / k;
            losses.spen += terms.spen / k;
            losses.pen += terms.pen / k;
            losses.total += terms.total / k;
            if w.distance > 0.0 {
                let state = HandState::of_pose(self.model, &pose);
                let dist_weights = LossWeights {
                    alpha1: 0.0,
                    alpha2: w.distance,
                    alpha3: 0.0,
                    ..w.weights
                };
                let d = tta_terms(
                    self.model,
                    &state,
                    &self.task.cloud,
                    &anchors,
                    &dist_weights,
                    Some(&mut g),
                );
                losses.dist += d.dist / k;
                losses.total += d.total / k;
            }
            grads.push((
                i,
                self.table
                    .chain(self.model, i, &g)
                    .into_iter()
                    .map(|v| v / k)
                    .collect(),
            ));
        }
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite training gradient".into()));
        }
        let scale = if norm > clip {
            step_size * clip / norm
        } else {
            step_size
        };
        for (i, g) in grads {
            let step: Vec<f64> = g.iter().map(|v| v * scale).collect();
            self.table.apply(i, &step);
        }
        Ok(losses)
    }

    /// Runs `steps` gradient steps under `assignment` and records the epoch.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epoch(
        &mut self,
        epoch: usize,
        stage: Stage,
        assignment: &Assignment,
        previous: Option<&Assignment>,
        w: &EpochWeights,
        schedule: &StageSchedule,
        solves_before: usize,
    ) -> Result<EpochRecord> {
        let step_size = match stage {
            Stage::Smpt => schedule.smpt_step_size,
            Stage::Dmt | Stage::Smw => schedule.step_size,
        };
        let mut sum = StepLosses::default();
        for _ in 0..schedule.steps_per_epoch {
            let l = self.step(assignment, w, step_size, schedule.clip_norm)?;
            sum.param += l.param;
            sum.chamfer += l.chamfer;
            sum.spen += l.spen;
            sum.pen += l.pen;
            sum.dist += l.dist;
            sum.total += l.total;
        }
        let s = schedule.steps_per_epoch as f64;
        let poses = self.table.poses(self.model);
        let depths: Vec<f64> = poses
            .iter()
            .map(|p| {
                max_penetration(
                    self.model,
                    &HandState::of_pose(self.model, p),
                    &self.task.cloud,
                ) * 100.0
            })
            .collect();
        Ok(EpochRecord {
            epoch,
            stage,
            param: sum.param / s,
            chamfer: sum.chamfer / s,
            spen: sum.spen / s,
            pen: sum.pen / s,
            dist: sum.dist / s,
            total: sum.total / s,
            instability: match previous {
                Some(prev) => matching_instability(prev, assignment)?,
                None => 0.0,
            },
            similarity: pose_similarity(self.model, &poses)?,
            mean_pen_cm: depths.iter().sum::<f64>() / depths.len() as f64,
            max_pen_cm: depths.iter().cloned().fold(0.0, f64::max),
            hungarian_solves: self.hungarian_solves - solves_before,
        })
    }

    /// Dynamic-matching epoch: one solve, then regression steps.
    pub fn dmt_epoch(
        &mut self,
        epoch: usize,
        previous: Option<&Assignment>,
        w: &EpochWeights,
        schedule: &StageSchedule,
    ) -> Result<(Assignment, EpochRecord)> {
        let before = self.hungarian_solves;
        let assignment = self.solve_matching()?;
        let record = self.train_epoch(
            epoch,
            Stage::Dmt,
            &assignment,
            previous,
            w,
            schedule,
            before,
        )?;
        Ok((assignment, record))
    }
}

/// How a run schedules matching and penetration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TrainMode {
    /// Dynamic, then static warm-up, then static penetration training.
    Dsmt,
    /// Dynamic matching for all epochs with a fixed penetration weight.
    Dynamic { lambda6: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsmtConfig {
    pub seed: u64,
    pub queries: usize,
    /// Radius of the initialization sphere around the object centroid (m).
    pub init_radius: f64,
    pub schedule: StageSchedule,
    pub cost: CostWeights,
    pub mode: TrainMode,
}

impl Default for DsmtConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            queries: 16,
            init_radius: 0.15,
            schedule: StageSchedule::default(),
            cost: CostWeights::default(),
            mode: TrainMode::Dsmt,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Records of one stage.
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }
}

#[derive(Debug, Clone)]
pub struct DsmtRun {
    pub table: GraspTable,
    pub trace: TrainTrace,
    /// Assignment frozen for the static stages, if any ran.
    pub static_matching: Option<Assignment>,
    /// Share of ground truths whose match differs between the last dynamic
    /// epoch and the frozen snapshot (static epochs report 0 by design).
    pub snapshot_instability: Option<f64>,
}

/// Runs one training schedule on `task`; deterministic per configuration.
pub fn run_dsmt(model: &HandModel, task: &ToyTask, cfg: &DsmtConfig) -> Result<DsmtRun> {
    let schedule = &cfg.schedule;
    schedule.validate()?;
    let table = GraspTable::init(
        model,
        &task.cloud.centroid(),
        cfg.init_radius,
        cfg.queries,
        cfg.seed,
    )?;
    let mut trainer = Trainer::new(model, task, table, cfg.cost, &schedule.regress)?;
    let regress = EpochWeights {
        weights: LossWeights {
            lambda6: 0.0,
            ..schedule.regress
        },
        distance: 0.0,
    };
    let mut records = Vec::with_capacity(schedule.total_epochs());
    let mut previous: Option<Assignment> = None;
    let mut static_matching = None;
    let mut snapshot_instability = None;
    match cfg.mode {
        TrainMode::Dynamic { lambda6 } => {
            if !(lambda6.is_finite() && lambda6 >= 0.0) {
                return Err(Error::InvalidInput("lambda6 must be nonnegative".into()));
            }
            let w = EpochWeights {
                weights: LossWeights {
                    lambda6,
                    ..schedule.regress
                },
                distance: 0.0,
            };
            for epoch in 0..schedule.total_epochs() {
                let (a, r) = trainer.dmt_epoch(epoch, previous.as_ref(), &w, schedule)?;
                records.push(r);
                previous = Some(a);
            }
        }
        TrainMode::Dsmt => {
            for epoch in 0..schedule.t0 {
                let (a, r) = trainer.dmt_epoch(epoch, previous.as_ref(), &regress, schedule)?;
                records.push(r);
                previous = Some(a);
            }
            if schedule.t1 + schedule.t2 > 0 {
                let frozen = trainer.solve_matching()?;
                let smpt = EpochWeights {
                    weights: LossWeights {
                        lambda6: schedule.smpt_lambda6,
                        ..schedule.regress
                    },
                    distance: schedule.smpt_distance,
                };
                let stages = std::iter::repeat_n((Stage::Smw, regress), schedule.t1)
                    .chain(std::iter::repeat_n((Stage::Smpt, smpt), schedule.t2));
                if let Some(last) = &previous {
                    snapshot_instability = Some(matching_instability(last, &frozen)?);
                }
                for (k, (stage, w)) in stages.enumerate() {
                    let before = trainer.hungarian_solves;
                    let r = trainer.train_epoch(
                        schedule.t0 + k,
                        stage,
                        &frozen,
                        Some(&frozen),
                        &w,
                        schedule,
                        before,
                    )?;
                    records.push(r);
                }
                static_matching = Some(frozen);
            }
        }
    }
    Ok(DsmtRun {
        table: trainer.table,
        trace: TrainTrace { records },
        static_matching,
        snapshot_instability,
    })
}

/// Runs several independent configurations (e.g. seeds) concurrently.
pub fn run_many(
    model: &HandModel,
    tasks: &[(ToyTask, DsmtConfig)],
    exec: Exec,
) -> Result<Vec<DsmtRun>> {
    exec.map(tasks, |(task, cfg)| run_dsmt(model, task, cfg))
        .into_iter()
        .collect()
}
