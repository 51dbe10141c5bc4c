//! Grasp quality (Q1, penetration, contact counts), set ratios, diversity
//! occupancy, pose-set similarity and top-k selection.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{world_capsules, ObjectCloud};
use crate::hand::{normalize_pose, sample_surface, HandModel, HandPose, HandState};
use crate::losses::inside_points;
use crate::math::{matrix_to_euler_xyz, orthonormal_basis, quat_to_matrix, Vec3};

pub type Wrench = Vector6<f64>;

/// Parameters of the Q1 computation and of contact counting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Q1Params {
    /// Hand–object distance below which a point counts as a contact (m).
    pub contact_threshold: f64,
    /// Grasps penetrating deeper than this have Q1 = 0 and fail η_np (m).
    pub penetration_threshold: f64,
    /// Friction coefficient μ.
    pub friction: f64,
    /// Edges of the linearized friction cone.
    pub cone_edges: usize,
    /// Sampled unit directions in wrench space.
    pub directions: usize,
    /// Multiplier on torques; `None` uses 1 / object bounding radius.
    pub torque_scale: Option<f64>,
    /// Hand surface samples used to find contacts.
    pub surface_samples: usize,
    /// Seed for surface samples and wrench-space directions.
    pub seed: u64,
    /// Polish the sampled minimum with a local descent on the sphere.
    pub refine: bool,
}

impl Default for Q1Params {
    fn default() -> Self {
        Self {
            contact_threshold: 0.01,
            penetration_threshold: 0.005,
            friction: 0.5,
            cone_edges: 8,
            directions: 1024,
            torque_scale: None,
            surface_samples: 512,
            seed: 0,
            refine: true,
        }
    }
}

impl Q1Params {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::parse(name, format!("must be > 0, got {v}")))
            }
        };
        pos("contact_threshold", self.contact_threshold)?;
        pos("penetration_threshold", self.penetration_threshold)?;
        if !(self.friction.is_finite() && self.friction >= 0.0) {
            return Err(Error::parse("friction", "must be ≥ 0"));
        }
        if self.cone_edges < 3 {
            return Err(Error::parse(
                "cone_edges",
                "need at least 3 friction-cone edges",
            ));
        }
        if self.directions == 0 {
            return Err(Error::parse("directions", "must be at least 1"));
        }
        if let Some(s) = self.torque_scale {
            pos("torque_scale", s)?;
        }
        if self.surface_samples == 0 {
            return Err(Error::parse("surface_samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// `n` deterministic unit directions in 6-D wrench space.
pub fn wrench_directions(n: usize, seed: u64) -> Vec<Wrench> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Wrench::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let norm = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out
}

/// Discretized friction-cone wrenches `[f; τ·(p − c) × f]` for contacts
/// `(point, inward normal)` around `center`.
pub fn contact_wrenches(
    contacts: &[(Vec3, Vec3)],
    center: &Vec3,
    friction: f64,
    edges: usize,
    torque_scale: f64,
) -> Vec<Wrench> {
    let mut out = Vec::with_capacity(contacts.len() * edges);
    for (p, n) in contacts {
        let (t1, t2) = orthonormal_basis(n);
        let arm = p - center;
        for k in 0..edges {
            let theta = 2.0 * PI * k as f64 / edges as f64;
            let f = n + (t1 * theta.cos() + t2 * theta.sin()) * friction;
            let tau = arm.cross(&f) * torque_scale;
            out.push(Wrench::new(f.x, f.y, f.z, tau.x, tau.y, tau.z));
        }
    }
    out
}

fn support(wrenches: &[Wrench], d: &Wrench) -> f64 {
    wrenches
        .iter()
        .map(|w| w.dot(d))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Minimum support value over sampled directions, no refinement.
pub fn q1_sampled(wrenches: &[Wrench], directions: &[Wrench]) -> f64 {
    if wrenches.is_empty() {
        return 0.0;
    }
    directions
        .iter()
        .map(|d| support(wrenches, d))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Local descent of the support function on the unit sphere, using a
/// log-sum-exp smoothing whose temperature shrinks geometrically. Returns the
/// lowest exact support value visited.
fn refine_direction(wrenches: &[Wrench], start: &Wrench) -> f64 {
    let scale = wrenches.iter().map(|w| w.norm()).fold(0.0, f64::max);
    let mut d = *start;
    let mut best = support(wrenches, &d);
    let mut temp = 0.05 * scale;
    let mut step = 0.1;
    let smooth = |d: &Wrench, t: f64| -> (f64, Wrench) {
        let vals: Vec<f64> = wrenches.iter().map(|w| w.dot(d) / t).collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut g = Wrench::zeros();
        for (w, v) in wrenches.iter().zip(&vals) {
            let e = (v - m).exp();
            z += e;
            g += w * e;
        }
        (t * (m + z.ln()), g / z)
    };
    while temp > 1e-6 * scale {
        let (mut f, mut g) = smooth(&d, temp);
        for _ in 0..60 {
            let tangent = g - d * g.dot(&d);
            if tangent.norm() < 1e-12 * scale {
                break;
            }
            let mut accepted = false;
            while step > 1e-10 {
                let cand = (d - tangent * step).normalize();
                let (fc, gc) = smooth(&cand, temp);
                if fc < f {
                    d = cand;
                    f = fc;
                    g = gc;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            best = best.min(support(wrenches, &d));
            if !accepted {
                break;
            }
        }
        temp *= 0.5;
        step = step.max(1e-3);
    }
    best
}

/// Inscribed-ball radius of the wrench hull estimated from sampled support
/// directions, optionally polished by local descent from the best samples.
/// Every value produced is the support value of an actual direction, so the
/// estimate never falls below the exact radius.
pub fn q1_from_wrenches(wrenches: &[Wrench], directions: &[Wrench], refine: bool) -> f64 {
    if wrenches.is_empty() || directions.is_empty() {
        return 0.0;
    }
    let mut scored: Vec<(f64, usize)> = directions
        .iter()
        .enumerate()
        .map(|(i, d)| (support(wrenches, d), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = scored[0].0;
    if best <= 0.0 {
        // the origin is outside the hull: not torque-balanced
        return 0.0;
    }
    if refine {
        for &(_, i) in scored.iter().take(4) {
            best = best.min(refine_direction(wrenches, &directions[i]));
        }
    }
    best.max(0.0)
}

/// Dense brute-force reference: minimum support over `count` directions.
pub fn q1_dense_oracle(wrenches: &[Wrench], count: usize, seed: u64) -> f64 {
    q1_sampled(wrenches, &wrench_directions(count, seed))
}

/// Why a grasp scored Q1 = 0, if it did for a structural reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q1Gate {
    Evaluated,
    Penetration,
    TooFewContacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q1Detail {
    pub q1: f64,
    /// Distinct object points touched by hand surface samples.
    pub contacts: usize,
    /// Deepest object-point penetration (m).
    pub max_depth: f64,
    pub gate: Q1Gate,
}

/// Deepest penetration of any object point into the posed hand (m).
pub fn max_penetration(model: &HandModel, state: &HandState, cloud: &ObjectCloud) -> f64 {
    if model.capsules().is_empty() {
        return 0.0;
    }
    let caps = world_capsules(model, state);
    inside_points(&caps, cloud)
        .iter()
        .map(|&(_, d, _)| d)
        .fold(0.0, f64::max)
}

/// Maximum penetration depth of the object cloud into the hand, in cm.
pub fn pen_depth(model: &HandModel, pose: &HandPose, cloud: &ObjectCloud) -> Result<f64> {
    pose.check_against(model)?;
    Ok(max_penetration(model, &HandState::of_pose(model, pose), cloud) * 100.0)
}

/// Number of hand keypoints closer than `tau` to the object cloud.
pub fn contact_count(model: &HandModel, state: &HandState, cloud: &ObjectCloud, tau: f64) -> usize {
    state
        .points(&model.keypoint_attachments())
        .iter()
        .filter(|p| cloud.nearest(p).1 < tau)
        .count()
}

/// Q1 with its gates and contact set.
pub fn q1_detail(
    model: &HandModel,
    pose: &HandPose,
    cloud: &ObjectCloud,
    params: &Q1Params,
) -> Result<Q1Detail> {
    params.validate()?;
    pose.check_against(model)?;
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::InvalidInput("Q1 needs an object cloud with normals".into()))?;
    let state = HandState::of_pose(model, pose);
    let max_depth = max_penetration(model, &state, cloud);

    let samples = sample_surface(model, params.surface_samples, params.seed);
    let mut touched = BTreeSet::new();
    for p in state.points(&samples) {
        let (j, d) = cloud.nearest(&p);
        if d < params.contact_threshold {
            touched.insert(j);
        }
    }
    let mut detail = Q1Detail {
        q1: 0.0,
        contacts: touched.len(),
        max_depth,
        gate: Q1Gate::Evaluated,
    };
    if max_depth > params.penetration_threshold {
        detail.gate = Q1Gate::Penetration;
        return Ok(detail);
    }
    if touched.len() < 3 {
        detail.gate = Q1Gate::TooFewContacts;
        return Ok(detail);
    }
    // wrenches are expressed in the hand-root frame, which makes the sampled
    // directions move with the grasp and Q1 exactly rigid-invariant
    let to_hand = state.root.rotation.transpose();
    let center = cloud.centroid();
    let pts = cloud.points();
    let contacts: Vec<(Vec3, Vec3)> = touched
        .iter()
        .map(|&j| (to_hand * (pts[j] - center), to_hand * -normals[j]))
        .collect();
    let torque_scale = params
        .torque_scale
        .unwrap_or_else(|| 1.0 / cloud.bounding_radius().max(1e-12));
    let wrenches = contact_wrenches(
        &contacts,
        &Vec3::zeros(),
        params.friction,
        params.cone_edges,
        torque_scale,
    );
    let dirs = wrench_directions(params.directions, params.seed);
    detail.q1 = q1_from_wrenches(&wrenches, &dirs, params.refine);
    Ok(detail)
}

pub fn q1(
    model: &HandModel,
    pose: &HandPose,
    cloud: &ObjectCloud,
    params: &Q1Params,
) -> Result<f64> {
    Ok(q1_detail(model, pose, cloud, params)?.q1)
}

/// `(η_np, η_tb)` in percent: share of grasps penetrating less than the
/// threshold and share with Q1 > 0.
pub fn set_ratios(grasps: &[GraspMetrics], penetration_threshold: f64) -> (f64, f64) {
    if grasps.is_empty() {
        return (0.0, 0.0);
    }
    let n = grasps.len() as f64;
    let np = grasps
        .iter()
        .filter(|g| g.pen_cm / 100.0 < penetration_threshold)
        .count() as f64;
    let tb = grasps.iter().filter(|g| g.q1 > 0.0).count() as f64;
    (100.0 * np / n, 100.0 * tb / n)
}

/// `n` points of a Fibonacci lattice on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Fibonacci bin with the largest cosine to `v` (bin 0 for a zero vector).
pub fn direction_bin(bins: &[Vec3], v: &Vec3) -> usize {
    let n = v.norm();
    if n == 0.0 {
        return 0;
    }
    let u = v / n;
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, b) in bins.iter().enumerate() {
        let c = b.dot(&u);
        if c > best.0 {
            best = (c, i);
        }
    }
    best.1
}

fn occupancy(distinct: usize, bins: usize) -> f64 {
    (100.0 * distinct as f64 / bins as f64).min(100.0)
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        Err(Error::InvalidInput("bin count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Translation-direction occupancy over `bins` Fibonacci directions (%).
pub fn delta_t(translations: &[Vec3], center: &Vec3, bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let dirs = fibonacci_sphere(bins);
    let hit: HashSet<usize> = translations
        .iter()
        .map(|t| direction_bin(&dirs, &(t - center)))
        .collect();
    Ok(occupancy(hit.len(), bins))
}

fn quantize(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let u = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((u * bins as f64) as usize).min(bins - 1)
}

/// Euler-angle triple per rotation, each angle quantized into `bins` (%).
pub fn delta_r(rotations: &[[f64; 4]], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let hit: HashSet<[usize; 3]> = rotations
        .iter()
        .map(|r| {
            let (a, b, c) = matrix_to_euler_xyz(&quat_to_matrix(r));
            [
                quantize(a, -PI, PI, bins),
                quantize(b, -FRAC_PI_2, FRAC_PI_2, bins),
                quantize(c, -PI, PI, bins),
            ]
        })
        .collect();
    Ok(occupancy(hit.len(), bins))
}

/// Joint-angle tuple per grasp, each joint quantized over its limits (%).
pub fn delta_q(model: &HandModel, joints: &[Vec<f64>], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let mut hit = HashSet::new();
    for q in joints {
        if q.len() != model.dof() {
            return Err(Error::Dimension {
                what: "joint angles",
                expected: model.dof(),
                actual: q.len(),
            });
        }
        let key: Vec<usize> = model
            .joints()
            .iter()
            .zip(q)
            .map(|(j, v)| quantize(*v, j.lower, j.upper, bins))
            .collect();
        hit.insert(key);
    }
    Ok(occupancy(hit.len(), bins))
}

/// Mean pairwise cosine similarity of centered normalized pose vectors, with
/// every quaternion sign-aligned to the first pose. A single pose gives 1.
pub fn pose_similarity(model: &HandModel, poses: &[HandPose]) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("similarity of an empty set".into()));
    }
    let mut vecs = Vec::with_capacity(poses.len());
    for p in poses {
        vecs.push(normalize_pose(model, p)?.pose.centered_vector());
    }
    let reference: Vec<f64> = vecs[0][..4].to_vec();
    for v in vecs.iter_mut() {
        let dot: f64 = v[..4].iter().zip(&reference).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            for c in &mut v[..4] {
                *c = -*c;
            }
        }
    }
    if vecs.len() < 2 {
        return Ok(1.0);
    }
    let norms: Vec<f64> = vecs
        .iter()
        .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            total += dot / (norms[i] * norms[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Indices of the best `k` grasps: most keypoint contacts within `tau`,
/// then least penetration, then lowest index.
pub fn select_top_k(
    model: &HandModel,
    poses: &[HandPose],
    cloud: &ObjectCloud,
    k: usize,
    tau: f64,
) -> Result<Vec<usize>> {
    if k > poses.len() {
        return Err(Error::InvalidInput(format!(
            "cannot select {k} of {} grasps",
            poses.len()
        )));
    }
    let mut keyed = Vec::with_capacity(poses.len());
    for (i, p) in poses.iter().enumerate() {
        p.check_against(model)?;
        let state = HandState::of_pose(model, p);
        keyed.push((
            contact_count(model, &state, cloud, tau),
            max_penetration(model, &state, cloud),
            i,
        ));
    }
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(keyed.into_iter().take(k).map(|(_, _, i)| i).collect())
}

/// Evaluation settings for a grasp set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub q1: Q1Params,
    /// Bins ξ for the diversity metrics.
    pub bins: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            q1: Q1Params::default(),
            bins: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspMetrics {
    pub index: usize,
    pub q1: f64,
    /// Maximum penetration depth (cm).
    pub pen_cm: f64,
    /// Keypoints within the contact threshold of the object.
    pub contact_count: usize,
    /// Distinct object points touched by hand surface samples.
    pub q1_contacts: usize,
    pub q1_gate: Q1Gate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub count: usize,
    pub mean_q1: f64,
    pub eta_np: f64,
    pub eta_tb: f64,
    pub mean_pen_cm: f64,
    pub max_pen_cm: f64,
    pub mean_contact_count: f64,
    pub delta_t: f64,
    pub delta_r: f64,
    pub delta_q: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub grasps: Vec<GraspMetrics>,
    pub set: SetMetrics,
}

/// Per-grasp metrics (in parallel when `exec` allows) and set aggregates.
pub fn evaluate_set(
    model: &HandModel,
    poses: &[HandPose],
    cloud: &ObjectCloud,
    params: &EvalParams,
    exec: Exec,
) -> Result<MetricsReport> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("grasp set is empty".into()));
    }
    params.q1.validate()?;
    check_bins(params.bins)?;
    let per: Vec<Result<GraspMetrics>> = exec.map_range(poses.len(), |i| {
        let d = q1_detail(model, &poses[i], cloud, &params.q1)?;
        let state = HandState::of_pose(model, &poses[i]);
        Ok(GraspMetrics {
            index: i,
            q1: d.q1,
            pen_cm: d.max_depth * 100.0,
            contact_count: contact_count(model, &state, cloud, params.q1.contact_threshold),
            q1_contacts: d.contacts,
            q1_gate: d.gate,
        })
    });
    let grasps = per.into_iter().collect::<Result<Vec<_>>>()?;
    let n = grasps.len() as f64;
    let (eta_np, eta_tb) = set_ratios(&grasps, params.q1.penetration_threshold);
    let translations: Vec<Vec3> = poses.iter().map(|p| p.translation).collect();
    let rotations: Vec<[f64; 4]> = poses.iter().map(|p| p.rotation).collect();
    let joints: Vec<Vec<f64>> = poses.iter().map(|p| p.joints.clone()).collect();
    let set = SetMetrics {
        count: grasps.len(),
        mean_q1: grasps.iter().map(|g| g.q1).sum::<f64>() / n,
        eta_np,
        eta_tb,
        mean_pen_cm: grasps.iter().map(|g| g.pen_cm).sum::<f64>() / n,
        max_pen_cm: grasps.iter().map(|g| g.pen_cm).fold(0.0, f64::max),
        mean_contact_count: grasps.iter().map(|g| g.contact_count as f64).sum::<f64>() / n,
        delta_t: delta_t(&translations, &cloud.centroid(), params.bins)?,
        delta_r: delta_r(&rotations, params.bins)?,
        delta_q: delta_q(model, &joints, params.bins)?,
        similarity: pose_similarity(model, poses)?,
    };
    Ok(MetricsReport { grasps, set })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_points_are_unit_and_self_binned() {
        let dirs = fibonacci_sphere(16);
        for (i, d) in dirs.iter().enumerate() {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert_eq!(direction_bin(&dirs, d), i);
        }
    }

    #[test]
    fn quantize_edges() {
        assert_eq!(quantize(-PI, -PI, PI, 16), 0);
        assert_eq!(quantize(PI, -PI, PI, 16), 15);
        assert_eq!(quantize(0.0, -PI, PI, 16), 8);
    }

    #[test]
    fn octahedral_force_closure() {
        // six contacts on the axes of a unit sphere: a closed grasp
        let axes = [
            Vec3::x(),
            -Vec3::x(),
            Vec3::y(),
            -Vec3::y(),
            Vec3::z(),
            -Vec3::z(),
        ];
        let contacts: Vec<_> = axes.iter().map(|a| (*a, -*a)).collect();
        let w = contact_wrenches(&contacts, &Vec3::zeros(), 0.5, 8, 1.0);
        let dirs = wrench_directions(1024, 0);
        let q = q1_from_wrenches(&w, &dirs, true);
        assert!(q > 0.0);
        assert!(q <= q1_sampled(&w, &dirs));
        // a single contact cannot balance anything
        let one = contact_wrenches(&contacts[..1], &Vec3::zeros(), 0.5, 8, 1.0);
        assert_eq!(q1_from_wrenches(&one, &dirs, true), 0.0);
    }
}
