//! Synthetic grasp fixtures over analytic objects.
//!
//! A fixture grasp is built by placing the palm (whose normal is the root
//! frame's +y axis) against the object along an approach direction and
//! curling each finger toward the palm until it first touches the cloud.
//! The perturbed counterpart keeps curling every touching finger until it
//! sits a few millimeters inside the object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{synth_object, world_capsules, ObjectCloud, ObjectKind};
use crate::hand::{HandModel, HandPose, HandState};
use crate::losses::inside_points;
use crate::math::{matrix_to_quat, quat_mul, Mat3, Quat, Vec3};
use crate::metrics::max_penetration;

/// Gap left between the palm and the object when placing the hand (m).
const PALM_GAP: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureParams {
    /// Object surface points.
    pub points: usize,
    /// Range of the inward finger push (m).
    pub push_min: f64,
    pub push_max: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            points: 2048,
            push_min: 0.005,
            push_max: 0.008,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraspFixture {
    pub name: String,
    pub object: ObjectKind,
    pub cloud: ObjectCloud,
    /// Closed grasp on the true surface.
    pub grasp: HandPose,
    /// Same hand with every touching finger pushed `push` into the object.
    pub perturbed: HandPose,
    /// Finger penetration depth of the perturbation (m).
    pub push: f64,
}

/// Rotation taking the hand's palm normal (+y) onto `-approach` with a roll
/// of `roll` radians about the approach axis.
fn facing_rotation(approach: &Vec3, roll: f64) -> Quat {
    let n = -approach.normalize();
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::z()
    };
    let z = (helper - n * n.dot(&helper)).normalize();
    let x = n.cross(&z);
    let frame = Mat3::from_columns(&[x, n, z]);
    let base = matrix_to_quat(&frame);
    let half = 0.5 * roll;
    let axis = approach.normalize();
    let spin = [
        half.cos(),
        axis.x * half.sin(),
        axis.y * half.sin(),
        axis.z * half.sin(),
    ];
    quat_mul(&spin, &base)
}

/// Open hand with its palm centered over the object along `approach`,
/// backed off until nothing penetrates.
pub fn place_palm(
    model: &HandModel,
    cloud: &ObjectCloud,
    approach: &Vec3,
    roll: f64,
) -> Result<HandPose> {
    let approach = approach
        .try_normalize(1e-12)
        .ok_or_else(|| Error::InvalidInput("approach direction is zero".into()))?;
    let rotation = facing_rotation(&approach, roll);
    let mut pose = model.rest_pose();
    pose.rotation = rotation;
    let rot = crate::math::quat_to_matrix(&rotation);
    // palm center: mean of the palm-link keypoints in the root frame
    let root_points: Vec<Vec3> = model
        .keypoints()
        .iter()
        .filter(|k| k.link == model.order()[0])
        .map(|k| k.offset)
        .collect();
    let palm = if root_points.is_empty() {
        Vec3::zeros()
    } else {
        root_points.iter().sum::<Vec3>() / root_points.len() as f64
    };
    let support = cloud
        .points()
        .iter()
        .map(|p| p.dot(&approach))
        .fold(f64::NEG_INFINITY, f64::max);
    let place = |s: f64, pose: &mut HandPose| pose.translation = approach * s - rot * palm;
    let penetrates = |s: f64| {
        let mut p = pose.clone();
        place(s, &mut p);
        max_penetration(model, &HandState::of_pose(model, &p), cloud) > 0.0
    };
    let mut s = support + PALM_GAP;
    let mut guard = 0;
    while penetrates(s) {
        s += 0.002;
        guard += 1;
        if guard > 200 {
            return Err(Error::InvalidInput(
                "could not place the palm clear of the object".into(),
            ));
        }
    }
    place(s, &mut pose);
    Ok(pose)
}

/// A chain of links hanging off one child of the root.
#[derive(Debug, Clone)]
struct Finger {
    joints: Vec<usize>,
    capsules: Vec<usize>,
    keypoints: Vec<usize>,
}

fn fingers(model: &HandModel) -> Vec<Finger> {
    let root = model.order()[0];
    let links = model.links();
    let branch = |mut l: usize| -> Option<usize> {
        if l == root {
            return None;
        }
        while let Some(p) = links[l].parent {
            if p == root {
                return Some(l);
            }
            l = p;
        }
        None
    };
    let mut out: Vec<(usize, Finger)> = Vec::new();
    for l in 0..links.len() {
        let Some(b) = branch(l) else { continue };
        let idx = match out.iter().position(|(k, _)| *k == b) {
            Some(i) => i,
            None => {
                out.push((
                    b,
                    Finger {
                        joints: Vec::new(),
                        capsules: Vec::new(),
                        keypoints: Vec::new(),
                    },
                ));
                out.len() - 1
            }
        };
        let f = &mut out[idx].1;
        for &j in model.link_ancestry(l) {
            if !f.joints.contains(&j) {
                f.joints.push(j);
            }
        }
        f.capsules.extend(
            model
                .capsules()
                .iter()
                .enumerate()
                .filter(|(_, c)| c.link == l)
                .map(|(i, _)| i),
        );
        f.keypoints.extend(
            model
                .keypoints()
                .iter()
                .enumerate()
                .filter(|(_, k)| k.link == l)
                .map(|(i, _)| i),
        );
    }
    out.into_iter()
        .map(|(_, mut f)| {
            f.joints.sort_unstable();
            f
        })
        .filter(|f| !f.joints.is_empty() && !f.capsules.is_empty() && !f.keypoints.is_empty())
        .collect()
}

/// Joint targets that curl `finger` toward the palm normal (+y of the root).
fn closing_targets(model: &HandModel, finger: &Finger, open: &[f64]) -> Vec<(usize, f64)> {
    let attach = model.keypoint_attachments();
    let height = |q: &[f64]| {
        let s = HandState::compute(model, &[1.0, 0.0, 0.0, 0.0], &Vec3::zeros(), q);
        finger
            .keypoints
            .iter()
            .map(|&k| s.point(&attach[k]).y)
            .sum::<f64>()
    };
    let h = 1e-4;
    finger
        .joints
        .iter()
        .filter_map(|&j| {
            let mut q = open.to_vec();
            q[j] += h;
            let up = height(&q);
            q[j] -= 2.0 * h;
            let slope = (up - height(&q)) / (2.0 * h);
            let joint = &model.joints()[j];
            if slope > 1e-3 {
                Some((j, joint.upper))
            } else if slope < -1e-3 {
                Some((j, joint.lower))
            } else {
                None
            }
        })
        .collect()
}

fn finger_depth(model: &HandModel, pose: &HandPose, finger: &Finger, cloud: &ObjectCloud) -> f64 {
    let state = HandState::of_pose(model, pose);
    let all = world_capsules(model, &state);
    let caps: Vec<_> = finger.capsules.iter().map(|&c| all[c]).collect();
    inside_points(&caps, cloud)
        .iter()
        .map(|&(_, d, _)| d)
        .fold(0.0, f64::max)
}

/// Smallest closure in `[from, 1]` at which the finger's depth reaches
/// `depth` (first contact when `depth` is 0), or `None` if it never does.
fn closure_reaching(
    model: &HandModel,
    base: &HandPose,
    finger: &Finger,
    targets: &[(usize, f64)],
    cloud: &ObjectCloud,
    from: f64,
    depth: f64,
) -> Option<f64> {
    let at = |s: f64| {
        let mut p = base.clone();
        for &(j, goal) in targets {
            p.joints[j] = base.joints[j] + s * (goal - base.joints[j]);
        }
        p
    };
    let reached = |s: f64| {
        let d = finger_depth(model, &at(s), finger, cloud);
        if depth == 0.0 {
            d > 0.0
        } else {
            d >= depth
        }
    };
    let step = 0.01;
    let mut lo = from;
    let mut hi = None;
    let mut s = from;
    while s < 1.0 {
        s = (s + step).min(1.0);
        if reached(s) {
            hi = Some(s);
            break;
        }
        lo = s;
    }
    let mut hi = hi?;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(if depth == 0.0 { lo } else { hi })
}

fn apply_closure(pose: &mut HandPose, base: &HandPose, targets: &[(usize, f64)], s: f64) {
    for &(j, goal) in targets {
        pose.joints[j] = base.joints[j] + s * (goal - base.joints[j]);
    }
}

/// Closes every finger of `open` until it touches `cloud`, and a copy of the
/// result with each touching finger pushed `push` meters further in.
pub fn close_hand(
    model: &HandModel,
    open: &HandPose,
    cloud: &ObjectCloud,
    push: f64,
) -> Result<(HandPose, HandPose)> {
    open.check_against(model)?;
    let mut grasp = open.clone();
    let mut pushed = open.clone();
    for finger in fingers(model) {
        let targets = closing_targets(model, &finger, &open.joints);
        if targets.is_empty() {
            continue;
        }
        let touch =
            closure_reaching(model, open, &finger, &targets, cloud, 0.0, 0.0).unwrap_or(1.0);
        apply_closure(&mut grasp, open, &targets, touch);
        // fingers that miss the object, or slide along it without reaching
        // the push depth, keep their touching closure
        let deeper = if touch < 1.0 {
            closure_reaching(model, open, &finger, &targets, cloud, touch, push).unwrap_or(touch)
        } else {
            touch
        };
        apply_closure(&mut pushed, open, &targets, deeper);
    }
    Ok((grasp, pushed))
}

/// One fixture: place the palm, close onto the object, push the fingers in.
#[allow(clippy::too_many_arguments)]
pub fn make_fixture(
    model: &HandModel,
    name: &str,
    object: ObjectKind,
    approach: &Vec3,
    roll: f64,
    push: f64,
    seed: u64,
    params: &FixtureParams,
) -> Result<GraspFixture> {
    let cloud = synth_object(&object, params.points, seed)?;
    let open = place_palm(model, &cloud, approach, roll)?;
    let (grasp, perturbed) = close_hand(model, &open, &cloud, push)?;
    Ok(GraspFixture {
        name: name.to_string(),
        object,
        cloud,
        grasp,
        perturbed,
        push,
    })
}

/// Object and approach of the `i`-th suite entry.
fn suite_entry(i: usize, rng: &mut ChaCha8Rng) -> (String, ObjectKind) {
    match i % 3 {
        0 => (
            format!("sphere-{i:02}"),
            ObjectKind::Sphere {
                radius: rng.gen_range(0.035..0.05),
            },
        ),
        1 => (
            format!("box-{i:02}"),
            ObjectKind::Box {
                half: [
                    rng.gen_range(0.03..0.045),
                    rng.gen_range(0.03..0.045),
                    rng.gen_range(0.03..0.045),
                ],
            },
        ),
        _ => (
            format!("cylinder-{i:02}"),
            ObjectKind::Cylinder {
                radius: rng.gen_range(0.03..0.04),
                half_height: rng.gen_range(0.05..0.07),
            },
        ),
    }
}

/// `count` fixtures cycling sphere, box, cylinder; deterministic per seed.
pub fn fixture_suite(
    model: &HandModel,
    count: usize,
    seed: u64,
    params: &FixtureParams,
    exec: Exec,
) -> Result<Vec<GraspFixture>> {
    if !(params.push_min > 0.0 && params.push_max >= params.push_min) {
        return Err(Error::InvalidInput(
            "push range must be positive and ordered".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<_> = (0..count)
        .map(|i| {
            let (name, kind) = suite_entry(i, &mut rng);
            let z: f64 = rng.gen_range(-0.6..0.6);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let approach = Vec3::new(s * phi.cos(), s * phi.sin(), z);
            let roll = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let push = rng.gen_range(params.push_min..=params.push_max);
            let object_seed: u64 = rng.gen();
            (name, kind, approach, roll, push, object_seed)
        })
        .collect();
    exec.map(&specs, |(name, kind, approach, roll, push, object_seed)| {
        make_fixture(
            model,
            name,
            *kind,
            approach,
            *roll,
            *push,
            *object_seed,
            params,
        )
    })
    .into_iter()
    .collect()
}
