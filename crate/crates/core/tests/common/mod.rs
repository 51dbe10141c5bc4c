#![allow(dead_code)]

use graspkit::hand::{parse_hand_config, HandModel, HandPose};
use graspkit::math::{quat_normalize, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn shadow() -> HandModel {
    parse_hand_config(include_str!("../../../../configs/shadow22.json")).unwrap()
}

pub fn pinch() -> HandModel {
    parse_hand_config(include_str!("../../../../configs/pinch2.json")).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n: f64 = q.iter().map(|c: &f64| c * c).sum::<f64>().sqrt();
        if n > 0.2 && n < 1.0 {
            return quat_normalize(&q).unwrap();
        }
    }
}

/// Random in-limit pose with translation inside `extent` of the origin.
pub fn random_pose(model: &HandModel, rng: &mut ChaCha8Rng, extent: f64) -> HandPose {
    HandPose {
        rotation: random_quat(rng),
        translation: Vec3::new(
            rng.gen_range(-extent..extent),
            rng.gen_range(-extent..extent),
            rng.gen_range(-extent..extent),
        ),
        joints: model
            .joints()
            .iter()
            .map(|j| rng.gen_range(j.lower..j.upper))
            .collect(),
    }
}

/// Central finite differences of `f` over the flat pose parameters.
pub fn finite_difference(pose: &HandPose, h: f64, f: impl Fn(&HandPose) -> f64) -> Vec<f64> {
    let base = pose.to_params();
    (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] += h;
            let plus = f(&HandPose::from_params(&p));
            p[k] = base[k] - h;
            let minus = f(&HandPose::from_params(&p));
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Relative agreement with a small absolute floor scaled by the gradient size.
pub fn agrees(analytic: &[f64], fd: &[f64], rel: f64) -> Result<(), String> {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, (a, f)) in analytic.iter().zip(fd).enumerate() {
        let tol = rel * f.abs().max(1e-4 * scale).max(1e-9);
        if (a - f).abs() > tol {
            return Err(format!(
                "coordinate {k}: analytic {a:e} vs fd {f:e} (tol {tol:e})"
            ));
        }
    }
    Ok(())
}

use graspkit::geometry::{synth_object, ObjectCloud, ObjectKind};
use graspkit::losses::{
    discrete_signature, loss_gradient, loss_value, LossInputs, LossKind, LossWeights,
};

/// A pose, a nearby reference pose and a sphere cloud whose surface passes
/// close to one of the hand keypoints, so contact and penetration terms fire.
pub fn loss_scene(model: &HandModel, rng: &mut ChaCha8Rng) -> (HandPose, HandPose, ObjectCloud) {
    let pose = random_pose(model, rng, 0.1);
    let mut reference = pose.clone();
    reference.translation += Vec3::new(
        rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
        rng.gen_range(-0.01..0.01),
    );
    for (q, j) in reference.joints.iter_mut().zip(model.joints()) {
        *q = (*q + rng.gen_range(-0.2..0.2)).clamp(j.lower, j.upper);
    }
    let mut r = reference.rotation;
    for c in r.iter_mut() {
        *c += rng.gen_range(-0.1..0.1);
    }
    reference.rotation = quat_normalize(&r).unwrap();

    let kps = graspkit::hand::keypoints_and_surface(model, &pose, 1, 0)
        .unwrap()
        .keypoints;
    let anchor = kps[rng.gen_range(0..kps.len())];
    let radius = rng.gen_range(0.02..0.05);
    let dir = random_quat(rng);
    let dir = Vec3::new(dir[1], dir[2], dir[3]).normalize();
    let center = anchor + dir * radius * rng.gen_range(0.7..1.1);
    let sphere = synth_object(&ObjectKind::Sphere { radius }, 400, rng.gen()).unwrap();
    let cloud = sphere.transformed(&graspkit::math::Mat3::identity(), &center);
    (pose, reference, cloud)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub configurations: usize,
    pub coordinates: usize,
    /// Coordinates where the discrete structure changes within ±h.
    pub skipped: usize,
    /// Coordinates where the step-h difference itself has not converged
    /// (it moves by more than the tolerance when h shrinks tenfold), which
    /// happens next to the singular set of a distance function.
    pub unresolved: usize,
    /// Largest relative error among the compared coordinates.
    pub worst_relative: f64,
}

/// Compares `loss_gradient` with central differences (step `h`) on
/// `configs` random scenes. Coordinates whose discrete structure changes
/// within ±h are skipped and counted.
pub fn fd_check_loss(
    model: &HandModel,
    kind: LossKind,
    configs: usize,
    seed: u64,
    h: f64,
    rel: f64,
) -> Result<FdStats, String> {
    let mut rng = rng(seed);
    let weights = LossWeights {
        lambda6: 50.0,
        chamfer_samples: 48,
        ..LossWeights::default()
    };
    let mut stats = FdStats::default();
    while stats.configurations < configs {
        let (pose, reference, cloud) = loss_scene(model, &mut rng);
        let inputs = LossInputs {
            model,
            reference: Some(&reference),
            cloud: Some(&cloud),
            weights: &weights,
        };
        let (_, grad) = loss_gradient(kind, &inputs, &pose).map_err(|e| e.to_string())?;
        let analytic = grad.to_vec();
        let base = pose.to_params();
        let sig = discrete_signature(kind, &inputs, &pose).unwrap();
        let central = |k: usize, step: f64| {
            let mut p = base.clone();
            p[k] = base[k] + step;
            let plus = HandPose::from_params(&p);
            p[k] = base[k] - step;
            let minus = HandPose::from_params(&p);
            let same = discrete_signature(kind, &inputs, &plus).unwrap() == sig
                && discrete_signature(kind, &inputs, &minus).unwrap() == sig;
            let v = (loss_value(kind, &inputs, &plus).unwrap()
                - loss_value(kind, &inputs, &minus).unwrap())
                / (2.0 * step);
            (v, same)
        };
        let mut fd = vec![0.0; base.len()];
        let mut usable = vec![true; base.len()];
        for k in 0..base.len() {
            let (v, same) = central(k, h);
            fd[k] = v;
            usable[k] = same;
        }
        let scale = fd
            .iter()
            .zip(&usable)
            .filter(|(_, u)| **u)
            .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
        for k in 0..base.len() {
            if !usable[k] {
                stats.skipped += 1;
                continue;
            }
            stats.coordinates += 1;
            let denom = fd[k].abs().max(1e-4 * scale).max(1e-12);
            let err = (analytic[k] - fd[k]).abs() / denom;
            if err > rel {
                let (fine, _) = central(k, h / 10.0);
                if (fine - fd[k]).abs() / denom > rel / 2.0
                    && (analytic[k] - fine).abs() < (analytic[k] - fd[k]).abs()
                {
                    stats.unresolved += 1;
                    continue;
                }
                return Err(format!(
                    "{kind:?} configuration {} coordinate {k}: analytic {:e} vs fd {:e}",
                    stats.configurations, analytic[k], fd[k]
                ));
            }
            stats.worst_relative = stats.worst_relative.max(err);
        }
        stats.configurations += 1;
    }
    Ok(stats)
}
