//! Area-weighted surface samples on the capsule hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttachedPoint, HandModel, HandPose, HandState};
use crate::error::{Error, Result};
use crate::math::{orthonormal_basis, Vec3};

/// Draws `count` points on the capsule surfaces in link-local coordinates.
///
/// Capsules are chosen proportionally to their area, so the samples are
/// uniform over the capsule surfaces. The result depends only on the model,
/// `count` and `seed`, never on a pose.
pub fn sample_surface(model: &HandModel, count: usize, seed: u64) -> Vec<AttachedPoint> {
    let caps = model.capsules();
    if caps.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(caps.len());
    let mut total = 0.0;
    for c in caps {
        total += c.area();
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pick = rng.gen::<f64>() * total;
        let ci = cumulative
            .partition_point(|&c| c <= pick)
            .min(caps.len() - 1);
        let cap = &caps[ci];
        let axis = cap.b - cap.a;
        let h = axis.norm();
        let dir = if h > 0.0 { axis / h } else { Vec3::z() };
        let (e1, e2) = orthonormal_basis(&dir);
        let side = 2.0 * std::f64::consts::PI * cap.radius * h;
        let region = rng.gen::<f64>() * cap.area();
        let local = if region < side {
            let z = rng.gen::<f64>() * h;
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            cap.a + dir * z + (e1 * phi.cos() + e2 * phi.sin()) * cap.radius
        } else {
            let v = unit_vector(&mut rng);
            let center = if v.dot(&dir) >= 0.0 { cap.b } else { cap.a };
            center + v * cap.radius
        };
        out.push(AttachedPoint {
            link: cap.link,
            local,
        });
    }
    out
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Keypoints and surface samples of a posed hand, in world coordinates.
#[derive(Debug, Clone)]
pub struct HandPoints {
    pub keypoints: Vec<Vec3>,
    pub surface: Vec<Vec3>,
}

pub fn keypoints_and_surface(
    model: &HandModel,
    pose: &HandPose,
    surface_sample_count: usize,
    seed: u64,
) -> Result<HandPoints> {
    if surface_sample_count == 0 {
        return Err(Error::InvalidInput(
            "surface_sample_count must be at least 1".into(),
        ));
    }
    pose.check_against(model)?;
    let state = HandState::of_pose(model, pose);
    let keypoints = state.points(&model.keypoint_attachments());
    let surface = state.points(&sample_surface(model, surface_sample_count, seed));
    Ok(HandPoints { keypoints, surface })
}
