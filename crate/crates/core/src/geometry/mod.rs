//! Object clouds, capsule signed distances, chamfer distance.

mod kdtree;
mod loaders;
mod synth;

pub use kdtree::{nearest_brute, KdTree};
pub use loaders::{load_cloud, parse_obj, parse_ply, parse_xyz, write_ply, CloudFormat};
pub use synth::{synth_object, ObjectKind};

use crate::error::{Error, Result};
use crate::hand::{HandModel, HandPose, HandState};
use crate::math::{segment_param, Vec3};

/// Object surface points with optional unit normals and an eager spatial index.
#[derive(Debug, Clone)]
pub struct ObjectCloud {
    index: KdTree,
    normals: Option<Vec<Vec3>>,
    centroid: Vec3,
    radius: f64,
}

impl ObjectCloud {
    pub fn points(&self) -> &[Vec3] {
        self.index.points()
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    /// Largest distance from the centroid to a point.
    pub fn bounding_radius(&self) -> f64 {
        self.radius
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Nearest object point to `q`: index and Euclidean distance.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let (i, d2) = self.index.nearest(q).expect("cloud is nonempty");
        (i, d2.sqrt())
    }

    /// Applies a rigid transform to points and normals.
    pub fn transformed(&self, rotation: &crate::math::Mat3, translation: &Vec3) -> ObjectCloud {
        let pts: Vec<Vec3> = self
            .points()
            .iter()
            .map(|p| rotation * p + translation)
            .collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| rotation * n).collect());
        build_cloud(pts, normals).expect("transform keeps the cloud valid")
    }
}

/// Validates points (and normals) and builds the spatial index.
pub fn build_cloud(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<ObjectCloud> {
    if points.is_empty() {
        return Err(Error::InvalidInput("object cloud has no points".into()));
    }
    if let Some(row) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "object cloud row {row} has a non-finite coordinate"
        )));
    }
    if let Some(ns) = &normals {
        if ns.len() != points.len() {
            return Err(Error::Dimension {
                what: "normals",
                expected: points.len(),
                actual: ns.len(),
            });
        }
        if let Some(row) = ns
            .iter()
            .position(|n| !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > 1e-6)
        {
            return Err(Error::InvalidInput(format!(
                "normal at row {row} is not unit length"
            )));
        }
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let radius = points
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max);
    Ok(ObjectCloud {
        index: KdTree::build(&points),
        normals,
        centroid,
        radius,
    })
}

/// A capsule placed in the world.
#[derive(Debug, Clone, Copy)]
pub struct WorldCapsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl WorldCapsule {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let u = segment_param(&self.a, &self.b, p);
        (p - (self.a + (self.b - self.a) * u)).norm() - self.radius
    }
}

pub fn world_capsules(model: &HandModel, state: &HandState) -> Vec<WorldCapsule> {
    model
        .capsules()
        .iter()
        .map(|c| {
            let t = &state.links[c.link];
            WorldCapsule {
                a: t.apply(&c.a),
                b: t.apply(&c.b),
                radius: c.radius,
            }
        })
        .collect()
}

/// Signed distance of `p` to a union of capsules with the minimizing capsule.
///
/// Ties go to the lowest capsule index.
pub fn capsule_union_sdf(caps: &[WorldCapsule], p: &Vec3) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in caps.iter().enumerate() {
        let s = c.signed_distance(p);
        if s < best.0 {
            best = (s, i);
        }
    }
    best
}

/// Signed distance and its derivatives with respect to the capsule endpoints.
///
/// On the axis itself the direction is undefined and both derivatives are 0.
pub fn capsule_sdf_grad(c: &WorldCapsule, p: &Vec3) -> (f64, Vec3, Vec3) {
    let u = segment_param(&c.a, &c.b, p);
    let closest = c.a + (c.b - c.a) * u;
    let diff = p - closest;
    let d = diff.norm();
    if d == 0.0 {
        return (-c.radius, Vec3::zeros(), Vec3::zeros());
    }
    // envelope: the clamped parameter is optimal, so only the explicit dependence counts
    let n = diff / d;
    (d - c.radius, -n * (1.0 - u), -n * u)
}

/// Signed distance from `point` to the posed capsule hand (positive outside).
pub fn signed_distance_to_hand(model: &HandModel, pose: &HandPose, point: &Vec3) -> Result<f64> {
    pose.check_against(model)?;
    if model.capsules().is_empty() {
        return Err(Error::InvalidInput("hand has no capsules".into()));
    }
    let state = HandState::of_pose(model, pose);
    Ok(capsule_union_sdf(&world_capsules(model, &state), point).0)
}

fn one_sided(a: &[Vec3], b: &KdTree) -> f64 {
    a.iter()
        .map(|p| b.nearest(p).expect("nonempty").1)
        .sum::<f64>()
        / a.len() as f64
}

/// Symmetric chamfer distance with squared distances and means (m²).
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "chamfer distance of an empty set".into(),
        ));
    }
    let ta = KdTree::build(a);
    let tb = KdTree::build(b);
    Ok(one_sided(a, &tb) + one_sided(b, &ta))
}

/// Chamfer distance and its gradient with respect to the points of `a`.
pub fn chamfer_with_grad(a: &[Vec3], b: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "chamfer distance of an empty set".into(),
        ));
    }
    let ta = KdTree::build(a);
    let tb = KdTree::build(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut grad = vec![Vec3::zeros(); a.len()];
    let mut forward = 0.0;
    for (i, p) in a.iter().enumerate() {
        let (j, d2) = tb.nearest(p).expect("nonempty");
        forward += d2;
        grad[i] += (p - b[j]) * (2.0 / na);
    }
    let mut backward = 0.0;
    for q in b {
        let (i, d2) = ta.nearest(q).expect("nonempty");
        backward += d2;
        grad[i] += (a[i] - q) * (2.0 / nb);
    }
    Ok((forward / na + backward / nb, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::parse_hand_config;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_capsule_hand() -> HandModel {
        parse_hand_config(
            r#"{"dof":0,"links":[{"name":"l","parent":null}],"joints":[],
            "capsules":[{"link":"l","a":[0,0,0],"b":[0,0,1],"radius":0.1}],
            "keypoints":[],"workspace_box":{"lower":[-1,-1,-1],"upper":[1,1,1]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn capsule_sdf_closed_forms() {
        let m = single_capsule_hand();
        let pose = m.rest_pose();
        let s = signed_distance_to_hand(&m, &pose, &Vec3::new(0.5, 0.0, 0.5)).unwrap();
        assert_relative_eq!(s, 0.4, epsilon = 1e-12);
        let s = signed_distance_to_hand(&m, &pose, &Vec3::new(0.0, 0.0, 0.3)).unwrap();
        assert_relative_eq!(s, -0.1, epsilon = 1e-12);
        // beyond the cap the distance is to the endpoint
        let s = signed_distance_to_hand(&m, &pose, &Vec3::new(0.0, 0.0, 1.5)).unwrap();
        assert_relative_eq!(s, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn cloud_rejects_bad_rows() {
        let err =
            build_cloud(vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)], None).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(build_cloud(Vec::new(), None).is_err());
        let err =
            build_cloud(vec![Vec3::zeros()], Some(vec![Vec3::new(2.0, 0.0, 0.0)])).unwrap_err();
        assert!(err.to_string().contains("row 0"), "{err}");
    }

    #[test]
    fn single_point_cloud() {
        let c = build_cloud(vec![Vec3::new(0.1, 0.2, 0.3)], None).unwrap();
        let (i, d) = c.nearest(&Vec3::new(0.1, 0.2, 0.0));
        assert_eq!(i, 0);
        assert_relative_eq!(d, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn chamfer_closed_forms() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer_distance(&b, &b).unwrap(), 0.0);
        assert!(chamfer_distance(&a, &[]).is_err());
    }

    #[test]
    fn chamfer_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = |n| -> Vec<Vec3> {
            (0..n)
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect()
        };
        for _ in 0..10 {
            let a = pts(64);
            let b = pts(64);
            let brute = |x: &[Vec3], y: &[Vec3]| {
                x.iter()
                    .map(|p| {
                        y.iter()
                            .map(|q| (p - q).norm_squared())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .sum::<f64>()
                    / x.len() as f64
            };
            let expect = brute(&a, &b) + brute(&b, &a);
            assert_eq!(chamfer_distance(&a, &b).unwrap(), expect);
            assert_eq!(
                chamfer_distance(&a, &b).unwrap(),
                chamfer_distance(&b, &a).unwrap()
            );
            assert_eq!(chamfer_with_grad(&a, &b).unwrap().0, expect);
        }
    }

    #[test]
    fn sdf_gradient_matches_finite_difference() {
        let c = WorldCapsule {
            a: Vec3::new(0.1, -0.2, 0.0),
            b: Vec3::new(0.4, 0.3, 0.2),
            radius: 0.05,
        };
        let p = Vec3::new(0.3, 0.1, -0.2);
        let (_, da, db) = capsule_sdf_grad(&c, &p);
        let h = 1e-6;
        for k in 0..3 {
            let mut cp = c;
            let mut cm = c;
            cp.a[k] += h;
            cm.a[k] -= h;
            let fd = (cp.signed_distance(&p) - cm.signed_distance(&p)) / (2.0 * h);
            assert_relative_eq!(da[k], fd, epsilon = 1e-8);
            let mut cp = c;
            let mut cm = c;
            cp.b[k] += h;
            cm.b[k] -= h;
            let fd = (cp.signed_distance(&p) - cm.signed_distance(&p)) / (2.0 * h);
            assert_relative_eq!(db[k], fd, epsilon = 1e-8);
        }
    }
}
