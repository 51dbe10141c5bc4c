//! Synthetic objects with exact surface normals, centered at the origin.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_cloud, ObjectCloud};
use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectKind {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned box with half extents.
    Box {
        half: [f64; 3],
    },
    /// Cylinder along z.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
}

impl ObjectKind {
    /// Exact signed distance to the surface (negative inside).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            ObjectKind::Sphere { radius } => p.norm() - radius,
            ObjectKind::Box { half } => {
                let q = p.abs() - Vec3::from(half);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            ObjectKind::Cylinder {
                radius,
                half_height,
            } => {
                let dr = p.xy().norm() - radius;
                let dz = p.z.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ObjectKind::Sphere { radius } => radius > 0.0,
            ObjectKind::Box { half } => half.iter().all(|h| *h > 0.0),
            ObjectKind::Cylinder {
                radius,
                half_height,
            } => radius > 0.0 && half_height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "object dimensions must be positive: {self:?}"
            )))
        }
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen::<f64>() * TAU;
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Uniform surface samples of an analytic object with exact outward normals.
pub fn synth_object(kind: &ObjectKind, count: usize, seed: u64) -> Result<ObjectCloud> {
    kind.validate()?;
    if count == 0 {
        return Err(Error::InvalidInput("point count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let (p, n) = match *kind {
            ObjectKind::Sphere { radius } => {
                let n = unit(&mut rng);
                (n * radius, n)
            }
            ObjectKind::Box { half } => {
                let [hx, hy, hz] = half;
                let areas = [hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut face = 5;
                for (f, a) in areas.iter().enumerate() {
                    if pick < *a {
                        face = f;
                        break;
                    }
                    pick -= a;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vec3::new(
                    rng.gen_range(-hx..=hx),
                    rng.gen_range(-hy..=hy),
                    rng.gen_range(-hz..=hz),
                );
                p[axis] = sign * half[axis];
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (p, n)
            }
            ObjectKind::Cylinder {
                radius,
                half_height,
            } => {
                let side = TAU * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                let pick = rng.gen::<f64>() * (side + 2.0 * cap);
                if pick < side {
                    let phi = rng.gen::<f64>() * TAU;
                    let z = rng.gen_range(-half_height..=half_height);
                    let n = Vec3::new(phi.cos(), phi.sin(), 0.0);
                    (Vec3::new(radius * n.x, radius * n.y, z), n)
                } else {
                    let top = pick < side + cap;
                    let r = radius * rng.gen::<f64>().sqrt();
                    let phi = rng.gen::<f64>() * TAU;
                    let z = if top { half_height } else { -half_height };
                    (
                        Vec3::new(r * phi.cos(), r * phi.sin(), z),
                        Vec3::new(0.0, 0.0, z.signum()),
                    )
                }
            }
        };
        pts.push(p);
        normals.push(n);
    }
    build_cloud(pts, Some(normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_sphere_points_and_normals() {
        let c = synth_object(&ObjectKind::Sphere { radius: 1.0 }, 500, 1).unwrap();
        for (p, n) in c.points().iter().zip(c.normals().unwrap()) {
            assert_relative_eq!(p.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!((p - n).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn box_points_on_faces() {
        let kind = ObjectKind::Box { half: [0.05; 3] };
        let c = synth_object(&kind, 600, 2).unwrap();
        for (p, n) in c.points().iter().zip(c.normals().unwrap()) {
            assert!(kind.sdf(p).abs() < 1e-12);
            assert_eq!(n.iter().filter(|v| **v != 0.0).count(), 1);
            let axis = n.iamax();
            assert_relative_eq!(p[axis], 0.05 * n[axis], epsilon = 1e-15);
        }
    }

    #[test]
    fn cylinder_points_have_zero_sdf() {
        let kind = ObjectKind::Cylinder {
            radius: 0.03,
            half_height: 0.06,
        };
        let c = synth_object(&kind, 2000, 3).unwrap();
        for p in c.points() {
            assert!(kind.sdf(p).abs() < 1e-9, "{}", kind.sdf(p));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let k = ObjectKind::Sphere { radius: 0.04 };
        let a = synth_object(&k, 100, 9).unwrap();
        let b = synth_object(&k, 100, 9).unwrap();
        assert_eq!(a.points(), b.points());
        let c = synth_object(&k, 100, 10).unwrap();
        assert_ne!(a.points(), c.points());
    }
}
