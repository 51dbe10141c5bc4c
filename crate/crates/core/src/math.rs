//! Small rigid-body helpers on top of nalgebra.
//!
//! Quaternions are stored scalar-first as `[w, x, y, z]`.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Rigid {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_quat(q: &Quat, translation: Vec3) -> Self {
        Self::new(quat_to_matrix(q), translation)
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Rigid {
        let rt = self.rotation.transpose();
        Rigid {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub fn quat_norm(q: &Quat) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn quat_normalize(q: &Quat) -> Option<Quat> {
    let n = quat_norm(q);
    if !(n.is_finite() && n > 0.0) {
        return None;
    }
    Some([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn quat_dot(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion of a rotation matrix (Shepperd's method), scalar part ≥ 0.
pub fn matrix_to_quat(m: &Mat3) -> Quat {
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = quat_normalize(&q).unwrap_or(IDENTITY_QUAT);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

/// Rotation about a unit axis (Rodrigues).
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let k = skew(axis);
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Two unit vectors completing `n` to a right-handed orthonormal frame.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Intrinsic X-Y-Z Euler angles `(a, b, c)` with `R = Rx(a) Ry(b) Rz(c)`.
///
/// Ranges: `a, c ∈ [-π, π]`, `b ∈ [-π/2, π/2]`.
pub fn matrix_to_euler_xyz(m: &Mat3) -> (f64, f64, f64) {
    let sb = m[(0, 2)].clamp(-1.0, 1.0);
    let b = sb.asin();
    if sb.abs() < 1.0 - 1e-12 {
        let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
        (a, b, c)
    } else {
        // gimbal lock: fold everything into `a`
        let a = m[(2, 1)].atan2(m[(1, 1)]);
        (a, b, 0.0)
    }
}

/// Value and derivative of the logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

/// Closest point parameter on segment `[a, b]` for `p`, clamped to `[0, 1]`.
pub fn segment_param(a: &Vec3, b: &Vec3, p: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quat_matrix_round_trip() {
        let q = quat_normalize(&[0.3, -0.5, 0.7, 0.1]).unwrap();
        let m = quat_to_matrix(&q);
        let back = matrix_to_quat(&m);
        let s = quat_dot(&q, &back).signum();
        for i in 0..4 {
            assert_relative_eq!(q[i], s * back[i], epsilon = 1e-12);
        }
        assert_relative_eq!(
            (m * m.transpose() - Mat3::identity()).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quat_mul_matches_matrix_product() {
        let a = quat_normalize(&[0.2, 0.4, -0.1, 0.9]).unwrap();
        let b = quat_normalize(&[-0.6, 0.1, 0.3, 0.2]).unwrap();
        let lhs = quat_to_matrix(&quat_mul(&a, &b));
        let rhs = quat_to_matrix(&a) * quat_to_matrix(&b);
        assert_relative_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_reconstructs_rotation() {
        let q = quat_normalize(&[0.8, 0.2, -0.4, 0.3]).unwrap();
        let m = quat_to_matrix(&q);
        let (a, b, c) = matrix_to_euler_xyz(&m);
        let r = axis_angle_matrix(&Vec3::x(), a)
            * axis_angle_matrix(&Vec3::y(), b)
            * axis_angle_matrix(&Vec3::z(), c);
        assert_relative_eq!((r - m).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn axis_angle_agrees_with_quaternion() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let m = axis_angle_matrix(&axis, 0.7);
        let q = quat_from_axis_angle(&axis, 0.7);
        assert_relative_eq!((m - quat_to_matrix(&q)).norm(), 0.0, epsilon = 1e-12);
    }
}
