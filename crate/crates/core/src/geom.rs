//! Rotation, quaternion and rigid-transform primitives.
//!
//! Conventions used throughout the crate:
//!
//! * [`Rotation`] is an active rotation matrix, `exp_so3` is the Rodrigues map.
//! * [`UnitQuaternion`] stores `[s, v]` scalar-first and follows the
//!   attitude-quaternion (JPL) convention: the rotation matrix of `q` is
//!   `(s^2 - v.v) I + 2 v v^T - 2 s [v]x`. With this convention the quaternion
//!   product composes in the same order as rotation matrices,
//!   `R(p * q) = R(p) R(q)`, and the 4x4 left/right product matrices act on the
//!   vector-first layout `[v; s]`.
//! * Quaternions are canonicalised to a non-negative scalar part.
//! * [`Transform`] maps `p -> R p + t`; `a * b` applies `b` first.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `R R^T - I` accepted by [`Rotation::from_matrix`].
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;
const NEAR_PI: f64 = 1e-6;
const CANONICAL_SCALAR_TOL: f64 = 1e-12;

/// Skew-symmetric cross-product matrix: `skew(v) * w == v.cross(w)`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`], reading the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Largest absolute entry of `m m^T - I`.
pub fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    (m * m.transpose() - Matrix3::identity()).amax()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthogonality and a positive determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> crate::Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(crate::Error::invalid("rotation matrix has non-finite entries"));
        }
        let err = orthogonality_error(&m);
        if err > ORTHOGONALITY_TOL || (m.determinant() - 1.0).abs() > ORTHOGONALITY_TOL {
            return Err(crate::Error::invalid(format!(
                "matrix is not a rotation (orthogonality error {err:e}, det {})",
                m.determinant()
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without checks. The caller guarantees `m` is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Nearest rotation to `m` in the Frobenius sense.
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let d = (u * v_t).determinant().signum();
        let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
        Rotation(u * fix * v_t)
    }

    pub fn exp(phi: &Vec3) -> Self {
        exp_so3(phi)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    pub fn about_x(angle: f64) -> Self {
        exp_so3(&Vec3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        exp_so3(&Vec3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        exp_so3(&Vec3::new(0.0, 0.0, angle))
    }

    /// `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Rotation::about_z(yaw) * Rotation::about_y(pitch) * Rotation::about_x(roll)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Axis-angle vector `phi` with `exp_so3(phi) == self`.
    pub fn log(&self) -> Vec3 {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let w = vee(r);
        let sin_theta = w.norm();
        let theta = sin_theta.atan2(cos_theta);
        if theta < SMALL_ANGLE {
            // theta / (2 sin theta) -> 1/2 + theta^2/12
            return w * (1.0 + theta * theta / 6.0);
        }
        if PI - theta < NEAR_PI {
            let q = self.to_quaternion();
            let qv_norm = q.vector().norm();
            let angle = 2.0 * qv_norm.atan2(q.scalar());
            return -q.vector() / qv_norm * angle;
        }
        w * (theta / sin_theta)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Geodesic distance `|log(self^T other)|`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).angle()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        rotation_to_quat(self)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rodrigues' formula, second-order Taylor expansion below `1e-8` rad.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Matrix logarithm of a rotation as a skew-symmetric matrix.
///
/// Away from `theta = pi` this is `theta / (2 sin theta) (R - R^T)` with
/// `Tr(R) = 1 + 2 cos theta`. Within `1e-6` of `pi` the axis is read from the
/// quaternion instead, where the closed form is singular.
pub fn log_so3(r: &Rotation) -> Matrix3<f64> {
    skew(&r.log())
}

/// Rotation matrix of an attitude quaternion:
/// `(s^2 - v.v) I + 2 v v^T - 2 s [v]x`.
pub fn quat_to_rotation(q: &UnitQuaternion) -> Rotation {
    let (s, v) = (q.s, q.v);
    let m = Matrix3::identity() * (s * s - v.dot(&v)) + v * v.transpose() * 2.0 - skew(&v) * (2.0 * s);
    Rotation(m)
}

/// Inverse of [`quat_to_rotation`] using Shepperd's branch selection.
pub fn rotation_to_quat(r: &Rotation) -> UnitQuaternion {
    let m = &r.0;
    let tr = m.trace();
    let (s, x, y, z);
    if tr >= m[(0, 0)] && tr >= m[(1, 1)] && tr >= m[(2, 2)] {
        let d = 2.0 * (1.0 + tr).sqrt();
        s = 0.25 * d;
        x = (m[(1, 2)] - m[(2, 1)]) / d;
        y = (m[(2, 0)] - m[(0, 2)]) / d;
        z = (m[(0, 1)] - m[(1, 0)]) / d;
    } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
        let d = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
        s = (m[(1, 2)] - m[(2, 1)]) / d;
        x = 0.25 * d;
        y = (m[(0, 1)] + m[(1, 0)]) / d;
        z = (m[(0, 2)] + m[(2, 0)]) / d;
    } else if m[(1, 1)] >= m[(2, 2)] {
        let d = 2.0 * (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
        s = (m[(2, 0)] - m[(0, 2)]) / d;
        x = (m[(0, 1)] + m[(1, 0)]) / d;
        y = 0.25 * d;
        z = (m[(1, 2)] + m[(2, 1)]) / d;
    } else {
        let d = 2.0 * (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
        s = (m[(0, 1)] - m[(1, 0)]) / d;
        x = (m[(0, 2)] + m[(2, 0)]) / d;
        y = (m[(1, 2)] + m[(2, 1)]) / d;
        z = 0.25 * d;
    }
    UnitQuaternion::new(s, Vec3::new(x, y, z))
}

/// Unit attitude quaternion, scalar-first, canonical `s >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    s: f64,
    v: Vec3,
}

impl UnitQuaternion {
    /// Normalises and canonicalises `[s, v]`.
    ///
    /// # Panics
    /// If `[s, v]` has zero norm.
    pub fn new(s: f64, v: Vec3) -> Self {
        let n = (s * s + v.norm_squared()).sqrt();
        assert!(n > 0.0, "zero-norm quaternion");
        let (mut s, mut v) = (s / n, v / n);
        // Near s = 0 the sign is fixed by the first significant vector component.
        let flip = if s.abs() > CANONICAL_SCALAR_TOL {
            s < 0.0
        } else {
            v.iter()
                .find(|c| c.abs() > CANONICAL_SCALAR_TOL)
                .is_some_and(|c| *c < 0.0)
        };
        if flip {
            s = -s;
            v = -v;
        }
        UnitQuaternion { s, v }
    }

    pub fn identity() -> Self {
        UnitQuaternion {
            s: 1.0,
            v: Vec3::zeros(),
        }
    }

    /// From the vector-first layout `[v; s]`.
    pub fn from_vector_first(q: &Vector4<f64>) -> Self {
        UnitQuaternion::new(q[3], Vec3::new(q[0], q[1], q[2]))
    }

    /// Vector-first layout `[v; s]`, as used by the 4x4 product matrices.
    pub fn to_vector_first(&self) -> Vector4<f64> {
        Vector4::new(self.v.x, self.v.y, self.v.z, self.s)
    }

    pub fn scalar(&self) -> f64 {
        self.s
    }

    pub fn vector(&self) -> Vec3 {
        self.v
    }

    pub fn conjugate(&self) -> Self {
        UnitQuaternion::new(self.s, -self.v)
    }

    pub fn to_rotation(&self) -> Rotation {
        quat_to_rotation(self)
    }

    pub fn from_rotation(r: &Rotation) -> Self {
        rotation_to_quat(r)
    }

    /// `L(q)` with `L(p) [q] = [p * q]` in vector-first layout.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        quat_left_matrix(self)
    }

    /// `R(q)` with `R(p) [q] = [q * p]` in vector-first layout.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        quat_right_matrix(self)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        UnitQuaternion::from_vector_first(&(self.left_matrix() * rhs.to_vector_first()))
    }
}

fn quat_product_matrix(q: &UnitQuaternion, cross_sign: f64) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    let upper = Matrix3::identity() * q.s + skew(&q.v) * cross_sign;
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&upper);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&q.v);
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-q.v.transpose()));
    m[(3, 3)] = q.s;
    m
}

/// `[[s I - [v]x, v], [-v^T, s]]`.
pub fn quat_left_matrix(q: &UnitQuaternion) -> Matrix4<f64> {
    quat_product_matrix(q, -1.0)
}

/// `[[s I + [v]x, v], [-v^T, s]]`.
pub fn quat_right_matrix(q: &UnitQuaternion) -> Matrix4<f64> {
    quat_product_matrix(q, 1.0)
}

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Transform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Transform::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn inverse(&self) -> Self {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    /// Motion from `self` to `next` expressed in `self`: `self^-1 * next`.
    pub fn relative_to(&self, next: &Transform) -> Transform {
        compose(&self.inverse(), next)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

impl Mul for Transform {
    type Output = Transform;
    fn mul(self, rhs: Transform) -> Transform {
        compose(&self, &rhs)
    }
}

pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform::new(a.rotation * b.rotation, a.rotation * b.translation + a.translation)
}

pub fn inverse(a: &Transform) -> Transform {
    let rt = a.rotation.transpose();
    Transform::new(rt, -(rt * a.translation))
}
