//! Rotation estimation from paired poses: Kabsch point-set alignment for the
//! initial guess and Davenport's q-method for the rotation refinement.
//!
//! The q-method maximises `Tr(R Delta)` with `Delta = sum R_B R_L^T`, which is
//! the rotation minimising `sum |R R_B - R_L|_F^2`. Substituting the
//! quaternion form of `R` gives `q^T K q` with
//!
//! ```text
//! K = [ Gamma - mu I   lambda ]      Gamma = Delta + Delta^T
//!     [ lambda^T       mu     ]      mu    = Tr(Delta)
//!
//! lambda = (D32 - D23, D13 - D31, D21 - D12)
//! ```
//!
//! in vector-first layout. The sign of `lambda` follows from expanding the
//! `-2 s [v]x` term of the rotation and is checked against Kabsch in the
//! tests; the opposite sign recovers the inverse rotation.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geom::{Rotation, Transform, UnitQuaternion, Vec3};

/// Top eigenvalues of `K` closer than this leave the attitude undetermined.
pub const EIGENGAP_TOL: f64 = 1e-9;

const COLLINEAR_TOL: f64 = 1e-10;

/// Least-squares rigid transform with `l_i ~ R b_i + t`.
pub fn kabsch_align(points_b: &[Vec3], points_l: &[Vec3]) -> Result<Transform> {
    if points_b.len() != points_l.len() {
        return Err(Error::invalid(format!(
            "point sets differ in length ({} vs {})",
            points_b.len(),
            points_l.len()
        )));
    }
    if points_b.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{} point pairs, need at least 3",
            points_b.len()
        )));
    }
    let n = points_b.len() as f64;
    let centroid_b = points_b.iter().sum::<Vec3>() / n;
    let centroid_l = points_l.iter().sum::<Vec3>() / n;
    let h: Matrix3<f64> = points_b
        .iter()
        .zip(points_l)
        .map(|(b, l)| (b - centroid_b) * (l - centroid_l).transpose())
        .sum();

    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= COLLINEAR_TOL * sv[0] {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance singular values {sv:?}"
        )));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^T").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Rotation::from_matrix_unchecked(r);
    Ok(Transform::new(rotation, centroid_l - rotation * centroid_b))
}

/// Running `sum R_B R_L^T` over accepted pose pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DavenportAccumulator {
    pub delta: Matrix3<f64>,
    pub count: usize,
}

impl Default for DavenportAccumulator {
    fn default() -> Self {
        DavenportAccumulator {
            delta: Matrix3::zeros(),
            count: 0,
        }
    }
}

impl DavenportAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[must_use]
    pub fn accumulate(mut self, r_b: &Rotation, r_l: &Rotation) -> Self {
        self.push(r_b, r_l);
        self
    }

    pub fn push(&mut self, r_b: &Rotation, r_l: &Rotation) {
        self.delta += r_b.matrix() * r_l.matrix().transpose();
        self.count += 1;
    }
}

/// Symmetric 4x4 Davenport matrix in vector-first layout `[q_v; q_s]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DavenportMatrix {
    pub k: Matrix4<f64>,
}

impl DavenportMatrix {
    /// `q^T K q` for a quaternion.
    pub fn quadratic_form(&self, q: &UnitQuaternion) -> f64 {
        let x = q.to_vector_first();
        (x.transpose() * self.k * x)[0]
    }
}

fn assemble_k(delta: &Matrix3<f64>, lambda: Vector3<f64>) -> Matrix4<f64> {
    let mu = delta.trace();
    let gamma = delta + delta.transpose();
    let mut k = Matrix4::zeros();
    k.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(gamma - Matrix3::identity() * mu));
    k.fixed_view_mut::<3, 1>(0, 3).copy_from(&lambda);
    k.fixed_view_mut::<1, 3>(3, 0).copy_from(&lambda.transpose());
    k[(3, 3)] = mu;
    k
}

fn antisymmetric_part(d: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        d[(2, 1)] - d[(1, 2)],
        d[(0, 2)] - d[(2, 0)],
        d[(1, 0)] - d[(0, 1)],
    )
}

pub fn davenport_k(acc: &DavenportAccumulator) -> DavenportMatrix {
    DavenportMatrix {
        k: assemble_k(&acc.delta, antisymmetric_part(&acc.delta)),
    }
}

/// Eigenvector of the largest eigenvalue of `K` as a canonical quaternion,
/// together with that eigenvalue.
pub fn solve_qmethod(k: &DavenportMatrix) -> Result<(UnitQuaternion, f64)> {
    let eig = SymmetricEigen::new(k.k);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    let second = eig.eigenvalues[order[1]];
    if !(largest - second >= EIGENGAP_TOL) {
        return Err(Error::AmbiguousAttitude { largest, second });
    }
    let v: Vector4<f64> = eig.eigenvectors.column(order[0]).into_owned();
    Ok((UnitQuaternion::from_vector_first(&v), largest))
}

/// Rotation `R` minimising `sum |R R_B - R_L|_F^2` over the accumulated pairs.
pub fn solve_rotation(acc: &DavenportAccumulator) -> Result<Rotation> {
    if acc.count == 0 {
        return Err(Error::InsufficientData("no rotation pairs accumulated".into()));
    }
    solve_qmethod(&davenport_k(acc)).map(|(q, _)| q.to_rotation())
}
