//! Hand-eye calibration `A X = X B` from relative motion pairs.
//!
//! The rotation comes from the quaternion nullspace of the stacked
//! `L(q_a) - R(q_b)` blocks; the translation from the bounded linear system
//! `(R_a - I) t = R t_b - t_a`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};
use crate::geom::{quat_left_matrix, quat_right_matrix, Rotation, Transform, UnitQuaternion, Vec3};
use crate::lsq::{solve_bvls, Bounds, LinearSystem};

/// Relative threshold on singular values below which a direction is treated
/// as unconstrained.
pub const DEGENERACY_RATIO: f64 = 1e-3;

/// Two relative motions over the same time window, related by
/// `motion_a * X = X * motion_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePosePair {
    pub motion_a: Transform,
    pub motion_b: Transform,
}

impl RelativePosePair {
    pub fn new(motion_a: Transform, motion_b: Transform) -> Self {
        RelativePosePair { motion_a, motion_b }
    }

    /// Relative motions between two consecutive absolute pose pairs.
    pub fn from_absolute(a_prev: &Transform, a_next: &Transform, b_prev: &Transform, b_next: &Transform) -> Self {
        RelativePosePair {
            motion_a: a_prev.relative_to(a_next),
            motion_b: b_prev.relative_to(b_next),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandEyeDiagnostics {
    pub smallest_singular: f64,
    pub second_smallest_singular: f64,
    pub largest_singular: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationDiagnostics {
    /// Singular values of the stacked `(R_a - I)` matrix, descending.
    pub singular_values: Vec3,
    /// Unit directions the motion does not constrain. The solution is held at
    /// the centre of the bounds along these.
    pub unobservable: Vec<Vec3>,
}

fn quaternion_block(q_a: &Vector4<f64>, q_b: &Vector4<f64>) -> Matrix4<f64> {
    let qa = UnitQuaternion::from_vector_first(q_a);
    let qb = UnitQuaternion::from_vector_first(q_b);
    // Both blocks are linear in the raw components, so undo the
    // canonicalisation applied by the constructor.
    let sa = if qa.to_vector_first().dot(q_a) < 0.0 { -1.0 } else { 1.0 };
    let sb = if qb.to_vector_first().dot(q_b) < 0.0 { -1.0 } else { 1.0 };
    quat_left_matrix(&qa) * sa - quat_right_matrix(&qb) * sb
}

/// Hand-eye rotation from raw vector-first quaternion pairs `(q_a, q_b)`.
///
/// The two quaternions of a consistent pair have equal scalar parts, so each
/// `q_b` is flipped to match the sign of its `q_a` before stacking; this makes
/// the result independent of the double-cover sign of the inputs.
pub fn solve_rotation_from_quaternions(
    pairs: &[(Vector4<f64>, Vector4<f64>)],
) -> Result<(UnitQuaternion, HandEyeDiagnostics)> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} relative rotation pairs, need at least 2",
            pairs.len()
        )));
    }
    let mut a = DMatrix::zeros(4 * pairs.len(), 4);
    for (k, (qa, qb)) in pairs.iter().enumerate() {
        let qa = qa.normalize();
        let mut qb = qb.normalize();
        let align = if qa[3].abs() > 1e-9 && qb[3].abs() > 1e-9 {
            qa[3] * qb[3]
        } else {
            // Half-turns: fall back to the vector-part alignment.
            qa.dot(&qb)
        };
        if align < 0.0 {
            qb = -qb;
        }
        a.fixed_view_mut::<4, 4>(4 * k, 0)
            .copy_from(&quaternion_block(&qa, &qb));
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let diagnostics = HandEyeDiagnostics {
        smallest_singular: svd.singular_values[order[0]],
        second_smallest_singular: svd.singular_values[order[1]],
        largest_singular: svd.singular_values[order[3]],
        pair_count: pairs.len(),
    };
    let threshold = DEGENERACY_RATIO * diagnostics.largest_singular;
    if !(diagnostics.largest_singular > 0.0) || diagnostics.second_smallest_singular <= threshold {
        return Err(Error::DegenerateMotion {
            second_smallest: diagnostics.second_smallest_singular,
            threshold,
        });
    }
    let null = Vector4::from_iterator(v_t.row(order[0]).iter().copied());
    Ok((UnitQuaternion::from_vector_first(&null), diagnostics))
}

/// Rotation of `X` in `motion_a * X = X * motion_b`.
pub fn solve_rotation_handeye(pairs: &[RelativePosePair]) -> Result<(UnitQuaternion, HandEyeDiagnostics)> {
    let quats: Vec<_> = pairs
        .iter()
        .map(|p| {
            (
                p.motion_a.rotation.to_quaternion().to_vector_first(),
                p.motion_b.rotation.to_quaternion().to_vector_first(),
            )
        })
        .collect();
    solve_rotation_from_quaternions(&quats)
}

/// Translation of `X` given its rotation, bounded by `bounds`.
///
/// Directions left unconstrained by the motion (for instance the vertical
/// under yaw-only motion) are reported in the diagnostics and held at the
/// centre of the bounds by one prior row per direction. The prior rows are
/// orthogonal to the constrained directions, so they do not bias them.
pub fn solve_translation_handeye(
    pairs: &[RelativePosePair],
    r_star: &Rotation,
    bounds: &Bounds,
) -> Result<(Vec3, TranslationDiagnostics)> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} relative motion pairs, need at least 3",
            pairs.len()
        )));
    }
    if bounds.len() != 3 {
        return Err(Error::invalid("translation bounds must be three-dimensional"));
    }
    let blocks: Vec<(Matrix3<f64>, Vec3)> = pairs
        .iter()
        .map(|p| {
            (
                p.motion_a.rotation.matrix() - Matrix3::identity(),
                *r_star * p.motion_b.translation - p.motion_a.translation,
            )
        })
        .collect();
    let sys = LinearSystem::from_blocks(&blocks);

    let normal: Matrix3<f64> = blocks.iter().map(|(a, _)| a.transpose() * a).sum();
    let eig = SymmetricEigen::new(normal);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let singular_values = Vec3::from_fn(|k, _| eig.eigenvalues[order[k]].max(0.0).sqrt());
    let largest = singular_values[0];
    if !(largest > 1e-12) {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let unobservable: Vec<Vec3> = (0..3)
        .filter(|&k| singular_values[k] <= DEGENERACY_RATIO * largest)
        .map(|k| eig.eigenvectors.column(order[k]).into_owned())
        .collect();

    let sys = if unobservable.is_empty() {
        sys
    } else {
        let centre = Vec3::from_fn(|j, _| {
            let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                _ => 0.0,
            }
        });
        let extra = unobservable.len();
        let m = sys.a.nrows();
        let mut a = sys.a.clone().resize_vertically(m + extra, 0.0);
        let mut b = sys.b.clone().resize_vertically(m + extra, 0.0);
        for (k, dir) in unobservable.iter().enumerate() {
            for j in 0..3 {
                a[(m + k, j)] = largest * dir[j];
            }
            b[m + k] = largest * dir.dot(&centre);
        }
        LinearSystem::new(a, b)
    };

    let x: DVector<f64> = solve_bvls(&sys, bounds)?;
    Ok((
        Vec3::new(x[0], x[1], x[2]),
        TranslationDiagnostics {
            singular_values,
            unobservable,
        },
    ))
}

/// Full hand-eye solve: rotation by the nullspace method, then translation.
pub fn solve_handeye(pairs: &[RelativePosePair], bounds: &Bounds) -> Result<Transform> {
    let (q, _) = solve_rotation_handeye(pairs)?;
    let r = q.to_rotation();
    let (t, _) = solve_translation_handeye(pairs, &r, bounds)?;
    Ok(Transform::new(r, t))
}
