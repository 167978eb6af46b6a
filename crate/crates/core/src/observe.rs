//! Observability gating from two gyroscope streams.
//!
//! The rotation between the base IMU and the sensor IMU is found by
//! Gauss-Newton on the rotation manifold with residuals
//! `r_i = R w_base_i - w_sensor_i` and tangent Jacobian
//! `J_i = -R [w_base_i]x`. The information matrix `sum J_i^T Sigma^-1 J_i`
//! says how well a batch constrains that rotation; a batch is accepted when
//! its smallest singular value reaches a threshold.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geom::{skew, Rotation, Vec3};
use crate::lsq::{gauss_newton_step, ResidualCovariance};

/// Step norm below which the alignment has converged.
pub const STEP_TOL: f64 = 1e-10;
/// Largest final step still accepted when the iteration budget runs out.
pub const STALL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RateBatch {
    pub omega_base: Vec<Vec3>,
    pub omega_sensor: Vec<Vec3>,
    pub timestamps: Vec<f64>,
    pub sigma_gyro: Matrix3<f64>,
}

impl RateBatch {
    pub fn new(
        omega_base: Vec<Vec3>,
        omega_sensor: Vec<Vec3>,
        timestamps: Vec<f64>,
        sigma_gyro: Matrix3<f64>,
    ) -> Result<Self> {
        if omega_base.len() != omega_sensor.len() || omega_base.len() != timestamps.len() {
            return Err(Error::invalid("rate batch streams differ in length"));
        }
        if omega_base.is_empty() {
            return Err(Error::invalid("empty rate batch"));
        }
        if let Some(k) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotonicTime { index: k + 1 });
        }
        if sigma_gyro.cholesky().is_none() {
            return Err(Error::invalid("gyro covariance is not positive definite"));
        }
        Ok(RateBatch {
            omega_base,
            omega_sensor,
            timestamps,
            sigma_gyro,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub accepted: bool,
    pub min_singular: f64,
    /// Descending.
    pub singular_values: Vec3,
    pub r_bi_estimate: Rotation,
}

fn residuals(batch: &RateBatch, r: &Rotation) -> DVector<f64> {
    DVector::from_iterator(
        3 * batch.len(),
        batch
            .omega_base
            .iter()
            .zip(&batch.omega_sensor)
            .flat_map(|(wb, ws)| (*r * wb - ws).iter().copied().collect::<Vec<_>>()),
    )
}

fn jacobian(batch: &RateBatch, r: &Rotation) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3 * batch.len(), 3);
    for (k, wb) in batch.omega_base.iter().enumerate() {
        j.fixed_view_mut::<3, 3>(3 * k, 0)
            .copy_from(&(-r.matrix() * skew(wb)));
    }
    j
}

/// Maximum-likelihood rotation `R` with `w_sensor ~ R w_base`.
pub fn align_angular_rates(batch: &RateBatch, r_init: &Rotation, max_iters: usize) -> Result<Rotation> {
    if batch.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} rate samples, need at least 3",
            batch.len()
        )));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be positive"));
    }
    let sigma = ResidualCovariance::Block(batch.sigma_gyro);
    let mut r = *r_init;
    let mut step_norm = f64::INFINITY;
    for _ in 0..max_iters {
        let current = r;
        let step = gauss_newton_step(
            |_| residuals(batch, &current),
            |_| jacobian(batch, &current),
            &DVector::zeros(3),
            &sigma,
        )
        .map_err(|e| match e {
            Error::SingularSystem { .. } => Error::InsufficientExcitation,
            other => other,
        })?;
        let delta = Vec3::new(step.delta[0], step.delta[1], step.delta[2]);
        step_norm = delta.norm();
        r = Rotation::project(&(r * Rotation::exp(&delta)).matrix().clone_owned());
        if step_norm < STEP_TOL {
            return Ok(r);
        }
    }
    if step_norm > STALL_TOL {
        return Err(Error::NotConverged {
            iterations: max_iters,
            step_norm,
        });
    }
    Ok(r)
}

/// `sum J_i^T Sigma^-1 J_i` at `r_hat`.
pub fn fisher_information(batch: &RateBatch, r_hat: &Rotation) -> Matrix3<f64> {
    let info = batch
        .sigma_gyro
        .try_inverse()
        .expect("covariance checked at construction");
    let f: Matrix3<f64> = batch
        .omega_base
        .iter()
        .map(|wb| {
            let j = -r_hat.matrix() * skew(wb);
            j.transpose() * info * j
        })
        .sum();
    0.5 * (f + f.transpose())
}

/// Singular values of a symmetric PSD matrix, descending.
pub fn psd_singular_values(m: &Matrix3<f64>) -> Vec3 {
    let mut ev: Vec<f64> = SymmetricEigen::new(*m)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Vec3::new(ev[0], ev[1], ev[2])
}

/// Accepts the batch when the smallest singular value of its information
/// matrix is at least `epsilon`.
pub fn gate_batch(batch: &RateBatch, r_hat: &Rotation, epsilon: f64) -> GateDecision {
    let singular_values = psd_singular_values(&fisher_information(batch, r_hat));
    let min_singular = singular_values[2];
    GateDecision {
        accepted: min_singular >= epsilon,
        min_singular,
        singular_values,
        r_bi_estimate: *r_hat,
    }
}
