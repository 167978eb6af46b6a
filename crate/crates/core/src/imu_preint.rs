//! IMU preintegration into relative rotation, velocity and position deltas.
//!
//! Inputs are held constant over each sample interval (zero-order hold) and
//! compounded with the discrete recursions
//!
//! ```text
//! dR_ik+1 = dR_ik Exp(w_k dt)
//! dv_ik+1 = dv_ik + dR_ik G1(w_k, dt) f_k
//! dp_ik+1 = dp_ik + dv_ik dt + dR_ik G2(w_k, dt) f_k
//! ```
//!
//! where `G1 = int_0^dt Exp(w s) ds` and `G2 = int_0^dt int_0^r Exp(w s) ds dr`
//! integrate the specific force through the rotation within the interval.
//! For `w = 0` they reduce to `dt I` and `dt^2/2 I`. With them the recursion
//! is exact whenever the inputs really are constant over each interval.
//!
//! Gravity is not removed and biases are expected to be subtracted by the
//! caller.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geom::{exp_so3, skew, Rotation, Transform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// Angular velocity in the body frame, rad/s.
    pub omega: Vec3,
    /// Specific force in the body frame, m/s^2.
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, omega: Vec3, accel: Vec3) -> Self {
        ImuSample { t, omega, accel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreintegratedDelta {
    pub d_rot: Rotation,
    pub d_vel: Vec3,
    pub d_pos: Vec3,
    pub duration: f64,
}

impl PreintegratedDelta {
    pub fn identity() -> Self {
        PreintegratedDelta {
            d_rot: Rotation::identity(),
            d_vel: Vec3::zeros(),
            d_pos: Vec3::zeros(),
            duration: 0.0,
        }
    }

    /// Chains `self` over `[t_i, t_j]` with `next` over `[t_j, t_k]`.
    pub fn then(&self, next: &PreintegratedDelta) -> PreintegratedDelta {
        PreintegratedDelta {
            d_rot: self.d_rot * next.d_rot,
            d_vel: self.d_vel + self.d_rot * next.d_vel,
            d_pos: self.d_pos + self.d_vel * next.duration + self.d_rot * next.d_pos,
            duration: self.duration + next.duration,
        }
    }

    /// Relative pose `(dR, dp)`.
    pub fn to_transform(&self) -> Transform {
        Transform::new(self.d_rot, self.d_pos)
    }
}

/// Returns an error naming the first sample whose timestamp does not increase.
pub fn check_monotonic(samples: &[ImuSample]) -> Result<()> {
    for (k, w) in samples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(Error::NonMonotonicTime { index: k + 1 });
        }
    }
    Ok(())
}

/// Preintegrates `samples` over `[t_i, t_j]`.
///
/// `(G1, G2)`: single and double time integrals of `Exp(w s)` over `[0, dt]`.
fn rotation_integrals(omega: &Vec3, dt: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let w = skew(omega);
    let w2 = w * w;
    let rate = omega.norm();
    let theta = rate * dt;
    // Coefficients of W and W^2; Taylor series near zero avoid cancellation.
    let (a1, a2, b2) = if theta < 0.05 {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            dt * dt * (0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0),
            dt.powi(3) * (1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0),
            dt.powi(4) * (1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0 - t6 / 3628800.0),
        )
    } else {
        let r2 = rate * rate;
        let a1 = (1.0 - theta.cos()) / r2;
        (a1, (dt - theta.sin() / rate) / r2, (0.5 * dt * dt - a1) / r2)
    };
    let id = Matrix3::identity();
    (id * dt + w * a1 + w2 * a2, id * (0.5 * dt * dt) + w * a2 + w2 * b2)
}

/// Each sample holds from its own timestamp until the next sample (the last
/// one until `t_j`). If the window opens between two samples, the earlier
/// sample covers the gap up to the first sample inside the window.
pub fn preintegrate(samples: &[ImuSample], t_i: f64, t_j: f64) -> Result<PreintegratedDelta> {
    if !(t_i < t_j) || !t_i.is_finite() || !t_j.is_finite() {
        return Err(Error::invalid(format!("invalid window [{t_i}, {t_j}]")));
    }
    check_monotonic(samples)?;

    let first_inside = samples.partition_point(|s| s.t < t_i);
    if first_inside == samples.len() || samples[first_inside].t >= t_j {
        return Err(Error::EmptyWindow { start: t_i, end: t_j });
    }
    let start = if first_inside > 0 && samples[first_inside].t > t_i {
        first_inside - 1
    } else {
        first_inside
    };

    let mut d_rot = Rotation::identity();
    let mut d_vel = Vec3::zeros();
    let mut d_pos = Vec3::zeros();
    for k in start..samples.len() {
        let s = &samples[k];
        if s.t >= t_j {
            break;
        }
        let begin = s.t.max(t_i);
        let end = samples.get(k + 1).map_or(t_j, |n| n.t.min(t_j));
        let dt = end - begin;
        let (g1, g2) = rotation_integrals(&s.omega, dt);
        d_pos += d_vel * dt + d_rot * (g2 * s.accel);
        d_vel += d_rot * (g1 * s.accel);
        d_rot = d_rot * exp_so3(&(s.omega * dt));
    }

    Ok(PreintegratedDelta {
        d_rot,
        d_vel,
        d_pos,
        duration: t_j - t_i,
    })
}
