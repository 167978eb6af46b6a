//! Motion-based extrinsic calibration of lidars against a GNSS-referenced
//! vehicle base frame.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] rotation, quaternion and rigid-transform primitives,
//! * [`imu_preint`] IMU preintegration into relative motion deltas,
//! * [`lsq`] weighted, bounded and Gauss-Newton least squares,
//! * [`qmethod`] Kabsch alignment and the Davenport q-method,
//! * [`handeye`] `AX = XB` rotation and translation solvers,
//! * [`observe`] angular-rate alignment and Fisher-information gating,
//! * [`pipeline`] the online calibration loop and evaluation metrics,
//! * [`sim`] deterministic scenario generation with exact ground truth,
//! * [`cli`] file formats, configuration and the command-line front end.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod geom;
pub mod handeye;
pub mod imu_preint;
pub mod lsq;
pub mod observe;
pub mod pipeline;
pub mod qmethod;
pub mod sim;

pub use error::{Error, Result};
pub use geom::{Rotation, Transform, UnitQuaternion, Vec3};
