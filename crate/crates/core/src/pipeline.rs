//! Online extrinsic calibration loop.
//!
//! Pose pairs are associated by timestamp and consumed in consecutive
//! batches. A batch whose angular rates excite all three rotation axes is
//! accepted: its pairs join the accumulated set, the rotation is re-solved by
//! the q-method, and the translation by bounded least squares. A candidate
//! extrinsic replaces the current one only if it does not increase the pose
//! error, and the loop stops once that error falls below `beta`.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geom::{Rotation, Transform, Vec3};
use crate::handeye::{solve_translation_handeye, RelativePosePair};
use crate::imu_preint::ImuSample;
use crate::lsq::{solve_bvls, Bounds, LinearSystem};
use crate::observe::{align_angular_rates, gate_batch, RateBatch};
use crate::qmethod::{kabsch_align, solve_rotation, DavenportAccumulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameTag {
    Base,
    Lidar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Transform,
    pub frame: FrameTag,
}

impl TimedPose {
    pub fn new(t: f64, pose: Transform, frame: FrameTag) -> Self {
        TimedPose { t, pose, frame }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub base: TimedPose,
    pub lidar: TimedPose,
    /// `lidar.t - base.t`.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslationBackend {
    /// Relative motions of consecutive pairs, `(R_B,rel - I) t = R t_L,rel - t_B,rel`.
    HandEye,
    /// Absolute residual `R t_B + t - t_L`.
    Absolute,
}

impl FromStr for TranslationBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hand_eye" => Ok(TranslationBackend::HandEye),
            "absolute" => Ok(TranslationBackend::Absolute),
            other => Err(Error::invalid(format!(
                "unknown translation backend '{other}' (expected hand_eye or absolute)"
            ))),
        }
    }
}

impl fmt::Display for TranslationBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TranslationBackend::HandEye => "hand_eye",
            TranslationBackend::Absolute => "absolute",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub batch_size: usize,
    /// Pose error below which the calibration counts as converged.
    pub beta: f64,
    /// Minimum singular value of the rate information matrix.
    pub epsilon: f64,
    pub bounds: Bounds,
    /// Initial translation, e.g. from a CAD drawing.
    pub cad_prior: Vec3,
    pub max_association_gap: f64,
    pub translation_backend: TranslationBackend,
    pub gyro_covariance: Matrix3<f64>,
    pub max_align_iters: usize,
}

impl BatchConfig {
    pub const DEFAULT_BOUND_RADIUS: f64 = 0.3;

    /// Defaults with translation bounds of `DEFAULT_BOUND_RADIUS` around the prior.
    pub fn new(batch_size: usize, beta: f64, epsilon: f64, cad_prior: Vec3) -> Result<Self> {
        let cfg = BatchConfig {
            batch_size,
            beta,
            epsilon,
            bounds: Bounds::around(&cad_prior, Self::DEFAULT_BOUND_RADIUS)?,
            cad_prior,
            max_association_gap: 0.005,
            translation_backend: TranslationBackend::Absolute,
            gyro_covariance: Matrix3::identity() * 1e-4,
            max_align_iters: 20,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 3 {
            return Err(Error::invalid("batch_size must be at least 3"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.max_association_gap >= 0.0) {
            return Err(Error::invalid("max_association_gap must be non-negative"));
        }
        if self.bounds.len() != 3 {
            return Err(Error::invalid("translation bounds must be three-dimensional"));
        }
        if self.gyro_covariance.cholesky().is_none() {
            return Err(Error::invalid("gyro covariance is not positive definite"));
        }
        if self.max_align_iters == 0 {
            return Err(Error::invalid("max_align_iters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEntry {
    pub batch_index: usize,
    pub total_error: f64,
    pub rotation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchOutcome {
    /// The information gate rejected the batch.
    Rejected,
    /// A new extrinsic was adopted.
    Updated,
    /// Accepted, but the new rotation did not lower the rotation error.
    RotationNotImproved,
    /// Accepted, but the full candidate did not lower the pose error.
    CostNotImproved,
    /// Accepted, but a solver could not produce a candidate.
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateLogEntry {
    pub batch_index: usize,
    pub accepted: bool,
    pub min_singular: f64,
    pub outcome: BatchOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    pub extrinsic: Transform,
    pub accepted_pairs: Vec<PosePair>,
    pub davenport: DavenportAccumulator,
    pub cost_history: Vec<CostEntry>,
    pub converged: bool,
    /// Latest base-to-sensor IMU rotation from the rate alignment.
    pub rate_alignment: Rotation,
    pub gate_log: Vec<GateLogEntry>,
}

impl CalibrationState {
    pub fn new(initial: Transform) -> Self {
        CalibrationState {
            extrinsic: initial,
            accepted_pairs: Vec::new(),
            davenport: DavenportAccumulator::new(),
            cost_history: Vec::new(),
            converged: false,
            rate_alignment: Rotation::identity(),
            gate_log: Vec::new(),
        }
    }

    pub fn batches_seen(&self) -> usize {
        self.gate_log.len()
    }
}

/// Re-expresses every pose relative to the first: `P_i' = P_0^-1 P_i`.
pub fn normalize_to_initial(poses: &[TimedPose]) -> Vec<TimedPose> {
    let Some(first) = poses.first() else {
        return Vec::new();
    };
    let inv = first.pose.inverse();
    poses
        .iter()
        .map(|p| TimedPose::new(p.t, inv * p.pose, p.frame))
        .collect()
}

const GRAVITY_NOMINAL: f64 = 9.81;
const STATIC_MAGNITUDE_STD: f64 = 0.5;

/// Roll and pitch from the mean of static accelerometer samples.
pub fn gravity_align_init(static_accels: &[Vec3]) -> Result<(f64, f64)> {
    if static_accels.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} static samples, need at least 10",
            static_accels.len()
        )));
    }
    let n = static_accels.len() as f64;
    let mags: Vec<f64> = static_accels.iter().map(|a| a.norm()).collect();
    let mean_mag = mags.iter().sum::<f64>() / n;
    let std_dev = (mags.iter().map(|m| (m - mean_mag).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if std_dev > STATIC_MAGNITUDE_STD || (mean_mag - GRAVITY_NOMINAL).abs() > 0.2 * GRAVITY_NOMINAL {
        return Err(Error::NotStatic { std_dev });
    }
    let g = static_accels.iter().sum::<Vec3>() / n;
    let roll = g.y.atan2(g.z);
    let pitch = (-g.x).atan2((g.y * g.y + g.z * g.z).sqrt());
    Ok((roll, pitch))
}

/// For each query time, the index of the nearest reference time within
/// `max_gap`. Greedy and monotone: each reference is used at most once and
/// ties go to the earlier reference. Both inputs must be sorted.
pub fn associate_times(reference: &[f64], queries: &[f64], max_gap: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut next_free = 0;
    for (q, &t) in queries.iter().enumerate() {
        if next_free >= reference.len() {
            break;
        }
        let rest = &reference[next_free..];
        let idx = next_free + rest.partition_point(|&r| r < t);
        let mut best: Option<usize> = None;
        for cand in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
            if cand < next_free || cand >= reference.len() {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => (reference[cand] - t).abs() < (reference[b] - t).abs(),
            };
            if better {
                best = Some(cand);
            }
        }
        if let Some(b) = best {
            if (reference[b] - t).abs() <= max_gap {
                out.push((b, q));
                next_free = b + 1;
            }
        }
    }
    out
}

/// Pairs each lidar pose with the nearest unused base pose.
pub fn associate_poses(base: &[TimedPose], lidar: &[TimedPose], max_gap: f64) -> Vec<PosePair> {
    let bt: Vec<f64> = base.iter().map(|p| p.t).collect();
    let lt: Vec<f64> = lidar.iter().map(|p| p.t).collect();
    associate_times(&bt, &lt, max_gap)
        .into_iter()
        .map(|(b, l)| PosePair {
            base: base[b],
            lidar: lidar[l],
            dt: lidar[l].t - base[b].t,
        })
        .collect()
}

/// `(total, rotation_only)` pose error of an extrinsic over pose pairs.
///
/// Per pair, `xi = |log(R R_B R_L^T)|_F^2 + |R t_B + t - t_L|^2`, and
/// `total = sqrt(sum xi) / N`.
pub fn pose_error(extrinsic: &Transform, pairs: &[PosePair]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let r = &extrinsic.rotation;
    let (mut rot, mut trans) = (0.0, 0.0);
    for p in pairs {
        let residual = *r * p.base.pose.rotation * p.lidar.pose.rotation.transpose();
        // |skew(w)|_F^2 = 2 |w|^2.
        rot += 2.0 * residual.log().norm_squared();
        trans += (*r * p.base.pose.translation + extrinsic.translation - p.lidar.pose.translation).norm_squared();
    }
    let n = pairs.len() as f64;
    ((rot + trans).sqrt() / n, rot.sqrt() / n)
}

/// Translation error metric `|t_hat - t_gt| / 3`.
pub fn metric_delta_t(t_hat: &Vec3, t_gt: &Vec3) -> f64 {
    (t_hat - t_gt).norm() / 3.0
}

/// Rotation error metric in degrees, the angle of `R_hat^-1 R_gt`.
pub fn metric_delta_r(r_hat: &Rotation, r_gt: &Rotation) -> f64 {
    let c = 0.5 * ((r_hat.transpose() * *r_gt).matrix().trace() - 1.0);
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Rotation noise that is stationary for the noisy absolute-pose problem:
/// `-(R_B - R_BL^-1 R_L) / 2`.
pub fn optimal_rotation_noise(r_bl: &Rotation, r_b: &Rotation, r_l: &Rotation) -> Matrix3<f64> {
    -0.5 * (r_b.matrix() - r_bl.matrix().transpose() * r_l.matrix())
}

/// Translation noise that is stationary for the noisy relative-motion problem:
/// `-((R_B,rel - I) t_BL - (R_BL t_L,rel - t_B,rel)) / 2`.
pub fn optimal_translation_noise(
    r_bl: &Rotation,
    t_bl: &Vec3,
    r_b_rel: &Rotation,
    t_b_rel: &Vec3,
    t_l_rel: &Vec3,
) -> Vec3 {
    let lhs = (r_b_rel.matrix() - Matrix3::identity()) * t_bl;
    -0.5 * (lhs - (*r_bl * t_l_rel - t_b_rel))
}

fn solve_translation(
    rotation: &Rotation,
    pairs: &[PosePair],
    cfg: &BatchConfig,
) -> Result<Vec3> {
    match cfg.translation_backend {
        TranslationBackend::Absolute => {
            let blocks: Vec<(Matrix3<f64>, Vec3)> = pairs
                .iter()
                .map(|p| {
                    (
                        Matrix3::identity(),
                        p.lidar.pose.translation - *rotation * p.base.pose.translation,
                    )
                })
                .collect();
            let x = solve_bvls(&LinearSystem::from_blocks(&blocks), &cfg.bounds)?;
            Ok(Vec3::new(x[0], x[1], x[2]))
        }
        TranslationBackend::HandEye => {
            let motions: Vec<RelativePosePair> = pairs
                .windows(2)
                .map(|w| {
                    RelativePosePair::from_absolute(
                        &w[0].base.pose,
                        &w[1].base.pose,
                        &w[0].lidar.pose,
                        &w[1].lidar.pose,
                    )
                })
                .collect();
            let (t, diag) = solve_translation_handeye(&motions, rotation, &cfg.bounds)?;
            if !diag.unobservable.is_empty() {
                debug!("translation directions held at prior: {:?}", diag.unobservable);
            }
            Ok(t)
        }
    }
}

fn is_batch_skip(e: &Error) -> bool {
    matches!(
        e,
        Error::AmbiguousAttitude { .. }
            | Error::SingularSystem { .. }
            | Error::DegenerateMotion { .. }
            | Error::InsufficientData(_)
    )
}

/// Processes one batch of `cfg.batch_size` pose pairs with its rate samples.
pub fn step_batch(
    mut state: CalibrationState,
    batch_pairs: &[PosePair],
    rate_batch: &RateBatch,
    cfg: &BatchConfig,
) -> Result<CalibrationState> {
    if batch_pairs.len() != cfg.batch_size {
        return Err(Error::invalid(format!(
            "batch has {} pairs, expected {}",
            batch_pairs.len(),
            cfg.batch_size
        )));
    }
    let batch_index = state.batches_seen();
    let aligned = align_angular_rates(rate_batch, &state.rate_alignment, cfg.max_align_iters);
    let r_rates = aligned.as_ref().copied().unwrap_or(state.rate_alignment);
    let decision = gate_batch(rate_batch, &r_rates, cfg.epsilon);
    let mut log = GateLogEntry {
        batch_index,
        accepted: decision.accepted,
        min_singular: decision.min_singular,
        outcome: BatchOutcome::Rejected,
    };
    if !decision.accepted {
        debug!("batch {batch_index}: rejected, min singular {:e}", decision.min_singular);
        state.gate_log.push(log);
        return Ok(state);
    }

    let mut davenport = state.davenport;
    for p in batch_pairs {
        davenport.push(&p.base.pose.rotation, &p.lidar.pose.rotation);
    }
    let mut pairs = state.accepted_pairs.clone();
    pairs.extend_from_slice(batch_pairs);

    let candidate = solve_rotation(&davenport).and_then(|r| {
        let (_, rot_new) = pose_error(&Transform::new(r, state.extrinsic.translation), &pairs);
        let (_, rot_old) = pose_error(&state.extrinsic, &pairs);
        if rot_new > rot_old {
            return Ok(None);
        }
        solve_translation(&r, &pairs, cfg).map(|t| Some(Transform::new(r, t)))
    });
    let candidate = match candidate {
        Ok(c) => c,
        Err(e) if is_batch_skip(&e) => {
            info!("batch {batch_index}: skipped ({e})");
            log.outcome = BatchOutcome::Skipped(e.to_string());
            state.gate_log.push(log);
            return Ok(state);
        }
        Err(e) => return Err(e),
    };

    if let Ok(r) = aligned {
        state.rate_alignment = r;
    }
    state.davenport = davenport;
    state.accepted_pairs = pairs;

    log.outcome = match candidate {
        None => BatchOutcome::RotationNotImproved,
        Some(t_hat) => {
            let (total_new, rot_new) = pose_error(&t_hat, &state.accepted_pairs);
            let (total_old, _) = pose_error(&state.extrinsic, &state.accepted_pairs);
            let ceiling = state
                .cost_history
                .last()
                .map_or(total_old, |c| c.total_error.min(total_old));
            if total_new <= ceiling {
                state.extrinsic = t_hat;
                state.cost_history.push(CostEntry {
                    batch_index,
                    total_error: total_new,
                    rotation_error: rot_new,
                });
                BatchOutcome::Updated
            } else {
                BatchOutcome::CostNotImproved
            }
        }
    };
    let (total, _) = pose_error(&state.extrinsic, &state.accepted_pairs);
    state.converged = total < cfg.beta;
    debug!("batch {batch_index}: {:?}, total error {total:e}", log.outcome);
    state.gate_log.push(log);
    Ok(state)
}

/// Rate samples of both IMUs inside `[t0, t1]`, associated by timestamp.
pub fn build_rate_batch(
    base_rates: &[ImuSample],
    sensor_rates: &[ImuSample],
    t0: f64,
    t1: f64,
    max_gap: f64,
    sigma: &Matrix3<f64>,
) -> Result<RateBatch> {
    let lo = base_rates.partition_point(|s| s.t < t0);
    let hi = base_rates.partition_point(|s| s.t <= t1);
    let base = &base_rates[lo..hi];
    let st: Vec<f64> = sensor_rates.iter().map(|s| s.t).collect();
    let bt: Vec<f64> = base.iter().map(|s| s.t).collect();
    let matches = associate_times(&st, &bt, max_gap);
    RateBatch::new(
        matches.iter().map(|&(_, b)| base[b].omega).collect(),
        matches.iter().map(|&(s, _)| sensor_rates[s].omega).collect(),
        matches.iter().map(|&(_, b)| base[b].t).collect(),
        *sigma,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub initial_extrinsic: Transform,
    pub final_extrinsic: Transform,
    pub converged: bool,
    /// Batches processed.
    pub iterations: usize,
    pub cost_history: Vec<CostEntry>,
    pub gate_log: Vec<GateLogEntry>,
    pub associated_pairs: usize,
    pub accepted_pairs: usize,
}

fn initial_rotation(pairs: &[PosePair]) -> Rotation {
    let pb: Vec<Vec3> = pairs.iter().map(|p| p.base.pose.translation).collect();
    let pl: Vec<Vec3> = pairs.iter().map(|p| p.lidar.pose.translation).collect();
    match kabsch_align(&pb, &pl) {
        Ok(t) => t.rotation,
        Err(e) => {
            info!("initial alignment unavailable ({e}); starting from identity");
            Rotation::identity()
        }
    }
}

/// Runs the calibration loop over complete streams.
///
/// Base poses are re-expressed relative to the first base pose. Lidar poses
/// are used as given, since re-anchoring them would cancel the extrinsic in
/// the common-frame relation `L = X B`.
pub fn run_calibration(
    base_stream: &[TimedPose],
    lidar_stream: &[TimedPose],
    base_rates: &[ImuSample],
    sensor_rates: &[ImuSample],
    cfg: &BatchConfig,
) -> Result<CalibrationReport> {
    cfg.validate()?;
    if base_stream.is_empty() || lidar_stream.is_empty() {
        return Err(Error::InsufficientData("empty pose stream".into()));
    }
    let base = normalize_to_initial(base_stream);
    let pairs = associate_poses(&base, lidar_stream, cfg.max_association_gap);
    let n = cfg.batch_size;
    if pairs.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} associated pose pairs, need at least {n}",
            pairs.len()
        )));
    }

    let initial = Transform::new(initial_rotation(&pairs[..n]), cfg.cad_prior);
    let mut state = CalibrationState::new(initial);
    for batch in pairs.chunks_exact(n) {
        let (t0, t1) = (batch[0].base.t, batch[n - 1].base.t);
        let rates = match build_rate_batch(
            base_rates,
            sensor_rates,
            t0,
            t1,
            cfg.max_association_gap,
            &cfg.gyro_covariance,
        ) {
            Ok(r) => r,
            Err(e) => {
                info!("batch {}: no usable rate samples ({e})", state.batches_seen());
                state.gate_log.push(GateLogEntry {
                    batch_index: state.batches_seen(),
                    accepted: false,
                    min_singular: 0.0,
                    outcome: BatchOutcome::Skipped(e.to_string()),
                });
                continue;
            }
        };
        state = step_batch(state, batch, &rates, cfg)?;
        if state.converged {
            break;
        }
    }

    Ok(CalibrationReport {
        initial_extrinsic: initial,
        final_extrinsic: state.extrinsic,
        converged: state.converged,
        iterations: state.batches_seen(),
        cost_history: state.cost_history,
        gate_log: state.gate_log,
        associated_pairs: pairs.len(),
        accepted_pairs: state.accepted_pairs.len(),
    })
}
