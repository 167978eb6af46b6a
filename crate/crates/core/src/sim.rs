//! Synthetic ground truth: a planar unicycle with optional sinusoidal roll and
//! pitch, evaluated in closed form, plus the derived lidar streams and noise.
//!
//! Each segment is a sequence of constant-yaw-rate pieces, so heading and
//! position are exact trigonometric expressions. Tilt is
//! `A sin(n pi tau / T)` over a segment of length `T`, which vanishes at both
//! segment ends and keeps poses continuous across joints. Orientation is
//! `Rz(yaw) Ry(pitch) Rx(roll)`.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rotation, Transform, Vec3};
use crate::imu_preint::ImuSample;
use crate::pipeline::{FrameTag, TimedPose};

pub const STANDARD_GRAVITY: f64 = 9.81;
/// Nominal roll and pitch excitation frequencies, Hz.
const ROLL_FREQ: f64 = 0.5;
const PITCH_FREQ: f64 = 0.3;

fn default_gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Straight,
    Arc,
    /// `+yaw_rate` for the first half, `-yaw_rate` for the second.
    FigureEight,
    /// `+yaw_rate`, `-yaw_rate`, `+yaw_rate` over quarter, half, quarter.
    SCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub duration: f64,
    pub speed: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    /// Roll and pitch amplitude in radians.
    #[serde(default)]
    pub roll_pitch_excitation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub segments: Vec<Segment>,
    pub pose_rate: f64,
    pub imu_rate: f64,
    #[serde(default = "default_gravity")]
    pub gravity: Vec3,
}

impl ScenarioSpec {
    pub fn new(segments: Vec<Segment>, pose_rate: f64, imu_rate: f64) -> Self {
        ScenarioSpec {
            segments,
            pose_rate,
            imu_rate,
            gravity: default_gravity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("scenario has no segments"));
        }
        for (k, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0) || !s.duration.is_finite() {
                return Err(Error::invalid(format!("segment {k}: duration must be positive")));
            }
            if !s.speed.is_finite() || !s.yaw_rate.is_finite() || !s.roll_pitch_excitation.is_finite() {
                return Err(Error::invalid(format!("segment {k}: non-finite parameter")));
            }
        }
        if !(self.pose_rate > 0.0) || !(self.imu_rate > 0.0) {
            return Err(Error::invalid("rates must be positive"));
        }
        if self.imu_rate < self.pose_rate {
            return Err(Error::invalid("imu_rate must be at least pose_rate"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::invalid("gravity must be finite"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub gyro_std: f64,
    #[serde(default)]
    pub accel_std: f64,
    #[serde(default)]
    pub gyro_bias: Vec3,
    #[serde(default)]
    pub pose_rot_std: f64,
    #[serde(default)]
    pub pose_trans_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let stds = [self.gyro_std, self.accel_std, self.pose_rot_std, self.pose_trans_std];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise standard deviations must be finite and non-negative"));
        }
        if !self.gyro_bias.iter().all(|b| b.is_finite()) {
            return Err(Error::invalid("gyro bias must be finite"));
        }
        Ok(())
    }
}

/// How lidar poses relate to base poses for an extrinsic `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseModel {
    /// `L_i = X * B_i`: absolute poses compared in a common frame.
    CommonFrame,
    /// `L_i = X^-1 * B_i * X`: each sensor's odometry in its own start frame,
    /// so relative motions satisfy `B_rel X = X L_rel`.
    SensorFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub base_poses: Vec<TimedPose>,
    pub base_rates: Vec<ImuSample>,
    pub lidar_poses: Vec<TimedPose>,
    pub lidar_rates: Vec<ImuSample>,
    pub ground_truth_extrinsic: Transform,
    pub pose_model: PoseModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    start: f64,
    yaw0: f64,
    origin: Vec3,
    speed: f64,
    yaw_rate: f64,
}

impl Piece {
    fn yaw(&self, tau: f64) -> f64 {
        self.yaw0 + self.yaw_rate * tau
    }

    fn position(&self, tau: f64) -> Vec3 {
        let (v, r, y0) = (self.speed, self.yaw_rate, self.yaw0);
        if r == 0.0 {
            self.origin + Vec3::new(y0.cos(), y0.sin(), 0.0) * (v * tau)
        } else {
            let y = self.yaw(tau);
            self.origin + Vec3::new(y.sin() - y0.sin(), y0.cos() - y.cos(), 0.0) * (v / r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tilt {
    start: f64,
    duration: f64,
    amplitude: f64,
    roll_cycles: f64,
    pitch_cycles: f64,
}

impl Tilt {
    fn new(start: f64, duration: f64, amplitude: f64) -> Self {
        let cycles = |f: f64| (2.0 * f * duration).round().max(1.0);
        let roll_cycles = cycles(ROLL_FREQ);
        let mut pitch_cycles = cycles(PITCH_FREQ);
        if pitch_cycles == roll_cycles {
            pitch_cycles += 1.0;
        }
        Tilt {
            start,
            duration,
            amplitude,
            roll_cycles,
            pitch_cycles,
        }
    }

    /// `(angle, rate)` of a half-sine train with `n` half periods.
    fn wave(&self, n: f64, tau: f64) -> (f64, f64) {
        let k = n * std::f64::consts::PI / self.duration;
        (self.amplitude * (k * tau).sin(), self.amplitude * k * (k * tau).cos())
    }

    fn roll(&self, tau: f64) -> (f64, f64) {
        self.wave(self.roll_cycles, tau)
    }

    fn pitch(&self, tau: f64) -> (f64, f64) {
        self.wave(self.pitch_cycles, tau)
    }
}

/// Exact kinematic state of the base frame at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub pose: Transform,
    /// World-frame velocity.
    pub velocity: Vec3,
    /// World-frame acceleration.
    pub acceleration: Vec3,
    /// Body-frame angular velocity.
    pub omega: Vec3,
    /// Body-frame specific force `R^T (a - g)`.
    pub specific_force: Vec3,
}

/// Closed-form base trajectory built from a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTrajectory {
    pieces: Vec<Piece>,
    tilts: Vec<Tilt>,
    gravity: Vec3,
    duration: f64,
}

impl BaseTrajectory {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let mut pieces = Vec::new();
        let mut tilts = Vec::new();
        let mut t = 0.0;
        let mut yaw = 0.0;
        let mut origin = Vec3::zeros();
        for seg in &spec.segments {
            let r = seg.yaw_rate;
            let plan: Vec<(f64, f64)> = match seg.kind {
                SegmentKind::Straight => vec![(1.0, 0.0)],
                SegmentKind::Arc => vec![(1.0, r)],
                SegmentKind::FigureEight => vec![(0.5, r), (0.5, -r)],
                SegmentKind::SCurve => vec![(0.25, r), (0.5, -r), (0.25, r)],
            };
            if seg.roll_pitch_excitation != 0.0 {
                tilts.push(Tilt::new(t, seg.duration, seg.roll_pitch_excitation));
            }
            let mut local = 0.0;
            for (fraction, yaw_rate) in plan {
                let piece = Piece {
                    start: t + local,
                    yaw0: yaw,
                    origin,
                    speed: seg.speed,
                    yaw_rate,
                };
                let length = fraction * seg.duration;
                yaw = piece.yaw(length);
                origin = piece.position(length);
                pieces.push(piece);
                local += length;
            }
            t += seg.duration;
        }
        Ok(BaseTrajectory {
            pieces,
            tilts,
            gravity: spec.gravity,
            duration: t,
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// State at `t`, clamped to the trajectory. Piece boundaries belong to
    /// the piece that starts there.
    pub fn state(&self, t: f64) -> KinematicState {
        let t = t.clamp(0.0, self.duration);
        let idx = self.pieces.partition_point(|p| p.start <= t).max(1) - 1;
        let piece = &self.pieces[idx];
        let tau = t - piece.start;
        let yaw = piece.yaw(tau);
        let yaw_rate = piece.yaw_rate;
        let position = piece.position(tau);
        let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
        let velocity = heading * piece.speed;
        let acceleration = Vec3::new(-yaw.sin(), yaw.cos(), 0.0) * (piece.speed * yaw_rate);

        let ((roll, roll_rate), (pitch, pitch_rate)) = self
            .tilts
            .iter()
            .find(|w| t >= w.start && t < w.start + w.duration)
            .map_or(((0.0, 0.0), (0.0, 0.0)), |w| {
                let tau = t - w.start;
                (w.roll(tau), w.pitch(tau))
            });

        let rotation = Rotation::from_rpy(roll, pitch, yaw);
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let omega = Vec3::new(
            roll_rate - yaw_rate * sp,
            pitch_rate * cr + yaw_rate * sr * cp,
            yaw_rate * cr * cp - pitch_rate * sr,
        );
        let specific_force = rotation.transpose() * (acceleration - self.gravity);
        KinematicState {
            pose: Transform::new(rotation, position),
            velocity,
            acceleration,
            omega,
            specific_force,
        }
    }
}

fn sample_times(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let count = (duration * rate + 1e-9).floor() as usize;
    (0..=count).map(move |k| k as f64 / rate)
}

/// Base poses at `pose_rate` and base IMU samples at `imu_rate`.
pub fn generate_base_trajectory(spec: &ScenarioSpec) -> Result<(Vec<TimedPose>, Vec<ImuSample>)> {
    let traj = BaseTrajectory::new(spec)?;
    let poses = sample_times(traj.duration(), spec.pose_rate)
        .map(|t| TimedPose::new(t, traj.state(t).pose, FrameTag::Base))
        .collect();
    let rates = sample_times(traj.duration(), spec.imu_rate)
        .map(|t| {
            let s = traj.state(t);
            ImuSample::new(t, s.omega, s.specific_force)
        })
        .collect();
    Ok((poses, rates))
}

/// Lidar poses and lidar-IMU samples for a rigidly mounted sensor with
/// extrinsic `X`.
///
/// Rates are rotated into the sensor frame, `w_L = R_X^T w_B`. The specific
/// force is rotated the same way; the lever-arm terms of a translated mount
/// are not modelled.
pub fn derive_lidar_stream(
    base_poses: &[TimedPose],
    base_rates: &[ImuSample],
    extrinsic: &Transform,
    model: PoseModel,
) -> (Vec<TimedPose>, Vec<ImuSample>) {
    let x_inv = extrinsic.inverse();
    let poses = base_poses
        .iter()
        .map(|b| {
            let pose = match model {
                PoseModel::CommonFrame => *extrinsic * b.pose,
                PoseModel::SensorFrame => x_inv * b.pose * *extrinsic,
            };
            TimedPose::new(b.t, pose, FrameTag::Lidar)
        })
        .collect();
    let r_t = extrinsic.rotation.transpose();
    let rates = base_rates
        .iter()
        .map(|s| ImuSample::new(s.t, r_t * s.omega, r_t * s.accel))
        .collect();
    (poses, rates)
}

pub fn generate(spec: &ScenarioSpec, extrinsic: &Transform, model: PoseModel) -> Result<GeneratedScenario> {
    let (base_poses, base_rates) = generate_base_trajectory(spec)?;
    let (lidar_poses, lidar_rates) = derive_lidar_stream(&base_poses, &base_rates, extrinsic, model);
    Ok(GeneratedScenario {
        base_poses,
        base_rates,
        lidar_poses,
        lidar_rates,
        ground_truth_extrinsic: *extrinsic,
        pose_model: model,
    })
}

/// Adds seeded noise: white gyro and accelerometer noise plus a constant gyro
/// bias on both IMU streams, and tangent rotation noise and additive
/// translation noise on the lidar poses. Base poses are left clean as the
/// reference trajectory.
pub fn corrupt(scenario: &GeneratedScenario, noise: &NoiseModel) -> Result<GeneratedScenario> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = |std: f64| Normal::new(0.0, std).expect("validated standard deviation");
    let gyro = normal(noise.gyro_std);
    let accel = normal(noise.accel_std);
    let rot = normal(noise.pose_rot_std);
    let trans = normal(noise.pose_trans_std);
    let draw = |d: &Normal<f64>, rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| d.sample(rng));

    let mut out = scenario.clone();
    for stream in [&mut out.base_rates, &mut out.lidar_rates] {
        for s in stream.iter_mut() {
            let dw = draw(&gyro, &mut rng);
            let da = draw(&accel, &mut rng);
            if noise.gyro_std > 0.0 {
                s.omega += dw;
            }
            if noise.gyro_bias != Vec3::zeros() {
                s.omega += noise.gyro_bias;
            }
            if noise.accel_std > 0.0 {
                s.accel += da;
            }
        }
    }
    for p in out.lidar_poses.iter_mut() {
        let dr = draw(&rot, &mut rng);
        let dt = draw(&trans, &mut rng);
        if noise.pose_rot_std > 0.0 {
            p.pose.rotation = p.pose.rotation * Rotation::exp(&dr);
        }
        if noise.pose_trans_std > 0.0 {
            p.pose.translation += dt;
        }
    }
    Ok(out)
}

/// Static accelerometer samples for a sensor held at `roll`, `pitch`.
pub fn static_accels(roll: f64, pitch: f64, count: usize, gravity: &Vec3) -> Vec<Vec3> {
    let r = Rotation::from_rpy(roll, pitch, 0.0);
    vec![r.transpose() * (-gravity); count]
}

/// `R^T R_dot` must be skew; used to check rates against finite differences.
pub fn finite_difference_rate(before: &Rotation, after: &Rotation, dt: f64) -> Vec3 {
    let rel: Matrix3<f64> = before.matrix().transpose() * after.matrix();
    Rotation::from_matrix_unchecked(rel).log() / dt
}
