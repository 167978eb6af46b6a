//! Command-line front end: `simulate`, `calibrate`, `gate-inspect`, `evaluate`.
//!
//! Exit codes: 0 on success, 1 on any error (including usage errors), 2 when
//! `calibrate` finishes without converging.

pub mod config;
pub mod csv;
pub mod report;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geom::{Rotation, Transform, Vec3};
use crate::observe::{align_angular_rates, gate_batch, RateBatch};
use crate::pipeline::{associate_times, run_calibration, FrameTag, TimedPose};
use crate::sim::{self, NoiseModel, PoseModel, ScenarioSpec};

use self::config::CalibrationConfig;
use self::csv::{read_imu_csv, read_pose_csv, read_text, write_imu_csv, write_pose_csv};
use self::report::{read_report, write_report, Metrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// File names written by `simulate` into its output directory.
pub const BASE_POSES_FILE: &str = "base_poses.csv";
pub const LIDAR_POSES_FILE: &str = "lidar_poses.csv";
pub const BASE_IMU_FILE: &str = "base_imu.csv";
pub const LIDAR_IMU_FILE: &str = "lidar_imu.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

#[derive(Debug, Parser)]
#[command(name = "extcal", version, about = "Lidar-to-base extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoseModelArg {
    CommonFrame,
    SensorFrame,
}

impl From<PoseModelArg> for PoseModel {
    fn from(m: PoseModelArg) -> Self {
        match m {
            PoseModelArg::CommonFrame => PoseModel::CommonFrame,
            PoseModelArg::SensorFrame => PoseModel::SensorFrame,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with exact ground truth.
    Simulate {
        /// Scenario TOML: segments, rates and the true extrinsic.
        #[arg(long)]
        scenario: PathBuf,
        /// Noise TOML.
        #[arg(long)]
        noise: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "common-frame")]
        pose_model: PoseModelArg,
        /// Overrides the seed in the noise file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the lidar extrinsic from pose and IMU streams.
    Calibrate {
        #[arg(long)]
        base_poses: PathBuf,
        #[arg(long)]
        lidar_poses: PathBuf,
        #[arg(long)]
        base_imu: PathBuf,
        #[arg(long)]
        lidar_imu: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Report path; the cost history goes to `<report>.cost.csv`.
        #[arg(long)]
        report: PathBuf,
        /// Optional ground-truth extrinsic; adds error metrics to the report.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Print the per-batch information-gate singular values as CSV.
    GateInspect {
        #[arg(long)]
        base_imu: PathBuf,
        #[arg(long)]
        lidar_imu: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare a report's extrinsic against ground truth.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
}

/// True extrinsic as given in a scenario file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicSpec {
    pub translation: Vec3,
    /// Roll, pitch, yaw in degrees.
    #[serde(default)]
    pub rpy_deg: Vec3,
}

impl ExtrinsicSpec {
    pub fn to_transform(&self) -> Transform {
        let r = self.rpy_deg.map(f64::to_radians);
        Transform::new(Rotation::from_rpy(r.x, r.y, r.z), self.translation)
    }
}

/// Scenario file: a [`ScenarioSpec`] plus an `[extrinsic]` table.
#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: ScenarioSpec,
    pub extrinsic: ExtrinsicSpec,
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    let file: ScenarioFile = parse_toml(path)?;
    file.scenario.validate()?;
    Ok(file)
}

pub fn load_noise(path: &Path) -> Result<NoiseModel> {
    let noise: NoiseModel = parse_toml(path)?;
    noise.validate()?;
    Ok(noise)
}

/// The first pose of a ground-truth file.
pub fn read_ground_truth(path: &Path) -> Result<Transform> {
    read_pose_csv(path, FrameTag::Base)?
        .first()
        .map(|p| p.pose)
        .ok_or_else(|| Error::InsufficientData(format!("{}: no pose", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn simulate(
    scenario: &Path,
    noise: &Path,
    out: &Path,
    model: PoseModel,
    seed: Option<u64>,
) -> Result<i32> {
    let file = load_scenario(scenario)?;
    let mut noise = load_noise(noise)?;
    if let Some(seed) = seed {
        noise.seed = seed;
    }
    let clean = sim::generate(&file.scenario, &file.extrinsic.to_transform(), model)?;
    let data = sim::corrupt(&clean, &noise)?;

    create_dir(out)?;
    write_pose_csv(&out.join(BASE_POSES_FILE), &data.base_poses)?;
    write_pose_csv(&out.join(LIDAR_POSES_FILE), &data.lidar_poses)?;
    write_imu_csv(&out.join(BASE_IMU_FILE), &data.base_rates)?;
    write_imu_csv(&out.join(LIDAR_IMU_FILE), &data.lidar_rates)?;
    let gt = TimedPose::new(0.0, data.ground_truth_extrinsic, FrameTag::Lidar);
    write_pose_csv(&out.join(GROUND_TRUTH_FILE), &[gt])?;
    println!(
        "wrote {} base poses, {} lidar poses, {} IMU samples per sensor to {}",
        data.base_poses.len(),
        data.lidar_poses.len(),
        data.base_rates.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

fn calibrate(
    base_poses: &Path,
    lidar_poses: &Path,
    base_imu: &Path,
    lidar_imu: &Path,
    config: &Path,
    report_path: &Path,
    ground_truth: Option<&Path>,
) -> Result<i32> {
    let cfg = CalibrationConfig::load(config)?;
    let base = read_pose_csv(base_poses, FrameTag::Base)?;
    let lidar = read_pose_csv(lidar_poses, FrameTag::Lidar)?;
    let base_rates = read_imu_csv(base_imu)?;
    let lidar_rates = read_imu_csv(lidar_imu)?;
    let truth = ground_truth.map(read_ground_truth).transpose()?;

    let report = run_calibration(&base, &lidar, &base_rates, &lidar_rates, &cfg.to_batch_config()?)?;
    let metrics = truth.map(|t| Metrics::between(&report.final_extrinsic, &t));
    write_report(report_path, &report, &cfg, metrics.as_ref())?;

    println!(
        "converged = {}, iterations = {}, accepted pairs = {}",
        report.converged, report.iterations, report.accepted_pairs
    );
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// `batch_index,t_start,t_end,min_singular,accepted` rows, one per complete
/// batch of `batch_size` associated rate pairs.
pub fn gate_inspect_csv(
    base_rates: &[crate::imu_preint::ImuSample],
    lidar_rates: &[crate::imu_preint::ImuSample],
    cfg: &CalibrationConfig,
) -> Result<String> {
    let batch_cfg = cfg.to_batch_config()?;
    let lt: Vec<f64> = lidar_rates.iter().map(|s| s.t).collect();
    let bt: Vec<f64> = base_rates.iter().map(|s| s.t).collect();
    let matches = associate_times(&lt, &bt, batch_cfg.max_association_gap);

    let mut out = String::from("# batch_index t_start t_end min_singular accepted\n");
    let mut r_hat = Rotation::identity();
    for (k, chunk) in matches.chunks_exact(batch_cfg.batch_size).enumerate() {
        let batch = RateBatch::new(
            chunk.iter().map(|&(_, b)| base_rates[b].omega).collect(),
            chunk.iter().map(|&(l, _)| lidar_rates[l].omega).collect(),
            chunk.iter().map(|&(_, b)| base_rates[b].t).collect(),
            batch_cfg.gyro_covariance,
        )?;
        // Degenerate batches cannot be aligned; keep the last good estimate.
        if let Ok(r) = align_angular_rates(&batch, &r_hat, batch_cfg.max_align_iters) {
            r_hat = r;
        }
        let d = gate_batch(&batch, &r_hat, batch_cfg.epsilon);
        let t = &batch.timestamps;
        writeln!(
            out,
            "{k},{},{},{},{}",
            t[0],
            t[t.len() - 1],
            d.min_singular,
            d.accepted
        )
        .expect("writing to a String");
    }
    Ok(out)
}

fn gate_inspect(base_imu: &Path, lidar_imu: &Path, config: &Path) -> Result<i32> {
    let cfg = CalibrationConfig::load(config)?;
    let base = read_imu_csv(base_imu)?;
    let lidar = read_imu_csv(lidar_imu)?;
    print!("{}", gate_inspect_csv(&base, &lidar, &cfg)?);
    Ok(EXIT_OK)
}

fn evaluate(report: &Path, ground_truth: &Path) -> Result<i32> {
    let summary = read_report(report)?;
    let truth = read_ground_truth(ground_truth)?;
    let m = Metrics::between(&summary.final_extrinsic, &truth);
    println!("delta_t_m = {}", m.delta_t);
    println!("delta_r_deg = {}", m.delta_r);
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate {
            scenario,
            noise,
            out,
            pose_model,
            seed,
        } => simulate(&scenario, &noise, &out, pose_model.into(), seed),
        Command::Calibrate {
            base_poses,
            lidar_poses,
            base_imu,
            lidar_imu,
            config,
            report,
            ground_truth,
        } => calibrate(
            &base_poses,
            &lidar_poses,
            &base_imu,
            &lidar_imu,
            &config,
            &report,
            ground_truth.as_deref(),
        ),
        Command::GateInspect {
            base_imu,
            lidar_imu,
            config,
        } => gate_inspect(&base_imu, &lidar_imu, &config),
        Command::Evaluate {
            report,
            ground_truth,
        } => evaluate(&report, &ground_truth),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
