//! Calibration report: `key = value` text plus a cost-history CSV sidecar.
//!
//! The text contains no timestamps or paths, so identical runs produce
//! identical bytes. Lists repeat their key once per entry.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::CalibrationConfig;
use super::csv::{hamilton_components, read_text, rotation_from_hamilton, write_text};
use crate::error::{Error, Result};
use crate::geom::{Transform, Vec3};
use crate::pipeline::{metric_delta_r, metric_delta_t, BatchOutcome, CalibrationReport};

pub const COST_HEADER: &str = "# batch_index total_error rotation_error";

/// Translation error [m] and rotation error [deg] against a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub delta_t: f64,
    pub delta_r: f64,
}

impl Metrics {
    pub fn between(estimate: &Transform, truth: &Transform) -> Self {
        Metrics {
            delta_t: metric_delta_t(&estimate.translation, &truth.translation),
            delta_r: metric_delta_r(&estimate.rotation, &truth.rotation),
        }
    }
}

/// Sidecar path: the report path with `.cost.csv` appended.
pub fn cost_sidecar_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_owned();
    s.push(".cost.csv");
    PathBuf::from(s)
}

fn outcome_label(o: &BatchOutcome) -> String {
    match o {
        BatchOutcome::Rejected => "rejected".into(),
        BatchOutcome::Updated => "updated".into(),
        BatchOutcome::RotationNotImproved => "rotation_not_improved".into(),
        BatchOutcome::CostNotImproved => "cost_not_improved".into(),
        BatchOutcome::Skipped(why) => format!("skipped: {}", why.replace('\n', " ")),
    }
}

fn vec_text(v: &Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn quat_text(t: &Transform) -> String {
    let q = hamilton_components(&t.rotation);
    format!("{},{},{},{}", q[0], q[1], q[2], q[3])
}

pub fn format_report(
    report: &CalibrationReport,
    config: &CalibrationConfig,
    metrics: Option<&Metrics>,
) -> String {
    let mut s = String::from("# extcal calibration report\n");
    let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
    kv("converged", report.converged.to_string());
    kv("iterations", report.iterations.to_string());
    kv("associated_pairs", report.associated_pairs.to_string());
    kv("accepted_pairs", report.accepted_pairs.to_string());
    kv("final_translation", vec_text(&report.final_extrinsic.translation));
    kv("final_quaternion", quat_text(&report.final_extrinsic));
    kv("initial_translation", vec_text(&report.initial_extrinsic.translation));
    kv("initial_quaternion", quat_text(&report.initial_extrinsic));
    if let Some(m) = metrics {
        kv("delta_t_m", m.delta_t.to_string());
        kv("delta_r_deg", m.delta_r.to_string());
    }
    for (k, v) in config.echo() {
        kv(&format!("config.{k}"), v);
    }
    kv("seed", config.seed.to_string());
    for c in &report.cost_history {
        kv(
            "cost",
            format!("{},{},{}", c.batch_index, c.total_error, c.rotation_error),
        );
    }
    for g in &report.gate_log {
        kv(
            "gate",
            format!(
                "{},{},{},{}",
                g.batch_index,
                g.accepted,
                g.min_singular,
                outcome_label(&g.outcome)
            ),
        );
    }
    s
}

pub fn format_cost_csv(report: &CalibrationReport) -> String {
    let mut s = String::from(COST_HEADER);
    s.push('\n');
    for c in &report.cost_history {
        writeln!(s, "{},{},{}", c.batch_index, c.total_error, c.rotation_error)
            .expect("writing to a String");
    }
    s
}

pub fn write_report(
    path: &Path,
    report: &CalibrationReport,
    config: &CalibrationConfig,
    metrics: Option<&Metrics>,
) -> Result<()> {
    write_text(path, &format_report(report, config, metrics))?;
    write_text(&cost_sidecar_path(path), &format_cost_csv(report))
}

/// The parts of a report needed for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub final_extrinsic: Transform,
    pub converged: bool,
    pub iterations: usize,
    /// `(batch_index, total_error, rotation_error)`.
    pub cost_history: Vec<(usize, f64, f64)>,
}

pub fn parse_report(path: &Path, text: &str) -> Result<ReportSummary> {
    let mut translation = None;
    let mut quaternion = None;
    let mut converged = None;
    let mut iterations = None;
    let mut cost_history = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message,
        };
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| err("expected 'key = value'".into()))?;
        let floats = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = value
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("{key}: {e}")))?;
            if v.len() != n {
                return Err(err(format!("{key}: expected {n} values")));
            }
            Ok(v)
        };
        match key {
            "final_translation" => {
                let v = floats(3)?;
                translation = Some(Vec3::new(v[0], v[1], v[2]));
            }
            "final_quaternion" => {
                let v = floats(4)?;
                quaternion = Some([v[0], v[1], v[2], v[3]]);
            }
            "converged" => {
                converged = Some(value.parse::<bool>().map_err(|e| err(e.to_string()))?)
            }
            "iterations" => {
                iterations = Some(value.parse::<usize>().map_err(|e| err(e.to_string()))?)
            }
            "cost" => {
                let v = floats(3)?;
                cost_history.push((v[0] as usize, v[1], v[2]));
            }
            _ => {}
        }
    }
    let missing = |what: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("report has no {what}"),
    };
    let translation = translation.ok_or_else(|| missing("final_translation"))?;
    let quaternion = quaternion.ok_or_else(|| missing("final_quaternion"))?;
    Ok(ReportSummary {
        final_extrinsic: Transform::new(rotation_from_hamilton(quaternion), translation),
        converged: converged.ok_or_else(|| missing("converged"))?,
        iterations: iterations.ok_or_else(|| missing("iterations"))?,
        cost_history,
    })
}

pub fn read_report(path: &Path) -> Result<ReportSummary> {
    parse_report(path, &read_text(path)?)
}
