//! Pose and IMU text files.
//!
//! Poses are `t,x,y,z,qx,qy,qz,qw` with a scalar-last Hamilton quaternion,
//! the usual trajectory-file convention. In memory the library uses the
//! scalar-first JPL convention, whose quaternion for the same rotation matrix
//! is the Hamilton conjugate, so the vector part flips sign at this boundary.
//! Numbers are written in Rust's shortest round-trip form, which is lossless.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Rotation, Transform, UnitQuaternion, Vec3};
use crate::imu_preint::{check_monotonic, ImuSample};
use crate::pipeline::{FrameTag, TimedPose};

pub const POSE_HEADER: &str = "# t x y z qx qy qz qw";
pub const IMU_HEADER: &str = "# t wx wy wz ax ay az";

/// Quaternion norms further than this from one are rejected.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-comment, non-blank rows with their 1-based line numbers, parsed as floats.
fn numeric_rows(path: &Path, text: &str, width: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(::csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != width {
            return Err(parse_err(format!("expected {width} fields, found {}", record.len())));
        }
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid number '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }
    Ok(rows)
}

fn fields(values: &[f64]) -> Vec<String> {
    // Normalise negative zero so output does not depend on its sign.
    values
        .iter()
        .map(|v| if *v == 0.0 { 0.0 } else { *v }.to_string())
        .collect()
}

fn join(values: &[f64]) -> String {
    fields(values).join(",")
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = Vec::from(format!("{header}\n"));
    {
        let mut writer = ::csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut out);
        for row in rows {
            writer.write_record(fields(&row)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
        }
        writer.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn pose_row(t: f64, pose: &Transform) -> Vec<f64> {
    let p = pose.translation;
    let q = hamilton_components(&pose.rotation);
    vec![t, p.x, p.y, p.z, q[0], q[1], q[2], q[3]]
}

fn imu_row(s: &ImuSample) -> Vec<f64> {
    vec![s.t, s.omega.x, s.omega.y, s.omega.z, s.accel.x, s.accel.y, s.accel.z]
}

/// Scalar-last Hamilton components `[qx, qy, qz, qw]` of a rotation.
pub fn hamilton_components(r: &Rotation) -> [f64; 4] {
    let q = r.to_quaternion();
    let v = q.vector();
    [-v.x, -v.y, -v.z, q.scalar()]
}

/// Rotation from scalar-last Hamilton components, renormalised.
pub fn rotation_from_hamilton(q: [f64; 4]) -> Rotation {
    UnitQuaternion::new(q[3], -Vec3::new(q[0], q[1], q[2])).to_rotation()
}

pub fn format_pose_line(t: f64, pose: &Transform) -> String {
    join(&pose_row(t, pose))
}

pub fn format_imu_line(s: &ImuSample) -> String {
    join(&imu_row(s))
}

pub fn parse_poses(path: &Path, text: &str, frame: FrameTag) -> Result<Vec<TimedPose>> {
    numeric_rows(path, text, 8)?
        .into_iter()
        .map(|(line, v)| {
            let q = [v[4], v[5], v[6], v[7]];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
                return Err(Error::NonUnitQuaternion {
                    path: path.to_path_buf(),
                    line,
                    norm,
                });
            }
            let pose = Transform::new(rotation_from_hamilton(q), Vec3::new(v[1], v[2], v[3]));
            Ok(TimedPose::new(v[0], pose, frame))
        })
        .collect()
}

pub fn parse_imu(path: &Path, text: &str) -> Result<Vec<ImuSample>> {
    let samples: Vec<ImuSample> = numeric_rows(path, text, 7)?
        .into_iter()
        .map(|(_, v)| ImuSample::new(v[0], Vec3::new(v[1], v[2], v[3]), Vec3::new(v[4], v[5], v[6])))
        .collect();
    check_monotonic(&samples)?;
    Ok(samples)
}

pub fn read_pose_csv(path: &Path, frame: FrameTag) -> Result<Vec<TimedPose>> {
    parse_poses(path, &read_text(path)?, frame)
}

pub fn write_pose_csv(path: &Path, poses: &[TimedPose]) -> Result<()> {
    write_rows(path, POSE_HEADER, poses.iter().map(|p| pose_row(p.t, &p.pose)))
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    parse_imu(path, &read_text(path)?)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    write_rows(path, IMU_HEADER, samples.iter().map(imu_row))
}
