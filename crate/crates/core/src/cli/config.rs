//! Flat `key = value` calibration config.
//!
//! ```text
//! batch_size = 50
//! beta = 0.001
//! epsilon = 100
//! bound_radius_m = 0.3
//! cad_prior_t = 0.1, 0.0, 0.0
//! max_association_gap_s = 0.005
//! translation_backend = absolute
//! gyro_std = 0.005
//! seed = 0
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors; missing keys take the defaults above.

use std::path::Path;

use nalgebra::Matrix3;

use super::csv::read_text;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::lsq::Bounds;
use crate::pipeline::{BatchConfig, TranslationBackend};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub batch_size: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub bound_radius_m: f64,
    pub cad_prior_t: Vec3,
    pub max_association_gap_s: f64,
    pub translation_backend: TranslationBackend,
    pub gyro_std: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            batch_size: 50,
            beta: 1e-3,
            epsilon: 100.0,
            bound_radius_m: BatchConfig::DEFAULT_BOUND_RADIUS,
            cad_prior_t: Vec3::zeros(),
            max_association_gap_s: 0.005,
            translation_backend: TranslationBackend::Absolute,
            gyro_std: 0.005,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = CalibrationConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            if seen.iter().any(|s| s == key) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            seen.push(key.to_string());

            let float = |v: &str| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(format!("invalid number '{v}' for '{key}'")))
            };
            match key {
                "batch_size" => {
                    cfg.batch_size = value
                        .parse()
                        .map_err(|_| err(format!("invalid integer '{value}' for '{key}'")))?
                }
                "beta" => cfg.beta = float(value)?,
                "epsilon" => cfg.epsilon = float(value)?,
                "bound_radius_m" => cfg.bound_radius_m = float(value)?,
                "cad_prior_t" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(err("cad_prior_t needs three comma-separated values".into()));
                    }
                    cfg.cad_prior_t = Vec3::new(float(parts[0])?, float(parts[1])?, float(parts[2])?);
                }
                "max_association_gap_s" => cfg.max_association_gap_s = float(value)?,
                "translation_backend" => {
                    cfg.translation_backend = value.parse().map_err(|e: Error| err(e.to_string()))?
                }
                "gyro_std" => cfg.gyro_std = float(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(format!("invalid integer '{value}' for '{key}'")))?
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        if !(cfg.bound_radius_m >= 0.0) {
            return Err(Error::invalid("bound_radius_m must be non-negative"));
        }
        if !(cfg.gyro_std > 0.0) {
            return Err(Error::invalid("gyro_std must be positive"));
        }
        cfg.to_batch_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn to_batch_config(&self) -> Result<BatchConfig> {
        let mut cfg = BatchConfig::new(self.batch_size, self.beta, self.epsilon, self.cad_prior_t)?;
        cfg.bounds = Bounds::around(&self.cad_prior_t, self.bound_radius_m)?;
        cfg.max_association_gap = self.max_association_gap_s;
        cfg.translation_backend = self.translation_backend;
        cfg.gyro_covariance = Matrix3::identity() * (self.gyro_std * self.gyro_std);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` lines, in the documented key order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let t = self.cad_prior_t;
        vec![
            ("batch_size".into(), self.batch_size.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("bound_radius_m".into(), self.bound_radius_m.to_string()),
            ("cad_prior_t".into(), format!("{},{},{}", t.x, t.y, t.z)),
            ("max_association_gap_s".into(), self.max_association_gap_s.to_string()),
            ("translation_backend".into(), self.translation_backend.to_string()),
            ("gyro_std".into(), self.gyro_std.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CalibrationConfig> {
        CalibrationConfig::parse(Path::new("test.cfg"), text)
    }

    #[test]
    fn full_config() {
        let cfg = parse(
            "# comment\nbatch_size = 40\nbeta=0.01\nepsilon = 5e2 # trailing\nbound_radius_m = 0.2\n\
             cad_prior_t = 0.1, -0.2, 0.3\nmax_association_gap_s = 0.01\ntranslation_backend = hand_eye\n\
             gyro_std = 0.01\nseed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.batch_size, 40);
        assert_eq!(cfg.epsilon, 500.0);
        assert_eq!(cfg.cad_prior_t, Vec3::new(0.1, -0.2, 0.3));
        assert_eq!(cfg.translation_backend, TranslationBackend::HandEye);
        assert_eq!(cfg.seed, 42);
        let batch = cfg.to_batch_config().unwrap();
        assert_eq!(batch.bounds.upper[2], 0.5);
        assert!((batch.gyro_covariance[(0, 0)] - 1e-4).abs() < 1e-18);

        let echoed: String = cfg.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        assert_eq!(parse(&echoed).unwrap(), cfg);
    }

    #[test]
    fn defaults_when_empty() {
        assert_eq!(parse("").unwrap(), CalibrationConfig::default());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse("colour = red\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("beta = 1\nbeta = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("beta\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("batch_size = -3\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("cad_prior_t = 1,2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("translation_backend = magic\n"), Err(Error::Parse { .. })));
        assert!(parse("batch_size = 2\n").is_err());
        assert!(parse("gyro_std = 0\n").is_err());
        assert!(parse("beta = 0\n").is_err());
    }
}
