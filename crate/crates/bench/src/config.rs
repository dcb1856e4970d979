//! Experiment configuration.
//!
//! Files are flat `key = value` lines grouped under `[section]` headers
//! (TOML syntax). A run is configured by layering, in order: the built-in
//! base config, an optional preset, an optional user file, then command
//! line overrides. Later layers replace individual keys.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::Table;

use crate::error::{BenchError, Result};

/// Defaults used by every experiment.
pub const BASE_CONFIG: &str = r#"
[experiment]
name = "experiment"
sweep = "snr_db"
values = [20.0]
trials = 100
seed = 1
estimators = ["tsjbe", "tsjbe-novr", "omp", "sbl", "oracle"]
output = "results"
format = "csv"

[geometry]
scale = "desk"

[channel]
user_paths = 3
bs_paths = 3
snr_db = 20.0
pilots = 64
lambda_vr = 0.875
p01 = 0.35

[estimator]
outer_iterations = 30
gain_iterations = 10
gradient_steps = 5
vr_iterations = 5
offgrid = true
sbl_max_iterations = 200
sbl_tolerance = 1e-3
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    SnrDb,
    Pilots,
    VrSparsity,
    Iterations,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::Pilots => "pilots",
            SweepVar::VrSparsity => "vr_sparsity",
            SweepVar::Iterations => "iterations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "tsjbe")]
    Tsjbe,
    #[serde(rename = "tsjbe-novr")]
    TsjbeNoVr,
    #[serde(rename = "omp")]
    Omp,
    #[serde(rename = "sbl")]
    Sbl,
    #[serde(rename = "oracle")]
    Oracle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Tsjbe,
        EstimatorKind::TsjbeNoVr,
        EstimatorKind::Omp,
        EstimatorKind::Sbl,
        EstimatorKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Tsjbe => "tsjbe",
            EstimatorKind::TsjbeNoVr => "tsjbe-novr",
            EstimatorKind::Omp => "omp",
            EstimatorKind::Sbl => "sbl",
            EstimatorKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| BenchError::config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub output: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub user_paths: usize,
    pub bs_paths: usize,
    pub snr_db: f64,
    pub pilots: usize,
    pub lambda_vr: f64,
    pub p01: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub outer_iterations: usize,
    pub gain_iterations: usize,
    pub gradient_steps: usize,
    pub vr_iterations: usize,
    pub offgrid: bool,
    /// Greedy budget; defaults to `user_paths * bs_paths`.
    #[serde(default)]
    pub omp_sparsity: Option<usize>,
    /// Stop OMP once the relative residual falls below this.
    #[serde(default)]
    pub omp_residual: Option<f64>,
    pub sbl_max_iterations: usize,
    pub sbl_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub geometry: GeometrySection,
    pub channel: ChannelSection,
    pub estimator: EstimatorSection,
}

/// Overlay `top` onto `base`, section by section.
pub fn merge(base: &mut Table, top: Table) -> Result<()> {
    for (section, value) in top {
        match (base.get_mut(&section), value) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
                for (k, v) in src {
                    dst.insert(k, v);
                }
            }
            (None, toml::Value::Table(src)) => {
                base.insert(section, toml::Value::Table(src));
            }
            (_, _) => {
                return Err(BenchError::config(format!("`{section}` must be a [section] of key = value lines")));
            }
        }
    }
    Ok(())
}

pub fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| BenchError::config(e.to_string()))
}

impl ExperimentSpec {
    /// Base config with `layers` applied in order.
    pub fn layered(layers: &[&str]) -> Result<Self> {
        let mut table = parse_table(BASE_CONFIG)?;
        for layer in layers {
            merge(&mut table, parse_table(layer)?)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let spec: ExperimentSpec = table.try_into().map_err(|e: toml::de::Error| BenchError::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(BenchError::config("trials must be at least 1"));
        }
        if e.values.is_empty() {
            return Err(BenchError::config("at least one sweep value is required"));
        }
        let up = e.values.windows(2).all(|w| w[1] > w[0]);
        let down = e.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(BenchError::config("sweep values must be strictly monotone"));
        }
        if e.estimators.is_empty() {
            return Err(BenchError::config("no estimators selected"));
        }
        for &v in &e.values {
            let ok = match e.sweep {
                SweepVar::SnrDb => !v.is_nan(),
                SweepVar::Pilots | SweepVar::Iterations => v >= 1.0 && v.fract() == 0.0,
                SweepVar::VrSparsity => v > 0.0 && v <= 1.0,
            };
            if !ok {
                return Err(BenchError::config(format!("invalid {} value {v}", e.sweep.name())));
            }
        }
        let c = &self.channel;
        if c.user_paths == 0 || c.bs_paths == 0 || c.pilots == 0 {
            return Err(BenchError::config("path and pilot counts must be at least 1"));
        }
        if !(c.lambda_vr > 0.0 && c.lambda_vr <= 1.0) || !(c.p01 > 0.0 && c.p01 < 1.0) {
            return Err(BenchError::config("lambda_vr must lie in (0, 1] and p01 in (0, 1)"));
        }
        let s = &self.estimator;
        if s.outer_iterations == 0 || s.gain_iterations == 0 || s.gradient_steps == 0 || s.vr_iterations == 0 {
            return Err(BenchError::config("iteration counts must be at least 1"));
        }
        if s.omp_sparsity == Some(0) {
            return Err(BenchError::config("omp_sparsity must be at least 1"));
        }
        Ok(())
    }

    /// Serialized form, readable back by [`ExperimentSpec::layered`].
    pub fn to_config_text(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_config_is_valid() {
        let s = ExperimentSpec::layered(&[]).unwrap();
        assert_eq!(s.channel.pilots, 64);
        assert_eq!(s.estimator.outer_iterations, 30);
        assert_eq!(s.experiment.estimators.len(), 5);
        assert_eq!(s.geometry.scale, Scale::Desk);
    }

    #[test]
    fn layers_override_single_keys() {
        let s = ExperimentSpec::layered(&["[channel]\nsnr_db = 5.0\n", "[experiment]\ntrials = 7\n"]).unwrap();
        assert_eq!(s.channel.snr_db, 5.0);
        assert_eq!(s.channel.pilots, 64);
        assert_eq!(s.experiment.trials, 7);
    }

    #[test]
    fn round_trip_through_text() {
        let s = ExperimentSpec::layered(&["[estimator]\nomp_sparsity = 4\n"]).unwrap();
        let back = ExperimentSpec::layered(&[&s.to_config_text()]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            "[experiment]\ntrials = 0\n",
            "[experiment]\nvalues = [0.0, 10.0, 5.0]\n",
            "[experiment]\nvalues = [1.0, 1.0]\n",
            "[experiment]\nsweep = \"pilots\"\nvalues = [16.5]\n",
            "[experiment]\nsweep = \"vr_sparsity\"\nvalues = [0.0, 0.5]\n",
            "[experiment]\nestimators = [\"lasso\"]\n",
            "[channel]\nlambda_vr = 1.5\n",
            "[channel]\nunknown = 1\n",
            "[estimator]\nomp_sparsity = 0\n",
            "stray = 1\n",
        ] {
            assert!(ExperimentSpec::layered(&[bad]).is_err(), "{bad}");
        }
    }

    #[test]
    fn estimator_names_parse() {
        for e in EstimatorKind::ALL {
            assert_eq!(e.name().parse::<EstimatorKind>().unwrap(), e);
        }
        assert!("x".parse::<EstimatorKind>().is_err());
    }
}
