//! Run configuration files.
//!
//! A run is described by one TOML file with a `[dataset]`, `[model]` and
//! `[train]` table, plus an optional `[ablate]` table for sweeps. Everything
//! except the dataset has defaults. The resolved file written beside each
//! run's outputs has every default spelled out, and reloading it repeats the
//! run exactly.

use std::path::{Path, PathBuf};

use bifm::data::Dataset;
use bifm::flow::{TimeSampler, TrainConfig, Weighting};
use bifm::model::{ModelConfig, TimeParamMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: Dataset,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablate: Option<AblateConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// The base run plus every other value of each axis with the remaining
    /// axes held at their base values.
    OneAtATime,
    /// The full Cartesian product of the axis lists.
    Grid,
}

/// Axis values for a sweep. The base run's own settings are always part of
/// each axis and come first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub mode: SweepMode,
    pub time_param_modes: Vec<TimeParamMode>,
    pub time_samplers: Vec<TimeSampler>,
    pub weightings: Vec<Weighting>,
    pub loss_ps: Vec<f64>,
    /// Size of the one-step sample and of the reference batch it is
    /// compared with.
    pub eval_n: usize,
    /// Points reconstructed at each step budget.
    pub recon_n: usize,
    pub eval_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            mode: SweepMode::OneAtATime,
            time_param_modes: vec![
                TimeParamMode::TTpDirection,
                TimeParamMode::DeltaOnly,
                TimeParamMode::TAndTp,
                TimeParamMode::TAndDelta,
            ],
            time_samplers: vec![
                TimeSampler::Uniform,
                TimeSampler::LogitNormal { mu: -0.4, sigma: 1.2 },
                TimeSampler::LogitNormal { mu: -0.2, sigma: 1.0 },
                TimeSampler::LogitNormal { mu: -0.4, sigma: 1.0 },
            ],
            weightings: vec![
                Weighting::Linear { w_max: 1.0 },
                Weighting::Sin { w_max: 1.0 },
                Weighting::Log { w_max: 1.0 },
                Weighting::Warmup {
                    ramp_steps: None,
                    w_max: 1.0,
                },
            ],
            loss_ps: vec![0.0, 2.0, 0.5, 1.0],
            eval_n: 2000,
            recon_n: 1000,
            eval_seed: 1,
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn new(dataset: Dataset) -> Self {
        Self {
            output_dir: default_output_dir(),
            dataset,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablate: None,
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        // toml reports the line and column of the offending token.
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }

    /// Fills in the dataset-derived model fields, applies a seed override
    /// and validates every section.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Self> {
        if let Some(seed) = seed_override {
            self.train.seed = seed;
        }
        self.dataset.validate()?;
        self.model.data_dim = self.dataset.dim();
        self.model.num_labels = self.dataset.num_labels();
        self.model.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.ablate {
            a.validate()?;
        }
        Ok(self)
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

impl AblateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_n < 2 || self.recon_n == 0 {
            return Err(CliError::Usage("ablate needs eval_n >= 2 and recon_n >= 1".into()));
        }
        if self.loss_ps.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CliError::Usage("ablate loss_ps must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Reads `BIFM_SEED`; an unparsable value is a usage error.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var("BIFM_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("BIFM_SEED must be an unsigned integer, got {s:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("BIFM_SEED: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"

[dataset]
kind = "gaussian"
mean = [2.0, 0.0]
std = 0.5
"#;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("a.toml")).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.model, ModelConfig::default());
        assert!(cfg.ablate.is_none());
    }

    #[test]
    fn resolved_text_reparses_to_the_same_config() {
        let mut cfg = RunConfig::parse(MINIMAL, Path::new("a.toml"))
            .unwrap()
            .resolve(Some(7))
            .unwrap();
        cfg.ablate = Some(AblateConfig::default());
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&text, Path::new("b.toml")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(back.train.seed, 7);
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err =
            RunConfig::parse("[dataset]\nkind = \"gaussian\"\nmean = [1.0,\n", Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("line"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[train]\nstep = 3\n");
        assert!(RunConfig::parse(&text, Path::new("a.toml")).is_err());
    }

    #[test]
    fn resolution_derives_the_model_shape() {
        let cfg = RunConfig::new(Dataset::two_mode(0.3)).resolve(None).unwrap();
        assert_eq!((cfg.model.data_dim, cfg.model.num_labels), (2, 2));
        let bad = RunConfig::new(Dataset::gaussian(vec![], 1.0));
        assert!(bad.resolve(None).is_err());
    }
}
