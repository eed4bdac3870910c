//! Run configuration: flat `section.key = value` text files with
//! defaults for every field. Command-line flags override file values and
//! the effective configuration is written next to every stage's outputs.

use crate::diffusion::ConditionMode;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // data
    pub monitoring: PathBuf,
    pub metadata: PathBuf,
    pub weather_cache: PathBuf,
    pub network: PathBuf,
    // ingest
    pub threshold_days: usize,
    pub train_fraction: f64,
    pub loadflow_primary: Option<String>,
    // diffusion
    pub diffusion_steps: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub mode: ConditionMode,
    // denoiser
    pub residual_blocks: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub step_embedding_dim: usize,
    pub ssm_state_dim: usize,
    pub mid_kernel_size: usize,
    // training
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub min_delta: f64,
    // gmm
    pub gmm_k_max: usize,
    pub gmm_restarts: usize,
    // sampling
    pub sample_max_days: usize,
    // metrics
    pub metric_bins: usize,
    pub acf_lag: usize,
    // load flow
    pub lf_tolerance: f64,
    pub lf_max_iterations: usize,
    pub lf_repeats: usize,
    pub lf_band_bus: String,
    // run
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            monitoring: "data/monitoring.csv".into(),
            metadata: "data/metadata.csv".into(),
            weather_cache: "data/weather_cache".into(),
            network: "fixtures/ukgds77.net".into(),
            threshold_days: 10,
            train_fraction: 0.7,
            loadflow_primary: Some("PRIMARY-LF".into()),
            diffusion_steps: 200,
            beta0: 1e-4,
            beta1: 0.02,
            mode: ConditionMode::Wcs,
            residual_blocks: 4,
            residual_channels: 16,
            skip_channels: 16,
            step_embedding_dim: 16,
            ssm_state_dim: 4,
            mid_kernel_size: 3,
            max_epochs: 200,
            batch_size: 16,
            learning_rate: 2e-3,
            patience: 10,
            min_delta: 1e-4,
            gmm_k_max: 4,
            gmm_restarts: 10,
            sample_max_days: 0,
            metric_bins: 50,
            acf_lag: 24,
            lf_tolerance: 1e-8,
            lf_max_iterations: 50,
            lf_repeats: 10,
            lf_band_bus: "F1T4".into(),
            seed: 0,
            jobs: 1,
            out: "runs".into(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let content = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut config = Self::default();
        config.apply_text(&content)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, content: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: lineno + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }
        match key {
            "data.monitoring" => self.monitoring = value.into(),
            "data.metadata" => self.metadata = value.into(),
            "data.weather_cache" => self.weather_cache = value.into(),
            "data.network" => self.network = value.into(),
            "ingest.threshold_days" => self.threshold_days = parse!(usize),
            "ingest.train_fraction" => self.train_fraction = parse!(f64),
            "ingest.loadflow_primary" => {
                self.loadflow_primary =
                    if value.is_empty() { None } else { Some(value.to_string()) }
            }
            "diffusion.steps" => self.diffusion_steps = parse!(usize),
            "diffusion.beta0" => self.beta0 = parse!(f64),
            "diffusion.beta1" => self.beta1 = parse!(f64),
            "diffusion.mode" => self.mode = value.parse().map_err(|e: String| bad(&e))?,
            "denoiser.blocks" => self.residual_blocks = parse!(usize),
            "denoiser.residual_channels" => self.residual_channels = parse!(usize),
            "denoiser.skip_channels" => self.skip_channels = parse!(usize),
            "denoiser.step_embedding" => self.step_embedding_dim = parse!(usize),
            "denoiser.ssm_state" => self.ssm_state_dim = parse!(usize),
            "denoiser.kernel" => self.mid_kernel_size = parse!(usize),
            "train.epochs" => self.max_epochs = parse!(usize),
            "train.batch_size" => self.batch_size = parse!(usize),
            "train.lr" => self.learning_rate = parse!(f64),
            "train.patience" => self.patience = parse!(usize),
            "train.min_delta" => self.min_delta = parse!(f64),
            "gmm.k_max" => self.gmm_k_max = parse!(usize),
            "gmm.restarts" => self.gmm_restarts = parse!(usize),
            "sample.max_days" => self.sample_max_days = parse!(usize),
            "metrics.bins" => self.metric_bins = parse!(usize),
            "metrics.acf_lag" => self.acf_lag = parse!(usize),
            "loadflow.tolerance" => self.lf_tolerance = parse!(f64),
            "loadflow.max_iterations" => self.lf_max_iterations = parse!(usize),
            "loadflow.repeats" => self.lf_repeats = parse!(usize),
            "loadflow.band_bus" => self.lf_band_bus = value.to_string(),
            "run.seed" => self.seed = parse!(u64),
            "run.jobs" => self.jobs = parse!(usize),
            "run.out" => self.out = value.into(),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Render the effective configuration; parsing it back reproduces
    /// the same config.
    pub fn to_kv_string(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("data.monitoring".into(), self.monitoring.display().to_string()),
            ("data.metadata".into(), self.metadata.display().to_string()),
            ("data.weather_cache".into(), self.weather_cache.display().to_string()),
            ("data.network".into(), self.network.display().to_string()),
            ("ingest.threshold_days".into(), self.threshold_days.to_string()),
            ("ingest.train_fraction".into(), self.train_fraction.to_string()),
            (
                "ingest.loadflow_primary".into(),
                self.loadflow_primary.clone().unwrap_or_default(),
            ),
            ("diffusion.steps".into(), self.diffusion_steps.to_string()),
            ("diffusion.beta0".into(), self.beta0.to_string()),
            ("diffusion.beta1".into(), self.beta1.to_string()),
            ("diffusion.mode".into(), self.mode.to_string()),
            ("denoiser.blocks".into(), self.residual_blocks.to_string()),
            ("denoiser.residual_channels".into(), self.residual_channels.to_string()),
            ("denoiser.skip_channels".into(), self.skip_channels.to_string()),
            ("denoiser.step_embedding".into(), self.step_embedding_dim.to_string()),
            ("denoiser.ssm_state".into(), self.ssm_state_dim.to_string()),
            ("denoiser.kernel".into(), self.mid_kernel_size.to_string()),
            ("train.epochs".into(), self.max_epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.lr".into(), self.learning_rate.to_string()),
            ("train.patience".into(), self.patience.to_string()),
            ("train.min_delta".into(), self.min_delta.to_string()),
            ("gmm.k_max".into(), self.gmm_k_max.to_string()),
            ("gmm.restarts".into(), self.gmm_restarts.to_string()),
            ("sample.max_days".into(), self.sample_max_days.to_string()),
            ("metrics.bins".into(), self.metric_bins.to_string()),
            ("metrics.acf_lag".into(), self.acf_lag.to_string()),
            ("loadflow.tolerance".into(), self.lf_tolerance.to_string()),
            ("loadflow.max_iterations".into(), self.lf_max_iterations.to_string()),
            ("loadflow.repeats".into(), self.lf_repeats.to_string()),
            ("loadflow.band_bus".into(), self.lf_band_bus.clone()),
            ("run.seed".into(), self.seed.to_string()),
            ("run.jobs".into(), self.jobs.to_string()),
            ("run.out".into(), self.out.display().to_string()),
        ];
        pairs.sort();
        let mut out = String::new();
        let mut last_section = String::new();
        for (k, v) in pairs {
            let section = k.split('.').next().unwrap_or("").to_string();
            if section != last_section {
                if !last_section.is_empty() {
                    out.push('\n');
                }
                last_section = section;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Override map applied after any file, e.g. from CLI flags.
    pub fn apply_overrides(
        &mut self,
        overrides: &BTreeMap<String, String>,
    ) -> Result<(), ConfigError> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }
}
