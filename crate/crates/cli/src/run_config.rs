//! Optional run-config file. Precedence everywhere: command-line flags,
//! then this file, then built-in defaults.

use std::path::{Path, PathBuf};

use photongest_core::Error;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub arch: Option<String>,
    pub ambient: Option<f64>,
    pub seeds: Option<usize>,
    pub val_ratio: Option<f64>,
    pub training: TrainTable,
    pub synth: SynthTable,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainTable {
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps_adam: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub timesteps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTable {
    pub per_class: Option<usize>,
    pub rotation_deg: Option<f64>,
    pub photon_budget: Option<f64>,
    pub background_rate: Option<f64>,
    pub render_size: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, Error> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Domain(format!("run config {}: {e}", path.display())))
    }

    /// Output directory: flag, then config, then $PHOTONGEST_OUT_DIR,
    /// then the working directory.
    pub fn resolve_out(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os("PHOTONGEST_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// flag > config > default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
