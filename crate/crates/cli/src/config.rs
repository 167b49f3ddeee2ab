//! File-backed experiment configuration. Command-line flags are applied on
//! top of the values read here.

use std::path::{Path, PathBuf};

use fnirvar::backtest::BacktestConfig;
use fnirvar::dgp::{DgpOverrides, Study};
use fnirvar::study::EigengapConfig;
use fnirvar::{FactorOptions, Layout, NirvarOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; overrides the per-section seeds when set.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub simulate: SimulateConfig,
    pub estimate: EstimateConfig,
    pub backtest: BacktestConfig,
    pub eigengap: EigengapConfig,
}

/// Input panel and preprocessing for `estimate` and `backtest`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub input: Option<PathBuf>,
    pub layout: Layout,
    /// Dollar-volume panel for value weights, same shape as the returns.
    pub volumes: Option<PathBuf>,
    /// Series subtracted from every other series and then dropped.
    pub market_id: Option<String>,
    /// Entries with larger magnitude are set to zero.
    pub clip_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub study: Study,
    pub n: usize,
    pub t: usize,
    pub burn_in: usize,
    pub reps: usize,
    pub seed: u64,
    pub dgp: DgpOverrides,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            study: Study::NetworkFactor,
            n: 100,
            t: 1500,
            burn_in: fnirvar::simulator::DEFAULT_BURN_IN,
            reps: 1,
            seed: 0,
            dgp: DgpOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub factors: FactorOptions,
    pub nirvar: NirvarOptions,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}
