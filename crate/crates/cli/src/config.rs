use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sqvar::dgp::{crossing_grid, DEFAULT_BURN_IN};
use sqvar::irf::DEFAULT_N_SIM;
use sqvar::select::EstimationConfig;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Study1,
    Study2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub dgp: DgpKind,
    /// Coefficient scale divisor of the first design.
    pub b: u32,
    pub t: usize,
    pub burn_in: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            dgp: DgpKind::Study1,
            b: 1,
            t: 600,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrfConfig {
    /// Model JSON, or a run directory containing `fits/model.json`.
    pub fit: Option<PathBuf>,
    /// Shocked series, 1-based.
    pub shocked: usize,
    pub tau_star: f64,
    pub horizon: usize,
    pub n_sim: usize,
    pub common_random_numbers: bool,
    pub clamp_to_bounds: bool,
    /// Use this equicorrelation instead of estimating it from the ranks.
    pub kappa: Option<f64>,
}

impl Default for IrfConfig {
    fn default() -> Self {
        Self {
            fit: None,
            shocked: 1,
            tau_star: 0.9,
            horizon: 20,
            n_sim: DEFAULT_N_SIM,
            common_random_numbers: true,
            clamp_to_bounds: false,
            kappa: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub fit: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    /// Baseline rank path; the median at every step when absent.
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenSection {
    /// Response series, 1-based.
    pub equation: usize,
    pub lag_order: usize,
    pub taus: Vec<f64>,
    pub nu: Option<f64>,
    pub top_k: Option<usize>,
}

impl Default for ScreenSection {
    fn default() -> Self {
        Self {
            equation: 1,
            lag_order: 2,
            taus: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            nu: None,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Experiment manifest to run.
    pub manifest: Option<PathBuf>,
    /// Previously written replication records to summarize instead.
    pub records: Option<PathBuf>,
}

/// Everything a run needs; written to `config.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub has_header: bool,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Levels at which coefficient curves and crossings are reported.
    pub eval_taus: Vec<f64>,
    pub estimation: EstimationConfig,
    pub simulate: SimulateConfig,
    pub irf: IrfConfig,
    pub scenario: ScenarioConfig,
    pub screen: ScreenSection,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            has_header: true,
            out: None,
            seed: 1,
            threads: None,
            eval_taus: crossing_grid(),
            estimation: EstimationConfig::default(),
            simulate: SimulateConfig::default(),
            irf: IrfConfig::default(),
            scenario: ScenarioConfig::default(),
            screen: ScreenSection::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    /// TOML unless the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let bad = |msg: String| CliError::Config {
            path: path.display().to_string(),
            msg,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("an output directory is required (--out or `out` in the config)".into()))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("an input CSV is required (--data or `data` in the config)".into()))
    }
}

/// Resolve `--fit` given either the model file or a run directory.
pub fn model_path(fit: Option<&Path>) -> Result<PathBuf> {
    let fit = fit.ok_or_else(|| CliError::Usage("a fitted model is required (--fit)".into()))?;
    if fit.is_dir() {
        Ok(fit.join("fits").join("model.json"))
    } else {
        Ok(fit.to_path_buf())
    }
}
