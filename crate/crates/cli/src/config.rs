//! Command configuration documents.

use std::path::{Path, PathBuf};

use mqrm::ensemble::{EnsembleSpec, GridSpec};
use mqrm::model::ModelFile;
use mqrm::{ModelSpec, PrecisionMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A model given inline or as a path relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelFile),
}

impl ModelSource {
    /// Inline form, reading the file if needed.
    pub fn resolve(&self, base: &Path) -> Result<ModelFile, CliError> {
        match self {
            ModelSource::Inline(m) => Ok(m.clone()),
            ModelSource::Path(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("model {}: {e}", path.display())))
            }
        }
    }
}

pub fn model_spec(file: &ModelFile) -> Result<ModelSpec, CliError> {
    ModelSpec::try_from(file.clone()).map_err(CliError::from)
}

fn default_theta() -> usize {
    mqrm::adiabatic::DEFAULT_THETA
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub model: ModelSource,
    /// Largest singular value at each sweep point.
    pub g_values: Vec<f64>,
    #[serde(default = "default_theta")]
    pub theta: usize,
    /// Fock cutoff of the exact spectra; converged per point when absent.
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Lowest levels written per point; all when absent.
    #[serde(default)]
    pub levels: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfiConfig {
    pub model: ModelSource,
    /// Rescale the coupling to this largest singular value.
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_theta")]
    pub theta: usize,
    #[serde(default)]
    pub precision: PrecisionMode,
    #[serde(default)]
    pub with_exact: bool,
    #[serde(default)]
    pub exact_n_max: Option<usize>,
    #[serde(default)]
    pub tls_trace: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub n_max: Option<usize>,
    /// Also evaluate the thermal QFI on this grid.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub precision: PrecisionMode,
}

fn default_degeneracies() -> Vec<usize> {
    vec![1, 50, 1000]
}

fn one() -> f64 {
    1.0
}

fn ideal_grid() -> GridSpec {
    GridSpec { log10_min: -2.0, log10_max: 1.0, points: 400 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdealConfig {
    #[serde(default = "default_degeneracies")]
    pub degeneracies: Vec<usize>,
    #[serde(default = "one")]
    pub gap: f64,
    #[serde(default = "ideal_grid")]
    pub grid: GridSpec,
}

impl Default for IdealConfig {
    fn default() -> Self {
        IdealConfig { degeneracies: default_degeneracies(), gap: 1.0, grid: ideal_grid() }
    }
}

fn default_bin_width() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WishartConfig {
    pub m: usize,
    pub n: usize,
    #[serde(default = "two")]
    pub beta: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
}

fn two() -> f64 {
    2.0
}

impl Default for WishartConfig {
    fn default() -> Self {
        WishartConfig { m: 5, n: 10, beta: 2.0, trials: 10_000, seed: 0, bin_width: 0.02 }
    }
}

fn peak_ratio_grid() -> GridSpec {
    GridSpec { log10_min: -3.0, log10_max: 1.0, points: 800 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakRatioConfig {
    pub d_g: usize,
    pub dark_counts: Vec<usize>,
    pub couplings: Vec<f64>,
    pub omega_a: f64,
    #[serde(default = "peak_ratio_grid")]
    pub grid: GridSpec,
}

/// Load a command document, accepting either the bare config or a manifest wrapping it.
pub fn load<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let doc = match value {
        serde_json::Value::Object(ref map) if map.contains_key("command") && map.contains_key("config") => {
            if map["command"] != command {
                return Err(CliError::Config(format!("manifest was written by '{}', not '{command}'", map["command"])));
            }
            map["config"].clone()
        }
        other => other,
    };
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn ensemble_spec(path: &Path) -> Result<EnsembleSpec, CliError> {
    load(path, "ensemble")
}
