//! TOML run configuration. Every field is optional; command-line flags are
//! applied on top of the file, so flags win.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smmh::evaluation::Aggregation;
use smmh::learner::TrainConfig;
use smmh::risk::FilterConfig;
use smmh::sampler::SampleConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: Option<u64>,
    pub sample: SampleSection,
    pub fit: FitSection,
    pub score: FilterConfig,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSection {
    pub n_episodes: usize,
    /// Also write the latent state paths.
    pub truth: bool,
    #[serde(flatten)]
    pub sampler: SampleConfig,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n_episodes: 100, truth: true, sampler: SampleConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    /// Candidate state counts for BIC selection; empty fits `n_states` only.
    pub state_grid: Vec<usize>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub aggregation: Aggregation,
    pub thresholds: Vec<f64>,
    /// Sampling-rate curve: hours before censoring, bin width, and the final
    /// window compared by the Welch test.
    pub horizon: f64,
    pub bin: f64,
    pub test_window: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Max,
            thresholds: (1..20).map(|k| k as f64 / 20.0).collect(),
            horizon: 48.0,
            bin: 2.0,
            test_window: 24.0,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// `max`, `final`, or `at:<hours>`.
pub fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    match s {
        "max" => Ok(Aggregation::Max),
        "final" => Ok(Aggregation::Final),
        _ => s
            .strip_prefix("at:")
            .and_then(|h| h.parse::<f64>().ok())
            .filter(|h| h.is_finite())
            .map(Aggregation::AtTime)
            .ok_or_else(|| format!("expected max, final or at:<hours>, got {s:?}")),
    }
}
