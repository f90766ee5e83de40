//! Command parameter blocks. Each one is both a clap argument group and a
//! JSON config section, so a run can be replayed from its sidecar.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub command: CommandConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommandConfig {
    GenDist(GenDistArgs),
    Predict(PredictArgs),
    Baxter(BaxterArgs),
    Sim(SimArgs),
    Compare(CompareArgs),
    Grid(GridArgs),
    Markov(MarkovArgs),
}

impl ExperimentConfig {
    pub fn new(command: CommandConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
        }
    }

    /// Loads a config file or the sidecar of an output file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let bad = |e: serde_json::Error| CliError::invalid(format!("{}: {e}", path.display()));
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        // A sidecar carries the config under `config`.
        if value.get("schema_version").is_none() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        let cfg: Self = serde_json::from_value(value).map_err(bad)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::invalid(format!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDistArgs {
    /// Number of states.
    #[arg(long)]
    pub m: usize,
    /// Target normalized entropy in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub entropy: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictArgs {
    /// Distribution JSON.
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub n_samples: u64,
    /// Times at which to evaluate the CDF and PDF.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(default)]
    pub tau: Vec<f64>,
    /// Probabilities at which to invert the CDF.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub quantiles: Vec<f64>,
    /// Report the mean (default when nothing else is requested).
    #[arg(long)]
    #[serde(default)]
    pub mean: bool,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_subdivisions: usize,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// CSV of `tau,cdf,pdf` for the requested times.
    #[arg(long)]
    #[serde(default)]
    pub cdf_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaxterArgs {
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub n_samples: u64,
    /// Run above the default state cap.
    #[arg(long)]
    #[serde(default)]
    pub force: bool,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    Resample,
    Sde,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimArgs {
    #[arg(value_enum)]
    pub kind: SimKind,
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub n_samples: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SDE reporting step.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    /// SDE substeps per `dt`.
    #[arg(long, default_value_t = 1)]
    pub substeps: u32,
    /// Step cap; trials reaching it are censored.
    #[arg(long, default_value_t = extinction::sim::DEFAULT_MAX_STEPS)]
    pub max_steps: u64,
    /// Sample CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    /// Sample CSV.
    #[arg(long)]
    pub samples: PathBuf,
    /// Distribution JSON for a test against the law; defaults to the
    /// sample sidecar's.
    #[arg(long, conflicts_with = "samples_b")]
    #[serde(default)]
    pub dist: Option<PathBuf>,
    #[arg(long, conflicts_with = "samples_b")]
    #[serde(default)]
    pub n_samples: Option<u64>,
    /// Second sample CSV for a two-sample test.
    #[arg(long)]
    #[serde(default)]
    pub samples_b: Option<PathBuf>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Overlay CSV of the empirical and theoretical CDFs.
    #[arg(long)]
    #[serde(default)]
    pub overlay_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub m_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<u64>,
    #[arg(long, default_value_t = 1.0)]
    pub entropy: f64,
    #[arg(long, default_value_t = 10)]
    pub dists_per_cell: u64,
    #[arg(long, default_value_t = 100)]
    pub trials_per_dist: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = extinction::sim::DEFAULT_MAX_STEPS)]
    pub max_steps: u64,
    /// Grid CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovArgs {
    #[arg(long)]
    pub states: usize,
    /// Target normalized entropy of the stationary distribution.
    #[arg(long)]
    pub entropy: f64,
    /// Transitions observed per training cycle.
    #[arg(long)]
    pub n_samples: u64,
    #[arg(long, default_value_t = 100)]
    pub runs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = extinction::markov::DEFAULT_MAX_CYCLES)]
    pub max_cycles: u64,
    /// Collapse-time CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Comparison report JSON; stdout when absent.
    #[arg(long)]
    #[serde(default)]
    pub report: Option<PathBuf>,
    /// Chain JSON.
    #[arg(long)]
    #[serde(default)]
    pub chain_out: Option<PathBuf>,
}
