//! Experiment description files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::engine::Cadence;
use crate::libsvm;
use crate::ordering::OrderingStrategy;
use crate::problems::{self, FiniteSumProblem, DEFAULT_EIG_RANGE};
use crate::variance::SamplingMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Convergence,
    TminVsN,
    VarianceProfile,
    BoundCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Convergence => "convergence",
            Mode::TminVsN => "tmin_vs_n",
            Mode::VarianceProfile => "variance_profile",
            Mode::BoundCheck => "bound_check",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CadenceConfig {
    #[default]
    Epoch,
    Iteration,
}

impl From<CadenceConfig> for Cadence {
    fn from(c: CadenceConfig) -> Cadence {
        match c {
            CadenceConfig::Epoch => Cadence::PerEpoch,
            CadenceConfig::Iteration => Cadence::PerIteration,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingConfig {
    #[default]
    Auto,
    Sampled,
    Exhaustive,
}

impl From<SamplingConfig> for SamplingMode {
    fn from(s: SamplingConfig) -> SamplingMode {
        match s {
            SamplingConfig::Auto => SamplingMode::Auto,
            SamplingConfig::Sampled => SamplingMode::Sampled,
            SamplingConfig::Exhaustive => SamplingMode::Exhaustive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Quadratic {
        d: usize,
        n: usize,
        sigma_sgd_sq: f64,
        #[serde(default = "default_eig_range")]
        eig_range: [f64; 2],
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        /// LIBSVM file, relative to the config file.
        path: PathBuf,
        /// Keep this many uniformly chosen rows.
        #[serde(default)]
        subsample: Option<usize>,
        #[serde(default)]
        subsample_seed: u64,
        /// Fixed feature dimension.
        #[serde(default)]
        dim: Option<usize>,
        /// Per-feature max-abs scaling.
        #[serde(default)]
        scale: bool,
    },
}

fn default_eig_range() -> [f64; 2] {
    DEFAULT_EIG_RANGE
}

fn default_epochs() -> usize {
    10
}

fn default_repeats() -> usize {
    1
}

fn default_num_orderings() -> usize {
    crate::variance::DEFAULT_NUM_ORDERINGS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// CSV destination, relative to the config file.
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub problem: ProblemConfig,
    pub strategies: Vec<String>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub tau_list: Vec<usize>,
    #[serde(default = "default_num_orderings")]
    pub num_orderings: usize,
    /// Extra probe points taken from a reference run, beyond `x = 0`.
    #[serde(default)]
    pub probes: usize,
    #[serde(default)]
    pub cadence: CadenceConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    /// SHA-256 of the canonical TOML form, ignoring the worker count and the
    /// output location.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = None;
        canon.output = PathBuf::new();
        let text = toml::to_string(&canon).expect("config serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn parsed_strategies(&self) -> Result<Vec<OrderingStrategy>, HarnessError> {
        self.strategies
            .iter()
            .map(|s| {
                let s = match s.strip_prefix("explicit:") {
                    Some(p) => format!("explicit:{}", self.resolve(Path::new(p)).display()),
                    None => s.clone(),
                };
                OrderingStrategy::parse(&s).map_err(|e| HarnessError::Config(e.to_string()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.strategies.is_empty() {
            return fail("at least one strategy is required");
        }
        self.parsed_strategies()?;
        if self.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return fail("all gammas must be positive and finite");
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1");
        }
        match self.mode {
            Mode::Convergence | Mode::BoundCheck if self.gammas.is_empty() => fail("gammas are required"),
            Mode::TminVsN if self.gammas.is_empty() => fail("gammas are required"),
            Mode::TminVsN if !self.eps.is_some_and(|e| e > 0.0) => fail("tmin_vs_n needs a positive eps"),
            Mode::TminVsN if self.n_values.is_empty() => fail("tmin_vs_n needs n_values"),
            Mode::VarianceProfile if self.tau_list.is_empty() => fail("variance_profile needs tau_list"),
            Mode::VarianceProfile if self.tau_list.contains(&0) || self.tau_list.windows(2).any(|w| w[0] > w[1]) => {
                fail("tau_list must be ascending with entries >= 1")
            }
            Mode::VarianceProfile if self.num_orderings == 0 => fail("num_orderings must be at least 1"),
            _ => Ok(()),
        }
    }

    /// Builds the problem, optionally overriding the component count.
    pub fn build_problem(&self, n_override: Option<usize>) -> Result<Box<dyn FiniteSumProblem>, HarnessError> {
        match &self.problem {
            ProblemConfig::Quadratic {
                d,
                n,
                sigma_sgd_sq,
                eig_range,
                seed,
            } => {
                let p = problems::quadratic_new(*d, n_override.unwrap_or(*n), *sigma_sgd_sq, *eig_range, *seed)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                Ok(Box::new(p))
            }
            ProblemConfig::Logistic {
                path,
                subsample,
                subsample_seed,
                dim,
                scale,
            } => {
                let config_err = |e: String| HarnessError::Config(e);
                let mut ds = libsvm::load(&self.resolve(path)).map_err(|e| config_err(e.to_string()))?;
                if *scale {
                    ds = ds.max_abs_scaled();
                }
                let full_d = ds.d;
                if let Some(m) = n_override.or(*subsample) {
                    ds = ds.subsample(m, *subsample_seed).map_err(|e| config_err(e.to_string()))?;
                    ds.d = full_d;
                }
                if let Some(d) = dim {
                    ds = ds.with_dim(*d).map_err(|e| config_err(e.to_string()))?;
                }
                let p = problems::logistic_from_dataset(&ds).map_err(|e| config_err(e.to_string()))?;
                Ok(Box::new(p))
            }
        }
    }
}
