use std::path::Path;

use rnnid::experiment::ExperimentSpec;
use rnnid::ident::{OptimizerSpec, RunConfig};
use rnnid::optim::{AdamHyperParams, GainSchedule};
use rnnid::plant::{InputGenSpec, PlantSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    #[serde(default = "one")]
    pub n_runs: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self { n_runs: 1, master_seed: 0 }
    }
}

fn one() -> usize {
    1
}

/// Frozen-parameter checks run by `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Total samples per estimate, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    /// Parameters to freeze; the run's initialization is used when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "standard_adam")]
    pub standard: AdamHyperParams,
    #[serde(default = "sign_sign_adam")]
    pub sign_sign: AdamHyperParams,
}

fn yes() -> bool {
    true
}

fn standard_adam() -> AdamHyperParams {
    AdamHyperParams { beta2: 0.9999, ..AdamHyperParams::default() }
}

fn sign_sign_adam() -> AdamHyperParams {
    AdamHyperParams::sign_sign(GainSchedule::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    pub optimizer: OptimizerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    #[serde(default)]
    pub input: InputGenSpec,
    pub run: RunConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloSpec,
    #[serde(default)]
    pub analysis: Option<AnalysisSpec>,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse errors name the offending field path, e.g. `run.optimizer.beta1`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |section: &str, e: rnnid::Error| CliError::Config(format!("{section}: {e}"));
        self.plant.validate().map_err(|e| invalid("plant", e))?;
        self.input.validate().map_err(|e| invalid("input", e))?;
        self.run.validate().map_err(|e| invalid("run", e))?;
        if self.run.model.n_inputs() != 1 {
            return Err(CliError::Config("run.model: generated data carries exactly one input".into()));
        }
        if self.monte_carlo.n_runs == 0 {
            return Err(CliError::Config("monte_carlo.n_runs must be >= 1".into()));
        }
        if let Some(a) = &self.analysis {
            a.standard.validate().map_err(|e| invalid("analysis.standard", e))?;
            a.sign_sign.validate().map_err(|e| invalid("analysis.sign_sign", e))?;
            if let Some(theta) = &a.theta {
                if theta.len() != self.run.model.n_params() {
                    return Err(CliError::Config(format!(
                        "analysis.theta: expected {} parameters, got {}",
                        self.run.model.n_params(),
                        theta.len()
                    )));
                }
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, v) in self.variants.iter().enumerate() {
            let ok = !v.name.is_empty() && v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(CliError::Config(format!(
                    "variants[{i}].name must be non-empty and use only [A-Za-z0-9_-], got {:?}",
                    v.name
                )));
            }
            if !names.insert(v.name.as_str()) {
                return Err(CliError::Config(format!("variants[{i}].name {:?} is duplicated", v.name)));
            }
            v.optimizer.validate().map_err(|e| invalid(&format!("variants[{i}].optimizer"), e))?;
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.monte_carlo.master_seed = s;
        }
        self
    }

    pub fn experiment(&self) -> ExperimentSpec {
        ExperimentSpec { plant: self.plant.clone(), input: self.input, run: self.run.clone() }
    }

    pub fn variant_experiment(&self, v: &VariantSpec) -> ExperimentSpec {
        let mut spec = self.experiment();
        spec.run.optimizer = v.optimizer;
        spec
    }
}
