//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! n_particles = 512
//! n_steps = 300
//! replicates = 50
//! policies = ["arpf:0.9", "greedy:0.9"]
//!
//! [model]
//! kind = "stochastic-volatility"
//! a = 0.9
//! sigma = 0.25
//! epsilon = 0.1
//! ```
//!
//! Every field is optional; see [`ExperimentConfig::default`].

use std::path::{Path, PathBuf};

use alpha_smc::{
    split_seed, Emission, FiniteStateModel, HmmModel, LinearGaussianModel, ModelSpec, ObservationRecord, PolicySpec,
    StochasticVolatilityModel, TestFunction,
};
use serde::Deserialize;

use crate::error::{config_err, Result};

/// Sub-stream of the master seed used to simulate data.
pub const DATA_STREAM: u64 = u64::MAX;
/// Sub-stream of the master seed used for reference filters.
pub const REFERENCE_STREAM: u64 = u64::MAX - 1;

/// Where MSE reference values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Exact filter and predictor where the model permits, large bootstrap filter otherwise.
    #[default]
    Auto,
    /// Large bootstrap filter for every estimand.
    Bpf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model; each command falls back to its own default when absent.
    pub model: Option<ModelSpec>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Observation CSV (`t,y`); simulated from the model when absent.
    pub data: Option<PathBuf>,
    pub data_seed: Option<u64>,
    pub n_particles: usize,
    pub n_steps: usize,
    pub replicates: usize,
    /// Explicit policies, e.g. `bpf`, `arpf:0.6`, `greedy:0.9`, `blocks:4`.
    pub policies: Vec<String>,
    /// Threshold grid crossed with `sweep_rules` (`arpf`, `simple`, `random`, `greedy`).
    pub taus: Vec<f64>,
    pub sweep_rules: Vec<String>,
    pub test_functions: Vec<TestFunction>,
    pub lag: usize,
    pub burn_in: usize,
    pub reference: ReferenceKind,
    pub reference_particles: usize,
    pub reference_seed: Option<u64>,
    /// Block size `q` and block count `s` of the naive-averaging demo.
    pub block_size: usize,
    pub blocks: usize,
    /// Inclusive step range written by `trace`.
    pub window: Option<(usize, usize)>,
    pub star_laziness: Vec<f64>,
    pub star_gap: usize,
    pub star_sizes: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            seed: 1,
            out_dir: None,
            data: None,
            data_seed: None,
            n_particles: 512,
            n_steps: 300,
            replicates: 50,
            policies: Vec::new(),
            taus: vec![0.6],
            sweep_rules: ["arpf", "simple", "random", "greedy"].map(String::from).to_vec(),
            test_functions: TestFunction::ALL.to_vec(),
            lag: 5,
            burn_in: 30,
            reference: ReferenceKind::Auto,
            reference_particles: 1 << 15,
            reference_seed: None,
            block_size: 4,
            blocks: 512,
            window: None,
            star_laziness: vec![0.0, 0.5],
            star_gap: 10,
            star_sizes: (4..=10).map(|k| 1usize << k).collect(),
        }
    }
}

/// Stochastic volatility with `a = 0.9`, `sigma = 0.25`, `epsilon = 0.1`.
pub fn default_sv_model() -> StochasticVolatilityModel {
    StochasticVolatilityModel::new(0.9, 0.25, 0.1).expect("valid parameters")
}

/// Two sticky states observed through unit-variance Gaussian noise around -1 and +1.
pub fn default_finite_model() -> FiniteStateModel {
    FiniteStateModel::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        Emission::Gaussian { means: vec![-1.0, 1.0], sd: 1.0 },
    )
    .expect("valid parameters")
}

/// Random walk with no state noise, so every particle keeps its initial value.
pub fn default_delta_model() -> LinearGaussianModel {
    LinearGaussianModel::new(1.0, 0.0, 1.0, 1.0, 0.0, 1.0).expect("valid parameters")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if self.n_particles == 0 {
            return Err(config_err("n_particles must be at least 1"));
        }
        if self.replicates == 0 {
            return Err(config_err("replicates must be at least 1"));
        }
        if self.test_functions.is_empty() {
            return Err(config_err("at least one test function is required"));
        }
        if self.taus.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(config_err("every threshold must lie in (0, 1]"));
        }
        self.policy_list()?;
        if let Some((a, b)) = self.window {
            if a > b {
                return Err(config_err(format!("empty window [{a}, {b}]")));
            }
        }
        Ok(())
    }

    /// Explicit policies followed by the `sweep_rules x taus` grid.
    pub fn policy_list(&self) -> Result<Vec<PolicySpec>> {
        let mut out = Vec::new();
        for p in &self.policies {
            out.push(p.parse::<PolicySpec>()?);
        }
        for tau in &self.taus {
            for rule in &self.sweep_rules {
                out.push(format!("{rule}:{tau}").parse::<PolicySpec>()?);
            }
        }
        if out.is_empty() {
            return Err(config_err("no policies configured"));
        }
        Ok(out)
    }

    pub fn model_or(&self, default: impl FnOnce() -> ModelSpec) -> ModelSpec {
        self.model.clone().unwrap_or_else(default)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or_else(|| split_seed(self.seed, DATA_STREAM))
    }

    pub fn reference_seed(&self) -> u64 {
        self.reference_seed.unwrap_or_else(|| split_seed(self.seed, REFERENCE_STREAM))
    }

    /// Seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        split_seed(self.seed, r as u64)
    }

    /// Reads the configured data file or simulates `len` observations.
    pub fn observations<M: HmmModel<Observation = f64>>(&self, model: &M, len: usize) -> Result<ObservationRecord> {
        let record = match &self.data {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                ObservationRecord::read_csv(std::io::BufReader::new(file), model.tag())?
            }
            None => alpha_smc::simulate_data(model, len, self.data_seed())?.1,
        };
        record.validate_for(model)?;
        if record.len() < len {
            return Err(config_err(format!("data holds {} observations, {len} needed", record.len())));
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 7
            n_particles = 512
            n_steps = 300
            replicates = 50
            policies = ["arpf:0.9", "greedy:0.9"]
            sweep_rules = []
            test_functions = ["x", "exp_half"]

            [model]
            kind = "stochastic-volatility"
            a = 0.9
            sigma = 0.25
            epsilon = 0.1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.policy_list().unwrap().len(), 2);
        assert_eq!(cfg.model, Some(ModelSpec::StochasticVolatility(default_sv_model())));
        assert_eq!(cfg.test_functions, vec![TestFunction::Identity, TestFunction::ExpHalf]);
    }

    #[test]
    fn finite_state_model_from_toml() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            [model]
            kind = "finite-state"
            prior = [0.5, 0.5]
            transition = [[0.9, 0.1], [0.1, 0.9]]
            emission = { kind = "gaussian", means = [-1.0, 1.0], sd = 1.0 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.model, Some(ModelSpec::FiniteState(default_finite_model())));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("replicates = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("policies = [\"nope\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("taus = [1.5]").is_err());
        assert!(ExperimentConfig::from_toml_str("[model]\nkind = \"stochastic-volatility\"\na = 1.0\nsigma = 1.0\nepsilon = 1.0").is_err());
        assert!(ExperimentConfig::from_toml_str("window = [5, 2]").is_err());
    }

    #[test]
    fn default_sweep_covers_four_policies() {
        let cfg = ExperimentConfig::default();
        let names: Vec<String> = cfg.policy_list().unwrap().iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["arpf:0.6", "simple:0.6", "random:0.6", "greedy:0.6"]);
    }
}
