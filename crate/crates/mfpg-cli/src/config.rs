//! Strict JSON experiment configs shared by the train / check / probe
//! subcommands. Unknown keys are rejected so a typo in a hyperparameter name
//! cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use mfpg_core::bandit::{crosscheck_mdp, BanditSpec};
use mfpg_core::{
    FeatureMap, FeatureSpec, FiniteMdp, FlowConfig, GaussianPrior, ParticleCloud,
    StateDistribution,
};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to an MDP JSON file (relative paths resolve against the config).
    pub mdp: Option<PathBuf>,
    /// Inline bandit spec; mutually exclusive with `mdp`. The MDP and feature
    /// are then the discretized bandit cross-check.
    pub bandit: Option<BanditSpec>,
    /// Action grid size for the bandit cross-check (default 64).
    pub grid: Option<usize>,
    pub feature: Option<FeatureSpec>,
    pub flow: FlowParams,
    pub prior: PriorParams,
    /// Initial state distribution; defaults to the MDP's rho.
    pub rho: Option<Vec<f64>>,
    /// Optional reference cloud file for the w2_to_ref diagnostic.
    pub reference_cloud: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub tau: f64,
    pub sigma: f64,
    pub eta: f64,
    pub m: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorParams {
    /// Prior mean; defaults to the origin in parameter space.
    pub mean: Option<Vec<f64>>,
    pub sigma: f64,
}

pub struct Experiment {
    pub mdp: FiniteMdp,
    pub feature: Box<dyn FeatureMap>,
    pub flow: FlowConfig,
    pub rho: StateDistribution,
    pub reference: Option<ParticleCloud>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("malformed config {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn build_experiment(config_path: &Path, cfg: &ExperimentConfig) -> Result<Experiment, CliError> {
    let (mdp, feature): (FiniteMdp, Box<dyn FeatureMap>) = match (&cfg.mdp, &cfg.bandit) {
        (Some(_), Some(_)) => {
            return Err(CliError::validation(
                "config sets both mdp and bandit; pick one".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::validation(
                "config needs either an mdp path or an inline bandit spec".into(),
            ))
        }
        (Some(mdp_path), None) => {
            let full = resolve(config_path, mdp_path);
            let mdp = FiniteMdp::load_json(&full)
                .map_err(|e| CliError::validation(format!("mdp file {}: {e}", full.display())))?;
            let spec = cfg.feature.as_ref().ok_or_else(|| {
                CliError::validation("config with an mdp needs a feature spec".into())
            })?;
            let feature = spec
                .build(mdp.n_states, mdp.n_actions)
                .map_err(CliError::from_validation)?;
            (mdp, feature)
        }
        (None, Some(spec)) => {
            if cfg.feature.is_some() {
                return Err(CliError::validation(
                    "the bandit cross-check defines its own feature; drop the feature key".into(),
                ));
            }
            let grid = cfg.grid.unwrap_or(64);
            let (mdp, feature) =
                crosscheck_mdp(spec, grid).map_err(CliError::from_validation)?;
            (mdp, Box::new(feature))
        }
    };

    let dim = feature.param_dim();
    let prior_mean = match &cfg.prior.mean {
        Some(m) => {
            if m.len() != dim {
                return Err(CliError::validation(format!(
                    "prior mean has dimension {}, feature parameters have {dim}",
                    m.len()
                )));
            }
            m.clone()
        }
        None => vec![0.0; dim],
    };
    let prior =
        GaussianPrior::new(prior_mean, cfg.prior.sigma).map_err(CliError::from_validation)?;

    let flow = FlowConfig {
        tau: cfg.flow.tau,
        sigma: cfg.flow.sigma,
        eta: cfg.flow.eta,
        m: cfg.flow.m,
        steps: cfg.flow.steps,
        seed: cfg.flow.seed,
        prior,
        record_every: cfg.flow.record_every,
    };
    flow.validate().map_err(CliError::from_validation)?;

    let rho = match &cfg.rho {
        Some(w) => {
            if w.len() != mdp.n_states {
                return Err(CliError::validation(
                    "rho length does not match the number of states".into(),
                ));
            }
            StateDistribution::new(w.clone()).map_err(CliError::from_validation)?
        }
        None => StateDistribution::new(mdp.rho.clone()).map_err(CliError::from_validation)?,
    };

    let reference = match &cfg.reference_cloud {
        Some(p) => {
            let full = resolve(config_path, p);
            let text = std::fs::read_to_string(&full).map_err(|e| {
                CliError::validation(format!("reference cloud {}: {e}", full.display()))
            })?;
            let cloud: ParticleCloud = serde_json::from_str(&text).map_err(|e| {
                CliError::validation(format!("reference cloud {}: {e}", full.display()))
            })?;
            if cloud.dim() != dim {
                return Err(CliError::validation(
                    "reference cloud dimension does not match the feature".into(),
                ));
            }
            Some(cloud)
        }
        None => None,
    };

    Ok(Experiment {
        mdp,
        feature,
        flow,
        rho,
        reference,
    })
}
