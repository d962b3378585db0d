//! Discretized mean-field policy-gradient flow: exact per-step gradients
//! through the functional derivative of J, Euler-Maruyama particle updates,
//! and trajectory recording.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::ParticleCloud;
use crate::error::{CoreError, Result};
use crate::features::FeatureMap;
use crate::mdp::{occupancy, FiniteMdp, StateDistribution, TabularPolicy};
use crate::meanfield::{log_density, policy_from_cloud};
use crate::prior::GaussianPrior;
use crate::rng::standard_normal;
use crate::soft_dp::{policy_evaluate, ValueFunctions};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub tau: f64,
    pub sigma: f64,
    pub eta: f64,
    pub m: usize,
    pub steps: usize,
    pub seed: u64,
    pub prior: GaussianPrior,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    1
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 0.0 || !self.tau.is_finite() {
            return Err(CoreError::InvalidConfig("tau must be >= 0".into()));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(CoreError::InvalidConfig("sigma must be >= 0".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(CoreError::InvalidConfig("eta must be > 0".into()));
        }
        if self.m == 0 {
            return Err(CoreError::InvalidConfig("m must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(CoreError::InvalidConfig("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Snapshot of the measure-dependent quantities shared by all particles within
/// one step. The contraction kernel
/// `beta(s,a) = alpha(s,a) - pi(a|s) sum_a' alpha(s,a')` with
/// `alpha(s,a) = d(s) pi(a|s) (Q(s,a) - tau ln(pi/mu)(s,a)) / (1-gamma)`
/// turns both the gradient and the value of the functional derivative into a
/// plain sum over (s,a): contracting beta against grad f gives
/// `grad_theta dJ/dnu`, contracting against f gives `dJ/dnu` itself.
pub struct DerivativeKernel {
    pub policy: TabularPolicy,
    pub values: ValueFunctions,
    pub occupancy: StateDistribution,
    pub beta: Vec<Vec<f64>>,
}

impl DerivativeKernel {
    pub fn for_policy(
        mdp: &FiniteMdp,
        policy: &TabularPolicy,
        tau: f64,
        rho: &StateDistribution,
    ) -> Result<Self> {
        let values = policy_evaluate(mdp, policy, tau)?;
        let occ = occupancy(mdp, policy, rho)?;
        let logdens = if tau > 0.0 {
            Some(log_density(policy, mdp)?)
        } else {
            None
        };
        let scale = 1.0 / (1.0 - mdp.gamma);
        let mut beta = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
        for s in 0..mdp.n_states {
            let mut alpha = vec![0.0; mdp.n_actions];
            let mut row_sum = 0.0;
            for a in 0..mdp.n_actions {
                let mut qbar = values.q[s][a];
                if let Some(ld) = &logdens {
                    qbar -= tau * ld[s][a];
                }
                alpha[a] = scale * occ.weights[s] * policy.probs[s][a] * qbar;
                row_sum += alpha[a];
            }
            for a in 0..mdp.n_actions {
                beta[s][a] = alpha[a] - policy.probs[s][a] * row_sum;
            }
        }
        Ok(DerivativeKernel {
            policy: policy.clone(),
            values,
            occupancy: occ,
            beta,
        })
    }

    pub fn for_cloud(
        mdp: &FiniteMdp,
        features: &dyn FeatureMap,
        cloud: &ParticleCloud,
        tau: f64,
        rho: &StateDistribution,
    ) -> Result<Self> {
        let policy = policy_from_cloud(cloud, features, mdp)?;
        Self::for_policy(mdp, &policy, tau, rho)
    }

    /// `grad_theta dJ^{tau,0}/dnu (nu, theta)`.
    pub fn gradient(&self, features: &dyn FeatureMap, theta: &[f64]) -> Vec<f64> {
        let d = features.param_dim();
        let mut out = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        for (s, row) in self.beta.iter().enumerate() {
            for (a, &b) in row.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                features.grad(theta, s, a, &mut scratch);
                for (o, &g) in out.iter_mut().zip(&scratch) {
                    *o += b * g;
                }
            }
        }
        out
    }

    /// `dJ^{tau,0}/dnu (nu, theta)` itself.
    pub fn derivative_value(&self, features: &dyn FeatureMap, theta: &[f64]) -> f64 {
        let mut out = 0.0;
        for (s, row) in self.beta.iter().enumerate() {
            for (a, &b) in row.iter().enumerate() {
                if b != 0.0 {
                    out += b * features.eval(theta, s, a);
                }
            }
        }
        out
    }
}

/// Per-particle gradients `G_i = grad_theta dJ^{tau,0}/dnu (nu^m, theta_i)`.
/// The DP solve is shared; the per-particle contraction runs in parallel.
pub fn flow_gradient(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    cloud: &ParticleCloud,
    tau: f64,
    rho: &StateDistribution,
) -> Result<Vec<Vec<f64>>> {
    let kernel = DerivativeKernel::for_cloud(mdp, features, cloud, tau, rho)?;
    Ok(cloud
        .particles
        .par_iter()
        .map(|theta| kernel.gradient(features, theta))
        .collect())
}

/// One Euler-Maruyama update:
/// `theta_i += eta (G_i - (sigma^2/2) grad U(theta_i)) + sqrt(eta) sigma zeta_i`.
pub fn step(
    cloud: &ParticleCloud,
    g: &[Vec<f64>],
    config: &FlowConfig,
    step_index: u64,
) -> Result<ParticleCloud> {
    if !cloud.has_uniform_weights() {
        return Err(CoreError::InvalidConfig(
            "flow step requires uniform particle weights".into(),
        ));
    }
    if g.len() != cloud.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "gradient rows {} vs particles {}",
            g.len(),
            cloud.len()
        )));
    }
    let eta = config.eta;
    let sigma = config.sigma;
    let noise_scale = eta.sqrt() * sigma;
    let particles: Vec<Vec<f64>> = cloud
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let grad_u = config.prior.gradient_vec(theta);
            theta
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let drift = g[i][k] - 0.5 * sigma * sigma * grad_u[k];
                    let mut next = t + eta * drift;
                    if noise_scale != 0.0 {
                        next += noise_scale
                            * standard_normal(config.seed, step_index, i as u64, k as u64);
                    }
                    next
                })
                .collect()
        })
        .collect();
    ParticleCloud::new(particles, cloud.weights.clone())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub time: f64,
    pub cloud: ParticleCloud,
    pub j_tau0: f64,
    pub kl_est: f64,
    pub j_tau_sigma: f64,
    pub grad_norm_sq: f64,
    pub mean: Vec<f64>,
    pub w2_to_ref: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub eta: f64,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn final_cloud(&self) -> &ParticleCloud {
        &self.records.last().expect("trajectory is never empty").cloud
    }
}

/// Runs the discretized flow, recording diagnostics every `record_every`
/// steps (plus the initial and final states). Deterministic given the seed.
pub fn run_flow(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    config: &FlowConfig,
    init: &ParticleCloud,
    rho: &StateDistribution,
    reference: Option<&ParticleCloud>,
) -> Result<Trajectory> {
    config.validate()?;
    if init.len() != config.m {
        return Err(CoreError::InvalidConfig(format!(
            "init cloud has {} particles, config.m is {}",
            init.len(),
            config.m
        )));
    }
    if !init.has_uniform_weights() {
        return Err(CoreError::InvalidConfig(
            "flow requires uniform particle weights".into(),
        ));
    }
    let mut cloud = init.clone();
    let mut records = Vec::new();
    for k in 0..=config.steps {
        let kernel = DerivativeKernel::for_cloud(mdp, features, &cloud, config.tau, rho)?;
        let g: Vec<Vec<f64>> = cloud
            .particles
            .par_iter()
            .map(|theta| kernel.gradient(features, theta))
            .collect();
        if k % config.record_every == 0 || k == config.steps {
            let j_tau0 = kernel.values.value_of(&rho.weights);
            let grad_norm_sq: f64 = g
                .iter()
                .zip(&cloud.weights)
                .map(|(gi, &w)| w * gi.iter().map(|x| x * x).sum::<f64>())
                .sum();
            let kl_est = crate::analysis::kl_estimate(
                &cloud,
                &config.prior,
                crate::analysis::KlMethod::GaussianProxy,
            )
            .unwrap_or(f64::NAN);
            let j_tau_sigma = if config.sigma == 0.0 {
                j_tau0
            } else {
                j_tau0 - 0.5 * config.sigma * config.sigma * kl_est
            };
            let w2_to_ref = match reference {
                Some(r) => Some(crate::analysis::w2_auto(&cloud, r)?),
                None => None,
            };
            records.push(TrajectoryRecord {
                step: k,
                time: k as f64 * config.eta,
                cloud: cloud.clone(),
                j_tau0,
                kl_est,
                j_tau_sigma,
                grad_norm_sq,
                mean: cloud.mean(),
                w2_to_ref,
            });
        }
        if k < config.steps {
            cloud = step(&cloud, &g, config, k as u64)?;
        }
    }
    Ok(Trajectory {
        eta: config.eta,
        records,
    })
}

/// Particles drawn i.i.d. from the Gaussian prior, the default initialization.
pub fn init_from_prior(prior: &GaussianPrior, m: usize, seed: u64) -> ParticleCloud {
    let d = prior.dim();
    let particles: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..d)
                .map(|k| {
                    prior.mean[k]
                        + prior.sigma * standard_normal(seed, u64::MAX, i as u64, k as u64)
                })
                .collect()
        })
        .collect();
    ParticleCloud::uniform(particles).expect("prior sample is a valid cloud")
}
