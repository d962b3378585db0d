//! Closed-form Gaussian bandit benchmark: analytic optimal policy, stationary
//! measure, mean ODE, a direct particle simulation of the dynamics, and a
//! cross-check against the generic finite-MDP flow on a discretized action
//! grid.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{kl_estimate, KlMethod};
use crate::cloud::ParticleCloud;
use crate::error::{CoreError, Result};
use crate::features::ClippedQuadraticFeature;
use crate::flow::{run_flow, FlowConfig};
use crate::mdp::{FiniteMdp, StateDistribution};
use crate::meanfield::policy_from_cloud;
use crate::prior::GaussianPrior;
use crate::rng::standard_normal;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSpec {
    pub ell: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
    pub m_u: Vec<f64>,
    pub sigma_u: f64,
    pub sigma: f64,
}

impl BanditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ell.is_empty() || self.ell.len() != self.m_u.len() {
            return Err(CoreError::InvalidConfig(
                "ell and m_u must be nonempty vectors of equal dimension".into(),
            ));
        }
        for (name, v) in [("lambda", self.lambda), ("tau", self.tau), ("sigma_u", self.sigma_u)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(CoreError::InvalidConfig("sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    pub fn prior(&self) -> GaussianPrior {
        GaussianPrior::new(self.m_u.clone(), self.sigma_u).expect("validated spec")
    }
}

/// An isotropic Gaussian measure N(mean, variance I).
#[derive(Debug, Clone, Serialize)]
pub struct IsotropicGaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Optimal policy: N(ell/(2 lambda), (tau/(2 lambda)) I).
pub fn analytic_optimal_policy(spec: &BanditSpec) -> IsotropicGaussian {
    IsotropicGaussian {
        mean: spec.ell.iter().map(|l| l / (2.0 * spec.lambda)).collect(),
        variance: spec.tau / (2.0 * spec.lambda),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryMean {
    pub mean: Vec<f64>,
    /// With sigma = 0 the mean constraint has infinitely many critical
    /// measures; the returned mean is then the constraint, not a unique
    /// stationary measure.
    pub unique: bool,
}

/// Stationary cloud mean `(m_U sigma^2 + 2 sigma_U^2 ell) / (sigma^2 + 4 lambda sigma_U^2)`;
/// reduces to `ell/(2 lambda)` when sigma = 0.
pub fn analytic_stationary_mean(spec: &BanditSpec) -> StationaryMean {
    if spec.sigma == 0.0 {
        return StationaryMean {
            mean: spec.ell.iter().map(|l| l / (2.0 * spec.lambda)).collect(),
            unique: false,
        };
    }
    let s2 = spec.sigma * spec.sigma;
    let su2 = spec.sigma_u * spec.sigma_u;
    let denom = s2 + 4.0 * spec.lambda * su2;
    StationaryMean {
        mean: spec
            .m_u
            .iter()
            .zip(&spec.ell)
            .map(|(&mu, &l)| (mu * s2 + 2.0 * su2 * l) / denom)
            .collect(),
        unique: true,
    }
}

/// Decay rate of the mean ODE: `c = 2 lambda + sigma^2 / (2 sigma_U^2)`.
pub fn mean_rate(spec: &BanditSpec) -> f64 {
    2.0 * spec.lambda + spec.sigma * spec.sigma / (2.0 * spec.sigma_u * spec.sigma_u)
}

/// Stationary parameter measure nu* = N(m_inf, sigma_U^2 I) for sigma > 0.
pub fn stationary_measure(spec: &BanditSpec) -> IsotropicGaussian {
    IsotropicGaussian {
        mean: analytic_stationary_mean(spec).mean,
        variance: if spec.sigma > 0.0 {
            spec.sigma_u * spec.sigma_u
        } else {
            0.0
        },
    }
}

/// Solution of `dm/dt = ell - 2 lambda m - (sigma^2/(2 sigma_U^2))(m - m_U)`:
/// `m(t) = m_inf + (m_0 - m_inf) e^{-ct}`. The fixed point
/// `m_inf = (ell + sigma^2 m_U / (2 sigma_U^2)) / c` equals
/// analytic_stationary_mean (multiply numerator and denominator by
/// `2 sigma_U^2`), which the consistency test pins down numerically.
pub fn analytic_mean_trajectory(spec: &BanditSpec, m0: &[f64], t: f64) -> Vec<f64> {
    let c = mean_rate(spec);
    let m_inf = analytic_stationary_mean(spec).mean;
    let decay = (-c * t).exp();
    m0.iter()
        .zip(&m_inf)
        .map(|(&m, &mi)| mi + (m - mi) * decay)
        .collect()
}

/// Closed-form W2 between N(mean, cov) and the isotropic N(ref_mean, ref_var I):
/// `W2^2 = |dm|^2 + tr(cov) + d ref_var - 2 sqrt(ref_var) tr(cov^{1/2})`.
pub fn gaussian_w2_to_isotropic(
    mean: &[f64],
    cov: &[Vec<f64>],
    reference: &IsotropicGaussian,
) -> f64 {
    let d = mean.len();
    let shift: f64 = mean
        .iter()
        .zip(&reference.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let s = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let eig = s.symmetric_eigen();
    let trace: f64 = eig.eigenvalues.iter().sum();
    let trace_sqrt: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let w2sq = shift + trace + d as f64 * reference.variance
        - 2.0 * reference.variance.sqrt() * trace_sqrt;
    w2sq.max(0.0).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct BanditRecord {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub analytic_mean: Vec<f64>,
    pub w2_to_star: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct BanditRun {
    pub records: Vec<BanditRecord>,
    pub final_cloud: ParticleCloud,
}

/// Euler-Maruyama on the bandit dynamics
/// `d theta_i = (ell - 2 lambda mean - (sigma^2/(2 sigma_U^2))(theta_i - m_U)) dt + sigma dW_i`,
/// implemented directly from the closed-form drift (no feature map). Particles
/// start i.i.d. from the prior unless an explicit cloud is given.
pub fn simulate_bandit_flow(
    spec: &BanditSpec,
    m_particles: usize,
    eta: f64,
    steps: usize,
    seed: u64,
    record_every: usize,
    init: Option<&ParticleCloud>,
) -> Result<BanditRun> {
    spec.validate()?;
    if m_particles == 0 || !(eta > 0.0) || record_every == 0 {
        return Err(CoreError::InvalidConfig(
            "need m >= 1, eta > 0, record_every >= 1".into(),
        ));
    }
    let d = spec.dim();
    let mut cloud = match init {
        Some(c) => {
            if c.len() != m_particles || c.dim() != d {
                return Err(CoreError::DimensionMismatch(
                    "init cloud shape does not match spec".into(),
                ));
            }
            c.clone()
        }
        None => crate::flow::init_from_prior(&spec.prior(), m_particles, seed),
    };
    let m0 = cloud.mean();
    let star = stationary_measure(spec);
    let pull = spec.sigma * spec.sigma / (2.0 * spec.sigma_u * spec.sigma_u);
    let noise_scale = eta.sqrt() * spec.sigma;
    let mut records = Vec::new();
    for k in 0..=steps {
        if k % record_every == 0 || k == steps {
            let mean = cloud.mean();
            records.push(BanditRecord {
                step: k,
                time: k as f64 * eta,
                analytic_mean: analytic_mean_trajectory(spec, &m0, k as f64 * eta),
                w2_to_star: gaussian_w2_to_isotropic(&mean, &cloud.covariance(), &star),
                objective: bandit_objective(spec, &cloud)?,
                mean,
            });
        }
        if k < steps {
            let mean = cloud.mean();
            let particles: Vec<Vec<f64>> = cloud
                .particles
                .par_iter()
                .enumerate()
                .map(|(i, theta)| {
                    (0..d)
                        .map(|c| {
                            let drift = spec.ell[c] - 2.0 * spec.lambda * mean[c]
                                - pull * (theta[c] - spec.m_u[c]);
                            let mut next = theta[c] + eta * drift;
                            if noise_scale != 0.0 {
                                next += noise_scale
                                    * standard_normal(seed, k as u64, i as u64, c as u64);
                            }
                            next
                        })
                        .collect()
                })
                .collect();
            cloud = ParticleCloud::new(particles, cloud.weights.clone())?;
        }
    }
    Ok(BanditRun {
        records,
        final_cloud: cloud,
    })
}

/// Closed-form J^{tau,sigma} of a cloud, reading the policy-variance constant
/// as sigma_f^2 = tau/(2 lambda):
/// `J = mean.ell - lambda(tau d/(2 lambda) + |mean|^2) + (tau d/2)(ln(2 pi tau/(2 lambda)) + 1) - (sigma^2/2) KL(cloud | prior)`.
/// The KL term uses the Gaussian moment proxy (exact on the bandit's Gaussian
/// family) and is skipped when sigma = 0.
pub fn bandit_objective(spec: &BanditSpec, cloud: &ParticleCloud) -> Result<f64> {
    let d = spec.dim() as f64;
    let mean = cloud.mean();
    let dot: f64 = mean.iter().zip(&spec.ell).map(|(m, l)| m * l).sum();
    let norm2: f64 = mean.iter().map(|m| m * m).sum();
    let sigma_f2 = spec.tau / (2.0 * spec.lambda);
    let mut j = dot - spec.lambda * (sigma_f2 * d + norm2)
        + 0.5 * spec.tau * d * ((2.0 * std::f64::consts::PI * sigma_f2).ln() + 1.0);
    if spec.sigma > 0.0 {
        let kl = kl_estimate(cloud, &spec.prior(), KlMethod::GaussianProxy)?;
        j -= 0.5 * spec.sigma * spec.sigma * kl;
    }
    Ok(j)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckReport {
    pub policy_mean: f64,
    pub analytic_mean: f64,
    pub error: f64,
    pub tolerance: f64,
    pub grid_step: f64,
    pub pass: bool,
}

/// The 1-state MDP and clipped quadratic feature that embed the bandit into
/// the generic finite-MDP machinery: actions are a uniform grid over the
/// optimal policy's mean +- 5 std, mu weights are the cell widths, and
/// r(a) = ell a - lambda a^2.
pub fn crosscheck_mdp(
    spec: &BanditSpec,
    grid: usize,
) -> Result<(FiniteMdp, ClippedQuadraticFeature)> {
    spec.validate()?;
    if spec.dim() != 1 {
        return Err(CoreError::InvalidConfig(
            "the discretized cross-check is one-dimensional".into(),
        ));
    }
    if grid < 16 {
        return Err(CoreError::InvalidConfig("grid must be >= 16".into()));
    }
    let policy = analytic_optimal_policy(spec);
    let std = policy.variance.sqrt();
    let lo = policy.mean[0] - 5.0 * std;
    let hi = policy.mean[0] + 5.0 * std;
    let h = (hi - lo) / grid as f64;
    if std < 2.0 * h {
        return Err(CoreError::InvalidConfig(format!(
            "grid too coarse: policy std {std} is below two cells ({})",
            2.0 * h
        )));
    }
    let action_values: Vec<f64> = (0..grid).map(|i| lo + (i as f64 + 0.5) * h).collect();
    let mdp = FiniteMdp {
        n_states: 1,
        n_actions: grid,
        gamma: 0.0,
        transition: vec![vec![vec![1.0]; grid]],
        reward: vec![action_values
            .iter()
            .map(|&a| spec.ell[0] * a - spec.lambda * a * a)
            .collect()],
        mu_weights: vec![h; grid],
        rho: vec![1.0],
    };
    let feature = ClippedQuadraticFeature {
        action_values,
        lambda: spec.lambda,
        tau: spec.tau,
        lo,
        hi,
    };
    Ok((mdp, feature))
}

/// Runs the generic particle flow on the discretized bandit and compares the
/// resulting policy mean against the analytic stationary prediction.
pub fn discretized_crosscheck(
    spec: &BanditSpec,
    grid: usize,
    m_particles: usize,
    eta: f64,
    steps: usize,
    seed: u64,
) -> Result<CrosscheckReport> {
    let (mdp, feature) = crosscheck_mdp(spec, grid)?;
    let h = feature.action_values[1] - feature.action_values[0];
    let config = FlowConfig {
        tau: spec.tau,
        sigma: spec.sigma,
        eta,
        m: m_particles,
        steps,
        seed,
        prior: spec.prior(),
        record_every: steps.max(1),
    };
    let init = crate::flow::init_from_prior(&config.prior, m_particles, seed);
    let rho = StateDistribution::delta(1, 0);
    let traj = run_flow(&mdp, &feature, &config, &init, &rho, None)?;
    let pi = policy_from_cloud(traj.final_cloud(), &feature, &mdp)?;
    let policy_mean: f64 = pi.probs[0]
        .iter()
        .zip(&feature.action_values)
        .map(|(&p, &a)| p * a)
        .sum();
    let analytic = analytic_stationary_mean(spec).mean[0];
    let error = (policy_mean - analytic).abs();
    let tolerance = h * h + 5.0 / (m_particles as f64).sqrt() + 2.0 * eta;
    Ok(CrosscheckReport {
        policy_mean,
        analytic_mean: analytic,
        error,
        tolerance,
        grid_step: h,
        pass: error <= tolerance,
    })
}
