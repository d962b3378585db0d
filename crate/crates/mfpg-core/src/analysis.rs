//! Diagnostics: objectives, KL and Wasserstein estimators, theoretical
//! constants, and the probe harnesses that check the bounds empirically.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cloud::ParticleCloud;
use crate::error::{CoreError, Result};
use crate::features::FeatureMap;
use crate::flow::{run_flow, DerivativeKernel, FlowConfig, Trajectory};
use crate::hungarian::min_cost_assignment;
use crate::mdp::{FiniteMdp, StateDistribution};
use crate::meanfield::policy_from_cloud;
use crate::prior::GaussianPrior;
use crate::soft_dp::policy_evaluate;

/// J^{tau,0}(nu^m) = V^{pi_nu}_tau(rho), by exact policy evaluation.
pub fn objective(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    cloud: &ParticleCloud,
    tau: f64,
    rho: &StateDistribution,
) -> Result<f64> {
    let pi = policy_from_cloud(cloud, features, mdp)?;
    let vals = policy_evaluate(mdp, &pi, tau)?;
    Ok(vals.value_of(&rho.weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMethod {
    GaussianProxy,
    Knn,
}

/// KL estimate of the empirical cloud against the prior `exp(-U)`.
/// Both methods are estimators: the exact KL of a discrete measure against a
/// density is infinite. `gaussian_proxy` moment-matches the cloud and uses the
/// closed-form Gaussian KL (falling back to knn if the sample covariance is
/// singular); `knn` is a Kozachenko-Leonenko entropy plug-in plus the exact
/// cross term.
pub fn kl_estimate(cloud: &ParticleCloud, prior: &GaussianPrior, method: KlMethod) -> Result<f64> {
    if cloud.dim() != prior.dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "cloud dim {} vs prior dim {}",
            cloud.dim(),
            prior.dim()
        )));
    }
    match method {
        KlMethod::GaussianProxy => {
            if cloud.len() <= cloud.dim() {
                return kl_estimate(cloud, prior, KlMethod::Knn);
            }
            match gaussian_proxy_kl(cloud, prior) {
                Some(kl) => Ok(kl),
                None => kl_estimate(cloud, prior, KlMethod::Knn),
            }
        }
        KlMethod::Knn => {
            if cloud.len() < 10 {
                return Err(CoreError::Degenerate(
                    "knn KL estimator needs m >= 10".into(),
                ));
            }
            let entropy = knn_entropy(&cloud.particles)?;
            let cross: f64 = cloud
                .particles
                .iter()
                .zip(&cloud.weights)
                .map(|(theta, &w)| w * prior.value(theta))
                .sum();
            Ok(-entropy + cross)
        }
    }
}

/// Closed-form KL(N(m1, S) | N(m_U, sigma_U^2 I)); None if S is singular.
fn gaussian_proxy_kl(cloud: &ParticleCloud, prior: &GaussianPrior) -> Option<f64> {
    let d = cloud.dim();
    let mean = cloud.mean();
    let cov = cloud.covariance();
    let s = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let chol = s.cholesky()?;
    let log_det: f64 = (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
    let s2 = prior.sigma * prior.sigma;
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum::<f64>() / s2;
    let shift: f64 = mean
        .iter()
        .zip(&prior.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / s2;
    Some(0.5 * (trace + shift - d as f64 - (log_det - d as f64 * s2.ln())))
}

/// Kozachenko-Leonenko entropy: `psi(m) - psi(1) + ln V_d + (d/m) sum ln eps_i`
/// with eps_i the nearest-neighbor distance.
fn knn_entropy(particles: &[Vec<f64>]) -> Result<f64> {
    let m = particles.len();
    let d = particles[0].len();
    let mut sum_log_eps = 0.0;
    for (i, a) in particles.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in particles.iter().enumerate() {
            if i == j {
                continue;
            }
            let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            if dist2 < best {
                best = dist2;
            }
        }
        if best == 0.0 {
            return Err(CoreError::Degenerate(
                "duplicate particles break the knn entropy estimate".into(),
            ));
        }
        sum_log_eps += 0.5 * best.ln();
    }
    // psi(m) - psi(1) = sum_{j=1}^{m-1} 1/j for integer m
    let psi_diff: f64 = (1..m).map(|j| 1.0 / j as f64).sum();
    Ok(psi_diff + ln_unit_ball_volume(d) + (d as f64 / m as f64) * sum_log_eps)
}

/// ln of the volume of the unit ball in R^d: (d/2) ln pi - ln Gamma(d/2 + 1).
fn ln_unit_ball_volume(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    half * std::f64::consts::PI.ln() - ln_gamma_half_integer(d + 2)
}

/// ln Gamma(n/2) for integer n >= 1, via the recurrence from Gamma(1/2) and Gamma(1).
fn ln_gamma_half_integer(n: usize) -> f64 {
    let mut x = n as f64 / 2.0;
    let mut acc = 0.0;
    while x > 1.5 {
        x -= 1.0;
        acc += x.ln();
    }
    if (x - 0.5).abs() < 1e-12 {
        acc + 0.5 * std::f64::consts::PI.ln()
    } else {
        // x == 1 or x == 1.5 are the terminal cases; Gamma(1) = 1, Gamma(1.5) = sqrt(pi)/2
        if (x - 1.5).abs() < 1e-12 {
            acc + 0.5 * std::f64::consts::PI.ln() - std::f64::consts::LN_2
        } else {
            acc
        }
    }
}

/// J^{tau,sigma} = J^{tau,0} - (sigma^2/2) KL-estimate; the KL term is skipped
/// entirely when sigma = 0.
#[allow(clippy::too_many_arguments)]
pub fn j_tau_sigma(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    cloud: &ParticleCloud,
    tau: f64,
    sigma: f64,
    prior: &GaussianPrior,
    rho: &StateDistribution,
    method: KlMethod,
) -> Result<f64> {
    let j = objective(mdp, features, cloud, tau, rho)?;
    if sigma == 0.0 {
        return Ok(j);
    }
    let kl = kl_estimate(cloud, prior, method)?;
    Ok(j - 0.5 * sigma * sigma * kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WassersteinMethod {
    Exact1d,
    Assignment,
    /// Average of exact_1d over seeded random unit projections. A lower-bound
    /// surrogate, not the true distance.
    Sliced {
        projections: usize,
        seed: u64,
    },
}

pub const ASSIGNMENT_MAX_M: usize = 512;

/// p-Wasserstein distance between two equal-size uniform empirical measures.
pub fn wasserstein(
    a: &ParticleCloud,
    b: &ParticleCloud,
    p: u32,
    method: WassersteinMethod,
) -> Result<f64> {
    if !(p == 1 || p == 2) {
        return Err(CoreError::InvalidConfig("p must be 1 or 2".into()));
    }
    if a.dim() != b.dim() {
        return Err(CoreError::DimensionMismatch(
            "cloud dimensions differ".into(),
        ));
    }
    if a.len() != b.len() || !a.has_uniform_weights() || !b.has_uniform_weights() {
        return Err(CoreError::InvalidConfig(
            "wasserstein requires equal-size uniform clouds".into(),
        ));
    }
    match method {
        WassersteinMethod::Exact1d => {
            if a.dim() != 1 {
                return Err(CoreError::InvalidConfig("exact_1d requires d = 1".into()));
            }
            let xs: Vec<f64> = a.particles.iter().map(|t| t[0]).collect();
            let ys: Vec<f64> = b.particles.iter().map(|t| t[0]).collect();
            Ok(exact_1d(&xs, &ys, p))
        }
        WassersteinMethod::Assignment => {
            let m = a.len();
            if m > ASSIGNMENT_MAX_M {
                return Err(CoreError::InvalidConfig(format!(
                    "assignment method capped at m = {ASSIGNMENT_MAX_M}"
                )));
            }
            let cost: Vec<Vec<f64>> = a
                .particles
                .iter()
                .map(|x| {
                    b.particles
                        .iter()
                        .map(|y| {
                            let dist: f64 = x
                                .iter()
                                .zip(y)
                                .map(|(u, v)| (u - v) * (u - v))
                                .sum::<f64>()
                                .sqrt();
                            dist.powi(p as i32)
                        })
                        .collect()
                })
                .collect();
            let (total, _) = min_cost_assignment(&cost);
            Ok((total / m as f64).powf(1.0 / p as f64))
        }
        WassersteinMethod::Sliced { projections, seed } => {
            if projections == 0 {
                return Err(CoreError::InvalidConfig(
                    "sliced needs at least one projection".into(),
                ));
            }
            let d = a.dim();
            let mut acc = 0.0;
            for k in 0..projections {
                let mut dir: Vec<f64> = (0..d)
                    .map(|c| crate::rng::standard_normal(seed, k as u64, 0, c as u64))
                    .collect();
                let norm: f64 = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut dir {
                    *x /= norm;
                }
                let project = |cloud: &ParticleCloud| -> Vec<f64> {
                    cloud
                        .particles
                        .iter()
                        .map(|t| t.iter().zip(&dir).map(|(x, u)| x * u).sum())
                        .collect()
                };
                acc += exact_1d(&project(a), &project(b), p);
            }
            Ok(acc / projections as f64)
        }
    }
}

fn exact_1d(xs: &[f64], ys: &[f64], p: u32) -> f64 {
    let mut xs = xs.to_vec();
    let mut ys = ys.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = xs.len() as f64;
    let total: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - y).abs().powi(p as i32))
        .sum();
    (total / m).powf(1.0 / p as f64)
}

/// W2 with the default method ladder: exact_1d when d = 1, assignment when
/// m <= 512, sliced (64 seeded projections) otherwise.
pub fn w2_auto(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    if a.dim() == 1 {
        wasserstein(a, b, 2, WassersteinMethod::Exact1d)
    } else if a.len() <= ASSIGNMENT_MAX_M {
        wasserstein(a, b, 2, WassersteinMethod::Assignment)
    } else {
        wasserstein(
            a,
            b,
            2,
            WassersteinMethod::Sliced {
                projections: 64,
                seed: 0,
            },
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub gamma: f64,
    pub r_inf: f64,
    pub tau: f64,
    pub mu_total: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub l: f64,
    pub d_tau: f64,
    pub beta: f64,
}

/// Explicit constants from the boundedness/regularity bounds:
/// `C_k = (2/(1-gamma)^2)(r_inf + tau(2 a0 + |ln mu(A)|)) a_k`, the
/// measure-Lipschitz constant `L` assembled from the four-term decomposition,
/// the tau-sensitivity constant `D`, and `beta = sigma^2 kappa / 2 - C_2 - L`
/// (which may be negative; convergence in the regularized regime needs it
/// positive).
#[allow(clippy::too_many_arguments)]
pub fn theoretical_constants(
    gamma: f64,
    r_inf: f64,
    tau: f64,
    mu_total: f64,
    a0: f64,
    a1: f64,
    a2: f64,
    kappa: f64,
    sigma: f64,
) -> Result<ConstantsReport> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(CoreError::InvalidConfig("gamma must be in [0,1)".into()));
    }
    for (name, v) in [
        ("r_inf", r_inf),
        ("tau", tau),
        ("mu_total", mu_total),
        ("a0", a0),
        ("a1", a1),
        ("a2", a2),
        ("kappa", kappa),
        ("sigma", sigma),
    ] {
        if v < 0.0 || !v.is_finite() {
            return Err(CoreError::InvalidConfig(format!(
                "{name} must be nonnegative and finite"
            )));
        }
    }
    let one = 1.0 - gamma;
    let ln_mu = mu_total.ln().abs();
    let envelope0 = r_inf + tau * (2.0 * a0 + ln_mu);
    let c_scale = 2.0 / (one * one);
    let c1 = c_scale * envelope0 * a1;
    let c2 = c_scale * envelope0 * a2;
    // measure-Lipschitz constant: I1 + I2 + (I3 + I4)
    let i1 = (4.0 * gamma / (one * one * one)) * (r_inf + tau * (2.0 * a1 + ln_mu)) * a1 * a1;
    let i34 = (4.0 / (one * one)) * envelope0 * a1 * a1;
    let i2 = (4.0 / one) * ((gamma / (one * one)) * envelope0 + tau) * a1 * a1;
    let l = i1 + i2 + i34;
    let d_tau = c_scale * (2.0 * a0 + ln_mu) * a1;
    let beta = 0.5 * sigma * sigma * kappa - c2 - l;
    Ok(ConstantsReport {
        gamma,
        r_inf,
        tau,
        mu_total,
        a0,
        a1,
        a2,
        kappa,
        sigma,
        c1,
        c2,
        l,
        d_tau,
        beta,
    })
}

/// The specialized bandit-regime constants: `C = 2 psi (r_inf + tau psi)` and
/// `L = (6 r_inf + 2 tau) psi^2 + 6 tau psi^3` for a feature bounded by psi.
pub fn constants_bandit_regime(psi_inf: f64, r_inf: f64, tau: f64) -> (f64, f64) {
    let c = 2.0 * psi_inf * (r_inf + tau * psi_inf);
    let l = (6.0 * r_inf + 2.0 * tau) * psi_inf * psi_inf + 6.0 * tau * psi_inf.powi(3);
    (c, l)
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub pairs_evaluated: usize,
    pub pairs_skipped: usize,
    pub pass: bool,
}

/// Samples random equal-size cloud pairs and checks the measure-Lipschitz
/// bound `|grad dJ/dnu(nu') - grad dJ/dnu(nu)| <= L W1(nu', nu)` empirically.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    tau: f64,
    rho: &StateDistribution,
    n_pairs: usize,
    m: usize,
    scale: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    if n_pairs == 0 {
        return Err(CoreError::InvalidConfig("n_pairs must be >= 1".into()));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let nb = features.norm_bounds();
    let bound = theoretical_constants(
        mdp.gamma,
        mdp.reward_sup(),
        tau,
        mdp.mu_total(),
        nb.a0,
        nb.a1,
        nb.a2,
        0.0,
        0.0,
    )?
    .l;
    let mut max_ratio: f64 = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for _ in 0..n_pairs {
        let a = crate::test_support::random_cloud(&mut rng, m, features.param_dim(), scale);
        let b = crate::test_support::random_cloud(&mut rng, m, features.param_dim(), scale);
        let w1 = wasserstein(&a, &b, 1, WassersteinMethod::Assignment)?;
        if w1 == 0.0 {
            skipped += 1;
            continue;
        }
        let ka = DerivativeKernel::for_cloud(mdp, features, &a, tau, rho)?;
        let kb = DerivativeKernel::for_cloud(mdp, features, &b, tau, rho)?;
        for theta in a.particles.iter().chain(&b.particles) {
            let ga = ka.gradient(features, theta);
            let gb = kb.gradient(features, theta);
            let diff: f64 = ga
                .iter()
                .zip(&gb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            max_ratio = max_ratio.max(diff / w1);
        }
        evaluated += 1;
    }
    Ok(LipschitzReport {
        max_ratio,
        bound,
        pairs_evaluated: evaluated,
        pairs_skipped: skipped,
        pass: max_ratio <= bound + 1e-6,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of ln(values) against times; used for the exponential
/// convergence rate check (slope is the empirical -beta).
pub fn fit_log_linear(times: &[f64], values: &[f64]) -> Result<RateFit> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(CoreError::Degenerate(
            "rate fit needs at least 3 points".into(),
        ));
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(CoreError::Degenerate(
            "rate fit needs strictly positive values (log undefined)".into(),
        ));
    }
    let n = times.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mean_t: f64 = times.iter().sum::<f64>() / n;
    let mean_y: f64 = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&t, &y) in times.iter().zip(&logs) {
        sxx += (t - mean_t) * (t - mean_t);
        sxy += (t - mean_t) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(CoreError::Degenerate("all times identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: times.len(),
    })
}

/// Fits ln W2(nu_t, reference) over the records with time in [t_lo, t_hi].
pub fn rate_fit(
    trajectory: &Trajectory,
    reference: &ParticleCloud,
    t_lo: f64,
    t_hi: f64,
) -> Result<RateFit> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in &trajectory.records {
        if rec.time >= t_lo && rec.time <= t_hi {
            times.push(rec.time);
            values.push(w2_auto(&rec.cloud, reference)?);
        }
    }
    fit_log_linear(&times, &values)
}

/// Weighted standard deviation of the per-particle stationarity statistic
/// `h_i = dJ/dnu(nu, theta_i) - (sigma^2/2)(U(theta_i) + ln nu_hat(theta_i))`;
/// near zero when the flow has stalled at a stationary point.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_residual(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    cloud: &ParticleCloud,
    tau: f64,
    sigma: f64,
    prior: &GaussianPrior,
    rho: &StateDistribution,
) -> Result<f64> {
    let kernel = DerivativeKernel::for_cloud(mdp, features, cloud, tau, rho)?;
    let log_dens = if sigma > 0.0 {
        Some(cloud_log_density(cloud)?)
    } else {
        None
    };
    let h: Vec<f64> = cloud
        .particles
        .iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut hi = kernel.derivative_value(features, theta);
            if sigma > 0.0 {
                hi -= 0.5 * sigma * sigma * prior.value(theta);
                if let Some(ld) = &log_dens {
                    hi -= 0.5 * sigma * sigma * ld[i];
                }
            }
            hi
        })
        .collect();
    let mean: f64 = h.iter().zip(&cloud.weights).map(|(x, w)| x * w).sum();
    let var: f64 = h
        .iter()
        .zip(&cloud.weights)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum();
    Ok(var.sqrt())
}

/// Log-density of each particle under the moment-matched Gaussian of the
/// cloud, with a nearest-neighbor fallback when the covariance is degenerate.
fn cloud_log_density(cloud: &ParticleCloud) -> Result<Vec<f64>> {
    let d = cloud.dim();
    let m = cloud.len();
    let mean = cloud.mean();
    let cov = cloud.covariance();
    let s = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    if m > d {
        if let Some(chol) = s.cholesky() {
            let log_det: f64 = (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
            let norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
            return Ok(cloud
                .particles
                .iter()
                .map(|theta| {
                    let diff =
                        DMatrix::from_fn(d, 1, |i, _| theta[i] - mean[i]);
                    let solved = chol.solve(&diff);
                    let quad: f64 = (0..d).map(|i| diff[(i, 0)] * solved[(i, 0)]).sum();
                    norm - 0.5 * quad
                })
                .collect());
        }
    }
    // degenerate covariance: crude nearest-neighbor density
    let vd = ln_unit_ball_volume(d);
    cloud
        .particles
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best = f64::INFINITY;
            for (j, b) in cloud.particles.iter().enumerate() {
                if i != j {
                    let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    best = best.min(dist2);
                }
            }
            if best == 0.0 {
                return Err(CoreError::Degenerate(
                    "duplicate particles break the density fallback".into(),
                ));
            }
            Ok(-((m as f64 - 1.0).ln() + vd + 0.5 * d as f64 * best.ln()))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityStep {
    pub step: usize,
    pub time: f64,
    pub value_gap: f64,
    pub w2: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub c1: f64,
    pub steps: Vec<SensitivityStep>,
    pub violations: usize,
    pub pass: bool,
}

/// Runs two noise-coupled flows and checks the value-sensitivity bound
/// `|V_{hat_tau}(pi_A) - V_{hat_tau}(pi_B)| <= C1(hat_tau) W2(nu_A, nu_B)`
/// at every recorded step.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_check(
    mdp: &FiniteMdp,
    features: &dyn FeatureMap,
    cfg_a: &FlowConfig,
    cfg_b: &FlowConfig,
    hat_tau: f64,
    rho: &StateDistribution,
    init_a: &ParticleCloud,
    init_b: &ParticleCloud,
) -> Result<SensitivityReport> {
    if cfg_a.m != cfg_b.m
        || cfg_a.eta != cfg_b.eta
        || cfg_a.steps != cfg_b.steps
        || cfg_a.seed != cfg_b.seed
    {
        return Err(CoreError::InvalidConfig(
            "sensitivity check needs matching m, eta, steps, and a shared seed".into(),
        ));
    }
    let nb = features.norm_bounds();
    let c1 = theoretical_constants(
        mdp.gamma,
        mdp.reward_sup(),
        hat_tau,
        mdp.mu_total(),
        nb.a0,
        nb.a1,
        nb.a2,
        0.0,
        0.0,
    )?
    .c1;
    let traj_a = run_flow(mdp, features, cfg_a, init_a, rho, None)?;
    let traj_b = run_flow(mdp, features, cfg_b, init_b, rho, None)?;
    let mut steps = Vec::new();
    let mut violations = 0;
    for (ra, rb) in traj_a.records.iter().zip(&traj_b.records) {
        let va = objective(mdp, features, &ra.cloud, hat_tau, rho)?;
        let vb = objective(mdp, features, &rb.cloud, hat_tau, rho)?;
        let gap = (va - vb).abs();
        let w2 = w2_auto(&ra.cloud, &rb.cloud)?;
        let bound = c1 * w2 + 1e-9;
        if gap > bound {
            violations += 1;
        }
        steps.push(SensitivityStep {
            step: ra.step,
            time: ra.time,
            value_gap: gap,
            w2,
            bound,
        });
    }
    Ok(SensitivityReport {
        c1,
        steps,
        violations,
        pass: violations == 0,
    })
}
