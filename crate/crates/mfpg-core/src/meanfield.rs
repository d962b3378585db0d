//! The mean-field softmax policy `pi_nu` and its functional derivative in the
//! parameter measure.

use crate::cloud::ParticleCloud;
use crate::error::{CoreError, Result};
use crate::features::FeatureMap;
use crate::mdp::{FiniteMdp, TabularPolicy};

/// Mean logits `F(s,a) = sum_i w_i f(theta_i, s, a)`.
pub fn mean_logits(
    cloud: &ParticleCloud,
    features: &dyn FeatureMap,
    mdp: &FiniteMdp,
) -> Result<Vec<Vec<f64>>> {
    if cloud.dim() != features.param_dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "cloud dim {} vs feature param_dim {}",
            cloud.dim(),
            features.param_dim()
        )));
    }
    let mut logits = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for (theta, &w) in cloud.particles.iter().zip(&cloud.weights) {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                logits[s][a] += w * features.eval(theta, s, a);
            }
        }
    }
    Ok(logits)
}

/// Softmax of logits against the reference measure:
/// `pi(a|s) = exp(F(s,a)) mu(a) / sum_a' exp(F(s,a')) mu(a')`.
pub fn policy_from_logits(logits: &[Vec<f64>], mdp: &FiniteMdp) -> TabularPolicy {
    let probs = logits
        .iter()
        .map(|row| {
            let shifted: Vec<f64> = row
                .iter()
                .zip(&mdp.mu_weights)
                .map(|(&l, &m)| l + m.ln())
                .collect();
            let max = shifted.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut exps: Vec<f64> = shifted.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for p in &mut exps {
                *p /= sum;
            }
            let total: f64 = exps.iter().sum();
            let last = exps.len() - 1;
            exps[last] += 1.0 - total;
            exps
        })
        .collect();
    TabularPolicy { probs }
}

/// The mean-field softmax policy of a particle cloud.
pub fn policy_from_cloud(
    cloud: &ParticleCloud,
    features: &dyn FeatureMap,
    mdp: &FiniteMdp,
) -> Result<TabularPolicy> {
    Ok(policy_from_logits(&mean_logits(cloud, features, mdp)?, mdp))
}

/// Log-density `ln(d pi / d mu)(a|s) = ln(pi(a|s) / mu(a))`.
pub fn log_density(policy: &TabularPolicy, mdp: &FiniteMdp) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let p = policy.probs[s][a];
            if !(p > 0.0) {
                return Err(CoreError::ZeroPolicyEntry { state: s, action: a });
            }
            out[s][a] = (p / mdp.mu_weights[a]).ln();
        }
    }
    Ok(out)
}

/// Functional derivative of the policy in the parameter measure at (theta, s):
/// `(f(theta,s,a) - sum_a' f(theta,s,a') pi(a'|s)) pi(a|s)` per action.
/// A signed measure over actions with zero total mass.
pub fn policy_functional_derivative(
    cloud: &ParticleCloud,
    features: &dyn FeatureMap,
    mdp: &FiniteMdp,
    theta: &[f64],
    s: usize,
) -> Result<Vec<f64>> {
    let pi = policy_from_cloud(cloud, features, mdp)?;
    let f_vals: Vec<f64> = (0..mdp.n_actions)
        .map(|a| features.eval(theta, s, a))
        .collect();
    let centered: f64 = f_vals
        .iter()
        .zip(&pi.probs[s])
        .map(|(&f, &p)| f * p)
        .sum();
    Ok(f_vals
        .iter()
        .zip(&pi.probs[s])
        .map(|(&f, &p)| (f - centered) * p)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{NormBounds, OneHiddenFeature, RandomTanhFeature};
    use crate::test_support::{random_cloud, random_mdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ZeroFeature {
        dim: usize,
    }

    impl FeatureMap for ZeroFeature {
        fn param_dim(&self) -> usize {
            self.dim
        }
        fn eval(&self, _: &[f64], _: usize, _: usize) -> f64 {
            0.0
        }
        fn grad(&self, _: &[f64], _: usize, _: usize, out: &mut [f64]) {
            out.fill(0.0);
        }
        fn norm_bounds(&self) -> NormBounds {
            NormBounds {
                a0: 0.0,
                a1: 0.0,
                a2: 0.0,
            }
        }
    }

    /// Fixed-logit feature used for closed-form policy checks.
    struct ConstLogit {
        values: Vec<f64>,
    }

    impl FeatureMap for ConstLogit {
        fn param_dim(&self) -> usize {
            1
        }
        fn eval(&self, _: &[f64], _: usize, a: usize) -> f64 {
            self.values[a]
        }
        fn grad(&self, _: &[f64], _: usize, _: usize, out: &mut [f64]) {
            out.fill(0.0);
        }
        fn norm_bounds(&self) -> NormBounds {
            NormBounds {
                a0: self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                a1: 0.0,
                a2: 0.0,
            }
        }
    }

    #[test]
    fn zero_feature_gives_mu_proportional_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = random_mdp(&mut rng, 3, 4, 0.9);
        let cloud = random_cloud(&mut rng, 5, 2, 1.0);
        let f = ZeroFeature { dim: 2 };
        let pi = policy_from_cloud(&cloud, &f, &mdp).unwrap();
        let total = mdp.mu_total();
        for s in 0..3 {
            for a in 0..4 {
                assert!((pi.probs[s][a] - mdp.mu_weights[a] / total).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_particle_softmax_closed_form() {
        // F = (ln 2, 0), mu = (1,1) -> pi = (2/3, 1/3)
        let mdp = FiniteMdp {
            n_states: 1,
            n_actions: 2,
            gamma: 0.0,
            transition: vec![vec![vec![1.0], vec![1.0]]],
            reward: vec![vec![0.0, 0.0]],
            mu_weights: vec![1.0, 1.0],
            rho: vec![1.0],
        };
        let cloud = ParticleCloud::uniform(vec![vec![0.0]]).unwrap();
        let f = ConstLogit {
            values: vec![std::f64::consts::LN_2, 0.0],
        };
        let pi = policy_from_cloud(&cloud, &f, &mdp).unwrap();
        assert!((pi.probs[0][0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi.probs[0][1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn policy_invariant_under_particle_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 3, 3, 0.9);
        let f = OneHiddenFeature::new(3, 3, 3, 1.0).unwrap();
        let cloud = random_cloud(&mut rng, 6, f.param_dim(), 1.0);
        let mut permuted = cloud.particles.clone();
        permuted.reverse();
        let permuted = ParticleCloud::uniform(permuted).unwrap();
        let a = policy_from_cloud(&cloud, &f, &mdp).unwrap();
        let b = policy_from_cloud(&permuted, &f, &mdp).unwrap();
        for s in 0..3 {
            for act in 0..3 {
                assert!((a.probs[s][act] - b.probs[s][act]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_density_constant_for_mu_proportional() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = random_mdp(&mut rng, 2, 3, 0.9);
        let pi = TabularPolicy::proportional_to_mu(&mdp);
        let ld = log_density(&pi, &mdp).unwrap();
        let expected = -mdp.mu_total().ln();
        for row in &ld {
            for &x in row {
                assert!((x - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_density_bound_fuzz() {
        // lem-style bound: |ln(dpi/dmu)| <= 2 a0 + |ln mu(A)|
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = {
            let mut m = random_mdp(&mut rng, 1, 4, 0.0);
            m.mu_weights = vec![0.5; 4]; // mu(A) = 2
            m
        };
        let f = RandomTanhFeature::new(4, 6, 1.0, 11).unwrap();
        let bound = 2.0 * f.norm_bounds().a0 + mdp.mu_total().ln().abs();
        for _ in 0..1000 {
            let cloud = random_cloud(&mut rng, 4, f.param_dim(), 2.0);
            let pi = policy_from_cloud(&cloud, &f, &mdp).unwrap();
            let ld = log_density(&pi, &mdp).unwrap();
            for row in &ld {
                for &x in row {
                    assert!(x.abs() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn derivative_zero_for_action_constant_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = random_mdp(&mut rng, 2, 3, 0.5);
        let cloud = random_cloud(&mut rng, 3, 1, 1.0);
        let f = ConstLogit {
            values: vec![0.7, 0.7, 0.7],
        };
        let d = policy_functional_derivative(&cloud, &f, &mdp, &[0.3], 1).unwrap();
        for x in d {
            assert!(x.abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = random_mdp(&mut rng, 3, 4, 0.9);
        let f = OneHiddenFeature::new(3, 4, 3, 1.0).unwrap();
        for _ in 0..50 {
            let cloud = random_cloud(&mut rng, 4, f.param_dim(), 1.5);
            let theta = random_cloud(&mut rng, 1, f.param_dim(), 1.5).particles[0].clone();
            let d = policy_functional_derivative(&cloud, &f, &mdp, &theta, 1).unwrap();
            let sum: f64 = d.iter().sum();
            assert!(sum.abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_mixture_finite_difference() {
        // (pi_{nu + eps(delta_theta - nu)} - pi_nu)/eps extrapolated eps -> 0
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mdp = random_mdp(&mut rng, 3, 3, 0.9);
        let f = OneHiddenFeature::new(3, 3, 3, 1.0).unwrap();
        let cloud = random_cloud(&mut rng, 5, f.param_dim(), 1.0);
        let theta = random_cloud(&mut rng, 1, f.param_dim(), 1.0).particles[0].clone();
        let s = 2;
        let exact = policy_functional_derivative(&cloud, &f, &mdp, &theta, s).unwrap();
        // the flat derivative pairs against nu' - nu, so the mixture
        // difference quotient sees the nu-centered version
        let mut centered = exact.clone();
        for (theta_i, &w) in cloud.particles.iter().zip(&cloud.weights) {
            let di = policy_functional_derivative(&cloud, &f, &mdp, theta_i, s).unwrap();
            for (c, x) in centered.iter_mut().zip(&di) {
                *c -= w * x;
            }
        }

        let mixture = |eps: f64| -> Vec<f64> {
            let mut particles = cloud.particles.clone();
            let mut weights: Vec<f64> = cloud.weights.iter().map(|w| w * (1.0 - eps)).collect();
            particles.push(theta.clone());
            weights.push(eps);
            let sum: f64 = weights.iter().sum();
            let m = weights.len();
            weights[m - 1] += 1.0 - sum;
            let mixed = ParticleCloud::new(particles, weights).unwrap();
            policy_from_cloud(&mixed, &f, &mdp).unwrap().probs[s].clone()
        };
        let base = policy_from_cloud(&cloud, &f, &mdp).unwrap().probs[s].clone();
        // Richardson: (4 D(eps/2) - D(eps)) / 3 cancels the O(eps) term
        let eps = 1e-4;
        let d1: Vec<f64> = mixture(eps)
            .iter()
            .zip(&base)
            .map(|(p, b)| (p - b) / eps)
            .collect();
        let d2: Vec<f64> = mixture(eps / 2.0)
            .iter()
            .zip(&base)
            .map(|(p, b)| (p - b) / (eps / 2.0))
            .collect();
        for a in 0..3 {
            let extrapolated = (4.0 * d2[a] - d1[a]) / 3.0;
            let scale = centered[a].abs().max(1e-3);
            assert!(
                (extrapolated - centered[a]).abs() / scale < 1e-5,
                "action {a}: exact {} vs fd {}",
                centered[a],
                extrapolated
            );
        }
    }
}
