//! Seeded random model generators shared by fuzz tests and probe harnesses.

use rand::Rng;

use crate::cloud::ParticleCloud;
use crate::mdp::{FiniteMdp, TabularPolicy};

/// Random MDP with dense strictly positive transitions and rewards in [-1, 1].
pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> FiniteMdp {
    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    for per_action in &mut transition {
        for row in per_action.iter_mut() {
            let mut sum = 0.0;
            for p in row.iter_mut() {
                *p = rng.gen_range(0.05..1.0);
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            // renormalize exactly so validation at 1e-12 passes
            let s: f64 = row.iter().sum();
            row[n_states - 1] += 1.0 - s;
        }
    }
    let reward = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mu_weights = (0..n_actions).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut rho: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.1..1.0)).collect();
    let sum: f64 = rho.iter().sum();
    for w in &mut rho {
        *w /= sum;
    }
    let s: f64 = rho.iter().sum();
    rho[n_states - 1] += 1.0 - s;
    FiniteMdp {
        n_states,
        n_actions,
        gamma,
        transition,
        reward,
        mu_weights,
        rho,
    }
}

/// Random strictly positive row-stochastic policy.
pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularPolicy {
    let probs = (0..n_states)
        .map(|_| {
            let mut row: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            let s: f64 = row.iter().sum();
            row[n_actions - 1] += 1.0 - s;
            row
        })
        .collect();
    TabularPolicy { probs }
}

/// Uniform-weight cloud with coordinates drawn from `N(0, scale^2)`.
pub fn random_cloud<R: Rng>(rng: &mut R, m: usize, dim: usize, scale: f64) -> ParticleCloud {
    let particles = (0..m)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = rand_distr::StandardNormal.sample(rng);
                    scale * z
                })
                .collect()
        })
        .collect();
    ParticleCloud::uniform(particles).expect("non-empty cloud")
}

use rand_distr::Distribution;
