//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mfpg_core::test_support::{random_cloud, random_mdp};
use mfpg_core::{FeatureMap, FeatureSpec, FiniteMdp, ParticleCloud};

pub struct Fixture {
    pub mdp: FiniteMdp,
    pub features: Box<dyn FeatureMap>,
    pub cloud: ParticleCloud,
}

pub fn fixture(n_states: usize, n_actions: usize, m: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = random_mdp(&mut rng, n_states, n_actions, 0.9);
    let features = FeatureSpec::OneHidden {
        hidden_dim: 4,
        scale_cap: 1.0,
        seed,
    }
    .build(n_states, n_actions)
    .expect("valid feature spec");
    let cloud = random_cloud(&mut rng, m, features.param_dim(), 1.0);
    Fixture {
        mdp,
        features,
        cloud,
    }
}
