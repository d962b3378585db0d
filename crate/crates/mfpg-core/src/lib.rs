//! Exact laboratory for entropy-regularized MDPs and mean-field softmax
//! policy-gradient particle flows: soft dynamic programming oracles, exact
//! functional-derivative gradients, Euler-Maruyama particle dynamics, the
//! closed-form Gaussian bandit benchmark, and the diagnostic suite that checks
//! the theoretical bounds empirically.

// index loops run over several same-shaped tensors at once, and `!(x > 0.0)`
// deliberately rejects NaN where `x <= 0.0` would accept it
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bandit;
pub mod cloud;
pub mod error;
pub mod features;
pub mod flow;
pub mod hungarian;
pub mod mdp;
pub mod meanfield;
pub mod prior;
pub mod rng;
pub mod soft_dp;
pub mod test_support;

pub use cloud::ParticleCloud;
pub use error::{CoreError, Result};
pub use features::{FeatureMap, FeatureSpec, NormBounds};
pub use flow::{FlowConfig, Trajectory};
pub use mdp::{FiniteMdp, StateDistribution, TabularPolicy};
pub use prior::GaussianPrior;
