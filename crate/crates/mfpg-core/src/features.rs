//! Feature maps `f(theta, s, a)` with analytic parameter gradients and
//! declared norm bounds.
//!
//! Two built-ins are provided: a one-hidden-layer form on one-hot state and
//! action encodings, and a random-feature tanh form. Both use the smooth
//! rescaling `psi(z) = C tanh(z/C)` so the declared bounds hold pointwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Declared norm bounds |f|_{A_0}, |f|_{A_1}, |f|_{A_2}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Evaluable feature with analytic theta-gradient. Implementations must be
/// pure and reentrant; all callers share them across threads.
pub trait FeatureMap: Send + Sync {
    fn param_dim(&self) -> usize;
    fn eval(&self, theta: &[f64], s: usize, a: usize) -> f64;
    /// Writes the d-dimensional gradient into `out`.
    fn grad(&self, theta: &[f64], s: usize, a: usize, out: &mut [f64]);
    fn norm_bounds(&self) -> NormBounds;

    fn grad_vec(&self, theta: &[f64], s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.param_dim()];
        self.grad(theta, s, a, &mut out);
        out
    }
}

// max |sech^2(x) tanh(x)| = 2 / (3 sqrt(3))
const SECH2_TANH_MAX: f64 = 0.3849001794597505;

fn psi(c: f64, z: f64) -> f64 {
    c * (z / c).tanh()
}

fn psi_prime(c: f64, z: f64) -> f64 {
    let t = (z / c).tanh();
    1.0 - t * t
}

/// One-hidden-layer feature `f = sum_j psi(theta0_j) tanh((theta1 x)_j)` with
/// `x` the concatenated one-hot encodings of the state and action indices
/// plus a constant 1.
pub struct OneHiddenFeature {
    n_states: usize,
    n_actions: usize,
    hidden_dim: usize,
    scale_cap: f64,
}

impl OneHiddenFeature {
    pub fn new(n_states: usize, n_actions: usize, hidden_dim: usize, scale_cap: f64) -> Result<Self> {
        if hidden_dim == 0 || !(scale_cap > 0.0) {
            return Err(CoreError::InvalidConfig(
                "one_hidden needs hidden_dim >= 1 and scale_cap > 0".into(),
            ));
        }
        Ok(OneHiddenFeature {
            n_states,
            n_actions,
            hidden_dim,
            scale_cap,
        })
    }

    fn x_dim(&self) -> usize {
        self.n_states + self.n_actions + 1
    }

    /// `u_j = (theta1 x)_j`; x is one-hot twice plus a trailing 1, so the
    /// product reduces to three lookups.
    fn preactivation(&self, theta: &[f64], j: usize, s: usize, a: usize) -> f64 {
        let row = self.hidden_dim + j * self.x_dim();
        theta[row + s] + theta[row + self.n_states + a] + theta[row + self.x_dim() - 1]
    }
}

impl FeatureMap for OneHiddenFeature {
    fn param_dim(&self) -> usize {
        self.hidden_dim * (1 + self.x_dim())
    }

    fn eval(&self, theta: &[f64], s: usize, a: usize) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.hidden_dim {
            acc += psi(self.scale_cap, theta[j]) * self.preactivation(theta, j, s, a).tanh();
        }
        acc
    }

    fn grad(&self, theta: &[f64], s: usize, a: usize, out: &mut [f64]) {
        out.fill(0.0);
        for j in 0..self.hidden_dim {
            let u = self.preactivation(theta, j, s, a);
            let t = u.tanh();
            out[j] = psi_prime(self.scale_cap, theta[j]) * t;
            let dpre = psi(self.scale_cap, theta[j]) * (1.0 - t * t);
            let row = self.hidden_dim + j * self.x_dim();
            out[row + s] += dpre;
            out[row + self.n_states + a] += dpre;
            out[row + self.x_dim() - 1] += dpre;
        }
    }

    fn norm_bounds(&self) -> NormBounds {
        let h = self.hidden_dim as f64;
        let c = self.scale_cap;
        // |x|^2 = 3 (two one-hot blocks plus the constant)
        let a0 = h * c;
        let a1 = (h * (1.0 + 3.0 * c * c)).sqrt();
        let d2_psi = 2.0 * SECH2_TANH_MAX / c;
        let a2 = (h * (d2_psi * d2_psi + 6.0 + 9.0 * (2.0 * SECH2_TANH_MAX * c).powi(2))).sqrt();
        NormBounds { a0, a1, a2 }
    }
}

/// Random-feature form `f = (1/d) sum_j psi(theta_j) tanh(g_j(a))`, with `g`
/// a per-action table drawn once from a seeded standard normal.
pub struct RandomTanhFeature {
    table: Vec<Vec<f64>>, // [action][hidden]
    hidden_dim: usize,
    scale_cap: f64,
}

impl RandomTanhFeature {
    pub fn new(n_actions: usize, hidden_dim: usize, scale_cap: f64, seed: u64) -> Result<Self> {
        if hidden_dim == 0 || !(scale_cap > 0.0) {
            return Err(CoreError::InvalidConfig(
                "random_tanh needs hidden_dim >= 1 and scale_cap > 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..n_actions)
            .map(|_| {
                (0..hidden_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        Ok(RandomTanhFeature {
            table,
            hidden_dim,
            scale_cap,
        })
    }
}

impl FeatureMap for RandomTanhFeature {
    fn param_dim(&self) -> usize {
        self.hidden_dim
    }

    fn eval(&self, theta: &[f64], _s: usize, a: usize) -> f64 {
        let g = &self.table[a];
        let mut acc = 0.0;
        for j in 0..self.hidden_dim {
            acc += psi(self.scale_cap, theta[j]) * g[j].tanh();
        }
        acc / self.hidden_dim as f64
    }

    fn grad(&self, theta: &[f64], _s: usize, a: usize, out: &mut [f64]) {
        let g = &self.table[a];
        let inv = 1.0 / self.hidden_dim as f64;
        for j in 0..self.hidden_dim {
            out[j] = inv * psi_prime(self.scale_cap, theta[j]) * g[j].tanh();
        }
    }

    fn norm_bounds(&self) -> NormBounds {
        let d = self.hidden_dim as f64;
        NormBounds {
            a0: self.scale_cap,
            a1: 1.0 / d.sqrt(),
            a2: 2.0 * SECH2_TANH_MAX / (self.scale_cap * d.sqrt()),
        }
    }
}

/// Quadratic bandit feature `f(theta, a) = -(lambda/tau) (a_val - clip(theta))^2`
/// with theta clipped to the action box so the feature is bounded. Used by the
/// bandit discretization cross-check; d = 1.
pub struct ClippedQuadraticFeature {
    pub action_values: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
    pub lo: f64,
    pub hi: f64,
}

impl FeatureMap for ClippedQuadraticFeature {
    fn param_dim(&self) -> usize {
        1
    }

    fn eval(&self, theta: &[f64], _s: usize, a: usize) -> f64 {
        let t = theta[0].clamp(self.lo, self.hi);
        let diff = self.action_values[a] - t;
        -(self.lambda / self.tau) * diff * diff
    }

    fn grad(&self, theta: &[f64], _s: usize, a: usize, out: &mut [f64]) {
        let inside = theta[0] >= self.lo && theta[0] <= self.hi;
        out[0] = if inside {
            2.0 * (self.lambda / self.tau) * (self.action_values[a] - theta[0])
        } else {
            0.0
        };
    }

    fn norm_bounds(&self) -> NormBounds {
        let width = self.hi - self.lo;
        let scale = self.lambda / self.tau;
        NormBounds {
            a0: scale * width * width,
            a1: 2.0 * scale * width,
            a2: 2.0 * scale,
        }
    }
}

/// Feature selection as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    OneHidden {
        hidden_dim: usize,
        scale_cap: f64,
        #[serde(default)]
        seed: u64,
    },
    RandomTanh {
        hidden_dim: usize,
        scale_cap: f64,
        seed: u64,
    },
}

impl FeatureSpec {
    pub fn build(&self, n_states: usize, n_actions: usize) -> Result<Box<dyn FeatureMap>> {
        match *self {
            FeatureSpec::OneHidden {
                hidden_dim,
                scale_cap,
                ..
            } => Ok(Box::new(OneHiddenFeature::new(
                n_states, n_actions, hidden_dim, scale_cap,
            )?)),
            FeatureSpec::RandomTanh {
                hidden_dim,
                scale_cap,
                seed,
            } => Ok(Box::new(RandomTanhFeature::new(
                n_actions, hidden_dim, scale_cap, seed,
            )?)),
        }
    }
}
