//! Gaussian prior potential `U(theta) = |theta - m_U|^2 / (2 sigma_U^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(CoreError::InvalidConfig(format!(
                "prior sigma must be positive and finite, got {sigma}"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "prior mean must be finite".into(),
            ));
        }
        Ok(Self { mean, sigma })
    }

    pub fn spherical(dim: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], sigma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The normalized potential `(d/2) ln(2 pi sigma_U^2) + |theta - m_U|^2 / (2 sigma_U^2)`,
    /// so that `exp(-U)` integrates to 1.
    pub fn value(&self, theta: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.log_normalizer()
            + theta
                .iter()
                .zip(&self.mean)
                .map(|(&t, &m)| (t - m) * (t - m))
                .sum::<f64>()
                / (2.0 * s2)
    }

    pub fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        for ((o, &t), &m) in out.iter_mut().zip(theta).zip(&self.mean) {
            *o = (t - m) / s2;
        }
    }

    pub fn gradient_vec(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.gradient(theta, &mut out);
        out
    }

    /// Strong convexity constant: `grad U` is `kappa`-monotone with
    /// `kappa = 1 / sigma_U^2` (here exactly, since U is quadratic).
    pub fn convexity_kappa(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }

    /// Lipschitz constant of `grad U` (exact for the quadratic).
    pub fn gradient_lipschitz(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }

    /// Normalizing constant of exp(-U): `(2 pi sigma_U^2)^{d/2}`.
    pub fn log_normalizer(&self) -> f64 {
        0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).ln()
    }
}
