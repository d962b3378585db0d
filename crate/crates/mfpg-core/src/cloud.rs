//! Weighted particle clouds representing empirical parameter measures.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const WEIGHT_TOL: f64 = 1e-12;

/// Empirical measure `nu^m = sum_i w_i delta_{theta_i}` over parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    /// m x d parameter matrix.
    pub particles: Vec<Vec<f64>>,
    /// Nonnegative weights summing to one.
    pub weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(particles: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(CoreError::InvalidConfig("cloud needs m >= 1".into()));
        }
        if particles.len() != weights.len() {
            return Err(CoreError::DimensionMismatch(
                "particle/weight count".into(),
            ));
        }
        let dim = particles[0].len();
        if particles.iter().any(|p| p.len() != dim) {
            return Err(CoreError::DimensionMismatch("ragged particle matrix".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(CoreError::InvalidConfig(format!(
                "weights must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        Ok(ParticleCloud { particles, weights })
    }

    pub fn uniform(particles: Vec<Vec<f64>>) -> Result<Self> {
        let m = particles.len();
        Self::new(particles, vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= WEIGHT_TOL)
    }

    /// Weighted mean of the particles.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            for k in 0..d {
                out[k] += w * p[k];
            }
        }
        out
    }

    /// Weighted sample covariance (biased, weights as probabilities).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mean = self.mean();
        let mut cov = vec![vec![0.0; d]; d];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += w * (p[i] - mean[i]) * (p[j] - mean[j]);
                }
            }
        }
        cov
    }
}
