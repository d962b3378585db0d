//! Finite entropy-regularized Markov decision models: data model, validation,
//! policy-induced kernels, and discounted occupancy measures.
//!
//! States and actions are index sets `0..n-1`. The transition tensor is stored
//! dense; linear systems are solved by LU with partial pivoting and the
//! residual is checked.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const SIMPLEX_TOL: f64 = 1e-12;
const SOLVE_RESIDUAL_TOL: f64 = 1e-9;

/// A finite MDP with a strictly positive reference measure on actions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Transition probabilities indexed `[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Rewards indexed `[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// Reference-measure mass per action, all strictly positive.
    pub mu_weights: Vec<f64>,
    /// Initial state distribution.
    pub rho: Vec<f64>,
}

impl FiniteMdp {
    /// Total reference mass mu(A).
    pub fn mu_total(&self) -> f64 {
        self.mu_weights.iter().sum()
    }

    /// Sup norm of the reward.
    pub fn reward_sup(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .fold(0.0f64, |m, &r| m.max(r.abs()))
    }

    /// Loads an MDP from a JSON file and rejects it on any invariant violation.
    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mdp: FiniteMdp = serde_json::from_str(&text)?;
        let violations = validate(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(CoreError::InvalidModel(violations.join("; ")))
        }
    }
}

/// A row-stochastic policy pi(a|s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// Point-mass policy selecting `action` in every state.
    pub fn deterministic(n_states: usize, n_actions: usize, action: usize) -> Self {
        let mut probs = vec![vec![0.0; n_actions]; n_states];
        for row in &mut probs {
            row[action] = 1.0;
        }
        TabularPolicy { probs }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// pi(.|s) proportional to the reference measure mu.
    pub fn proportional_to_mu(mdp: &FiniteMdp) -> Self {
        let total = mdp.mu_total();
        TabularPolicy {
            probs: vec![
                mdp.mu_weights.iter().map(|&m| m / total).collect();
                mdp.n_states
            ],
        }
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().flatten().all(|&p| p > 0.0)
    }

    /// Checks shape and row-stochasticity against an MDP.
    pub fn check_for(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.probs.len() != mdp.n_states
            || self.probs.iter().any(|row| row.len() != mdp.n_actions)
        {
            return Err(CoreError::DimensionMismatch(format!(
                "policy shape does not match MDP with {} states, {} actions",
                mdp.n_states, mdp.n_actions
            )));
        }
        for (s, row) in self.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(CoreError::InvalidModel(format!(
                    "policy row {s} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(())
    }
}

/// A probability distribution over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub weights: Vec<f64>,
}

impl StateDistribution {
    pub fn delta(n_states: usize, s: usize) -> Self {
        let mut weights = vec![0.0; n_states];
        weights[s] = 1.0;
        StateDistribution { weights }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || weights.iter().any(|&w| w < 0.0) {
            return Err(CoreError::InvalidModel(format!(
                "state distribution is not a probability vector (sum {sum})"
            )));
        }
        Ok(StateDistribution { weights })
    }
}

/// Reports every invariant violation; an empty list means the model is valid.
pub fn validate(mdp: &FiniteMdp) -> Vec<String> {
    let mut out = Vec::new();
    if mdp.n_states == 0 {
        out.push("n_states must be positive".to_string());
    }
    if mdp.n_actions == 0 {
        out.push("n_actions must be positive".to_string());
    }
    if !(0.0..1.0).contains(&mdp.gamma) {
        out.push(format!("gamma {} not in [0, 1)", mdp.gamma));
    }
    if mdp.transition.len() != mdp.n_states {
        out.push("transition tensor has wrong number of states".to_string());
        return out;
    }
    for (s, per_action) in mdp.transition.iter().enumerate() {
        if per_action.len() != mdp.n_actions {
            out.push(format!("transition[{s}] has wrong number of actions"));
            continue;
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != mdp.n_states {
                out.push(format!("transition[{s}][{a}] has wrong length"));
                continue;
            }
            if row.iter().any(|&p| p < 0.0) {
                out.push(format!("transition[{s}][{a}] has a negative entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                out.push(format!("transition[{s}][{a}] sums to {sum}, expected 1"));
            }
        }
    }
    if mdp.reward.len() != mdp.n_states
        || mdp.reward.iter().any(|row| row.len() != mdp.n_actions)
    {
        out.push("reward matrix shape mismatch".to_string());
    }
    if mdp.mu_weights.len() != mdp.n_actions {
        out.push("mu_weights length mismatch".to_string());
    } else {
        for (a, &m) in mdp.mu_weights.iter().enumerate() {
            if !(m > 0.0) {
                out.push(format!("mu_weights[{a}] = {m} is not strictly positive"));
            }
        }
        let total: f64 = mdp.mu_weights.iter().sum();
        if !total.is_finite() || !(total > 0.0) {
            out.push(format!("mu(A) = {total} is not finite and positive"));
        }
    }
    if mdp.rho.len() != mdp.n_states {
        out.push("rho length mismatch".to_string());
    } else {
        if mdp.rho.iter().any(|&p| p < 0.0) {
            out.push("rho has a negative entry".to_string());
        }
        let sum: f64 = mdp.rho.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            out.push(format!("rho sums to {sum}, expected 1"));
        }
    }
    out
}

/// State-to-state kernel `P_pi[s][s'] = sum_a P[s][a][s'] pi(a|s)`.
pub fn policy_transition(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<Vec<Vec<f64>>> {
    pi.check_for(mdp)?;
    let n = mdp.n_states;
    let mut kernel = vec![vec![0.0; n]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = pi.probs[s][a];
            if w == 0.0 {
                continue;
            }
            for sp in 0..n {
                kernel[s][sp] += w * mdp.transition[s][a][sp];
            }
        }
    }
    Ok(kernel)
}

/// Discounted occupancy measure `d = (1-gamma) sum_n gamma^n start P_pi^n`,
/// obtained by solving `(I - gamma P_pi^T) d = (1-gamma) start`.
pub fn occupancy(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    start: &StateDistribution,
) -> Result<StateDistribution> {
    let kernel = policy_transition(mdp, pi)?;
    if start.weights.len() != mdp.n_states {
        return Err(CoreError::DimensionMismatch(
            "start distribution length".to_string(),
        ));
    }
    let n = mdp.n_states;
    let gamma = mdp.gamma;
    let mut sys = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for sp in 0..n {
            // transpose: column index s feeds row sp
            sys[(sp, s)] -= gamma * kernel[s][sp];
        }
    }
    let rhs = DVector::from_iterator(n, start.weights.iter().map(|&w| (1.0 - gamma) * w));
    let lu = sys.clone().lu();
    let d = lu.solve(&rhs).ok_or(CoreError::LinearSolve {
        residual: f64::INFINITY,
        tol: SOLVE_RESIDUAL_TOL,
    })?;
    let residual = (&sys * &d - &rhs).amax();
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(CoreError::LinearSolve {
            residual,
            tol: SOLVE_RESIDUAL_TOL,
        });
    }
    // solutions of the fixed-point system are exact probability vectors up to
    // rounding; clamp tiny negative entries from the solve
    let weights: Vec<f64> = d.iter().map(|&w| w.max(0.0)).collect();
    Ok(StateDistribution { weights })
}

/// Occupancy started from the MDP's own initial distribution rho.
pub fn occupancy_from_rho(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<StateDistribution> {
    let start = StateDistribution {
        weights: mdp.rho.clone(),
    };
    occupancy(mdp, pi, &start)
}
