//! Exact entropy-regularized dynamic programming.
//!
//! Policy evaluation solves the linear Bellman system exactly; it is the
//! oracle for the derivative checks downstream, so exactness matters more
//! than speed here.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::mdp::{occupancy, policy_transition, FiniteMdp, StateDistribution, TabularPolicy};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Value and state-action value functions at a given regularization strength.
#[derive(Debug, Clone)]
pub struct ValueFunctions {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub tau: f64,
}

impl ValueFunctions {
    /// V(rho) = sum_s rho(s) V(s).
    pub fn value_of(&self, rho: &[f64]) -> f64 {
        self.v.iter().zip(rho).map(|(v, w)| v * w).sum()
    }
}

fn q_from_v(mdp: &FiniteMdp, v: &[f64]) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut future = 0.0;
            for sp in 0..mdp.n_states {
                future += mdp.transition[s][a][sp] * v[sp];
            }
            q[s][a] = mdp.reward[s][a] + mdp.gamma * future;
        }
    }
    q
}

/// Per-state entropy-regularized expected one-step payoff under pi:
/// `c(s) = sum_a pi(a|s) (r(s,a) - tau ln(pi(a|s)/mu(a)))`.
fn regularized_reward(mdp: &FiniteMdp, pi: &TabularPolicy, tau: f64) -> Result<Vec<f64>> {
    let mut c = vec![0.0; mdp.n_states];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let p = pi.probs[s][a];
            if p == 0.0 {
                if tau > 0.0 {
                    return Err(CoreError::ZeroPolicyEntry { state: s, action: a });
                }
                continue;
            }
            let mut term = mdp.reward[s][a];
            if tau > 0.0 {
                term -= tau * (p / mdp.mu_weights[a]).ln();
            }
            c[s] += p * term;
        }
    }
    Ok(c)
}

/// Exact policy evaluation: solves `(I - gamma P_pi) V = c` by LU.
pub fn policy_evaluate(mdp: &FiniteMdp, pi: &TabularPolicy, tau: f64) -> Result<ValueFunctions> {
    if tau < 0.0 {
        return Err(CoreError::InvalidConfig("tau must be nonnegative".into()));
    }
    let kernel = policy_transition(mdp, pi)?;
    let c = regularized_reward(mdp, pi, tau)?;
    let n = mdp.n_states;
    let mut sys = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for sp in 0..n {
            sys[(s, sp)] -= mdp.gamma * kernel[s][sp];
        }
    }
    let rhs = DVector::from_column_slice(&c);
    let v = sys.clone().lu().solve(&rhs).ok_or(CoreError::LinearSolve {
        residual: f64::INFINITY,
        tol: 1e-10,
    })?;
    let residual = (&sys * &v - &rhs).amax();
    if residual > 1e-10 {
        return Err(CoreError::LinearSolve {
            residual,
            tol: 1e-10,
        });
    }
    let v: Vec<f64> = v.iter().copied().collect();
    let q = q_from_v(mdp, &v);
    Ok(ValueFunctions { v, q, tau })
}

/// One application of the soft (tau > 0) or hard (tau = 0) Bellman optimality
/// operator. The soft max is computed by log-sum-exp shifted by the row max.
fn bellman_optimality(mdp: &FiniteMdp, v: &[f64], tau: f64) -> Vec<f64> {
    let q = q_from_v(mdp, v);
    let mut out = vec![0.0; mdp.n_states];
    for s in 0..mdp.n_states {
        if tau > 0.0 {
            // V(s) = tau ln sum_a exp(Q(s,a)/tau) mu(a)
            let logits: Vec<f64> = (0..mdp.n_actions)
                .map(|a| q[s][a] / tau + mdp.mu_weights[a].ln())
                .collect();
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
            out[s] = tau * (max + sum.ln());
        } else {
            out[s] = q[s].iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        }
    }
    out
}

/// Soft value iteration to the fixed point of the regularized Bellman
/// equation, returning the optimal values and the optimal policy
/// `pi*(a|s) = exp((Q*(s,a) - V*(s))/tau) mu(a)` (greedy lowest-index
/// deterministic policy when tau = 0).
pub fn soft_value_iteration(
    mdp: &FiniteMdp,
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueFunctions, TabularPolicy)> {
    if !(tol > 0.0) {
        return Err(CoreError::InvalidConfig("tol must be positive".into()));
    }
    let mut v = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = bellman_optimality(mdp, &v, tau);
        residual = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = next;
        if residual < tol {
            let q = q_from_v(mdp, &v);
            let pi = optimal_policy(mdp, &v, &q, tau);
            return Ok((ValueFunctions { v, q, tau }, pi));
        }
    }
    Err(CoreError::NoConvergence {
        iters: max_iter,
        residual,
    })
}

fn optimal_policy(mdp: &FiniteMdp, v: &[f64], q: &[Vec<f64>], tau: f64) -> TabularPolicy {
    let mut probs = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for s in 0..mdp.n_states {
        if tau > 0.0 {
            let mut row: Vec<f64> = (0..mdp.n_actions)
                .map(|a| ((q[s][a] - v[s]) / tau).exp() * mdp.mu_weights[a])
                .collect();
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            let total: f64 = row.iter().sum();
            row[mdp.n_actions - 1] += 1.0 - total;
            probs[s] = row;
        } else {
            // lowest-index tie-breaking
            let best = q[s]
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                    if x > bv {
                        (i, x)
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            probs[s][best] = 1.0;
        }
    }
    TabularPolicy { probs }
}

/// Sup-norm residual of the identity
/// `V_tau(s) = V_0(s) - tau/(1-gamma) sum_s' d(s'|s) KL(pi(.|s')|mu)`.
pub fn kl_decomposition_check(mdp: &FiniteMdp, pi: &TabularPolicy, tau: f64) -> Result<f64> {
    if !pi.is_strictly_positive() {
        return Err(CoreError::InvalidModel(
            "kl_decomposition_check requires a strictly positive policy".into(),
        ));
    }
    let v_tau = policy_evaluate(mdp, pi, tau)?;
    let v_zero = policy_evaluate(mdp, pi, 0.0)?;
    let kl: Vec<f64> = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let p = pi.probs[s][a];
                    p * (p / mdp.mu_weights[a]).ln()
                })
                .sum()
        })
        .collect();
    let mut worst = 0.0f64;
    for s in 0..mdp.n_states {
        let d = occupancy(mdp, pi, &StateDistribution::delta(mdp.n_states, s))?;
        let mixed: f64 = d.weights.iter().zip(&kl).map(|(w, k)| w * k).sum();
        let residual =
            (v_tau.v[s] - v_zero.v[s] + tau / (1.0 - mdp.gamma) * mixed).abs();
        worst = worst.max(residual);
    }
    Ok(worst)
}

/// Value via the occupancy-weighted form
/// `V(s) = 1/(1-gamma) sum_{s'} d(s'|s) c(s')`; used as the second route in
/// consistency tests.
pub fn value_via_occupancy(mdp: &FiniteMdp, pi: &TabularPolicy, tau: f64) -> Result<Vec<f64>> {
    let c = regularized_reward(mdp, pi, tau)?;
    let mut v = vec![0.0; mdp.n_states];
    for s in 0..mdp.n_states {
        let d = occupancy(mdp, pi, &StateDistribution::delta(mdp.n_states, s))?;
        v[s] = d.weights.iter().zip(&c).map(|(w, ci)| w * ci).sum::<f64>() / (1.0 - mdp.gamma);
    }
    Ok(v)
}

/// Sup-norm Bellman residual of (v, pi) under the optimality operator.
pub fn bellman_residual(mdp: &FiniteMdp, v: &[f64], tau: f64) -> f64 {
    bellman_optimality(mdp, v, tau)
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
}
