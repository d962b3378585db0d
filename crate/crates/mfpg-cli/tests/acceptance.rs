//! End-to-end acceptance gate. Each test covers one criterion and prints a
//! single PASS/FAIL line (visible with `--nocapture` or on failure).

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfpg_core::analysis::{
    fit_log_linear, objective, theoretical_constants, wasserstein, WassersteinMethod,
};
use mfpg_core::bandit::{simulate_bandit_flow, BanditSpec};
use mfpg_core::features::FeatureSpec;
use mfpg_core::flow::{flow_gradient, init_from_prior, run_flow, step};
use mfpg_core::meanfield::policy_from_cloud;
use mfpg_core::soft_dp::{bellman_residual, policy_evaluate, soft_value_iteration};
use mfpg_core::test_support::{random_cloud, random_mdp, random_policy};
use mfpg_core::{FlowConfig, GaussianPrior, StateDistribution};

use common::{mfpg, run, small_fixture, stdout_json};

fn conclude(index: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {index} ({name}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {index} ({name}) failed: {detail}");
}

#[test]
fn acceptance_1_exact_solver() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut detail = String::new();
    for case in 0..100 {
        let n_s = rng.gen_range(2..=6);
        let n_a = rng.gen_range(2..=5);
        let gamma = rng.gen_range(0.3..0.95);
        let mdp = random_mdp(&mut rng, n_s, n_a, gamma);
        let tau = if case % 4 == 0 {
            0.0
        } else {
            rng.gen_range(0.01..1.0)
        };
        let (vals, pi_star) = soft_value_iteration(&mdp, tau, 1e-10, 1_000_000).unwrap();
        let residual = bellman_residual(&mdp, &vals.v, tau);
        if residual >= 1e-9 {
            detail = format!("case {case}: residual {residual:.3e}");
            break;
        }
        // the optimal policy attains its own value
        let v_opt = policy_evaluate(&mdp, &pi_star, tau).unwrap();
        // and dominates arbitrary policies
        let mut ok = true;
        for _ in 0..3 {
            let pi = random_policy(&mut rng, n_s, n_a);
            let v_pi = policy_evaluate(&mdp, &pi, tau).unwrap();
            for s in 0..n_s {
                ok &= vals.v[s] + 1e-8 >= v_pi.v[s];
                ok &= (vals.v[s] - v_opt.v[s]).abs() < 1e-7;
            }
        }
        if !ok {
            detail = format!("case {case}: domination violated");
            break;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = detail.is_empty() && elapsed < 10.0;
    if detail.is_empty() && elapsed >= 10.0 {
        detail = format!("took {elapsed:.1}s, budget 10s");
    }
    conclude(1, "exact solver", pass, &detail);
}

#[test]
fn acceptance_2_derivative_oracle() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = small_fixture(dir.path());
    let out = run(&[
        "check-derivatives",
        "--config",
        config.to_str().unwrap(),
        "--cases",
        "50",
    ]);
    let ok = out.status.code() == Some(0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap_or_default();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = ok && doc["pass"] == serde_json::Value::Bool(true) && elapsed < 30.0;
    conclude(
        2,
        "finite-difference derivative oracle",
        pass,
        &format!("report {doc}, {elapsed:.1}s (budget 30s)"),
    );
}

#[test]
fn acceptance_3_noiseless_flow_ascends() {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let mut detail = String::new();

    for case in 0..10u64 {
        let n_s = rng.gen_range(2..=4);
        let n_a = rng.gen_range(2..=4);
        let gamma = rng.gen_range(0.5..0.9);
        let mdp = random_mdp(&mut rng, n_s, n_a, gamma);
        let spec = FeatureSpec::OneHidden {
            hidden_dim: 3,
            scale_cap: 1.0,
            seed: 40 + case,
        };
        let features = spec.build(n_s, n_a).unwrap();
        let prior = GaussianPrior::spherical(features.param_dim(), 1.0).unwrap();
        let cfg = FlowConfig {
            tau: 0.1,
            sigma: 0.0,
            eta: 1e-3,
            m: 64,
            steps: 2000,
            seed: 500 + case,
            prior,
            record_every: 100,
        };
        let init = init_from_prior(&cfg.prior, cfg.m, cfg.seed);
        let rho = StateDistribution::new(mdp.rho.clone()).unwrap();
        let traj = run_flow(&mdp, features.as_ref(), &cfg, &init, &rho, None).unwrap();
        let max_g = traj
            .records
            .iter()
            .map(|r| r.grad_norm_sq)
            .fold(0.0f64, f64::max);
        let slack = 10.0 * cfg.eta * cfg.eta * max_g;
        for w in traj.records.windows(2) {
            if w[1].j_tau0 < w[0].j_tau0 - slack {
                detail = format!(
                    "case {case}: objective dropped {:.3e} -> {:.3e} at step {}",
                    w[0].j_tau0, w[1].j_tau0, w[1].step
                );
            }
        }
        if !detail.is_empty() {
            break;
        }
    }

    // discretization order of the one-step energy identity
    // J(theta + eta G) - J(theta) = eta sum_i w_i |G_i|^2 + O(eta^2)
    let mut order_detail = String::new();
    if detail.is_empty() {
        let mdp = random_mdp(&mut rng, 3, 3, 0.8);
        let spec = FeatureSpec::OneHidden {
            hidden_dim: 3,
            scale_cap: 1.0,
            seed: 99,
        };
        let features = spec.build(3, 3).unwrap();
        let prior = GaussianPrior::spherical(features.param_dim(), 1.0).unwrap();
        let cloud = init_from_prior(&prior, 64, 77);
        let rho = StateDistribution::new(mdp.rho.clone()).unwrap();
        let g = flow_gradient(&mdp, features.as_ref(), &cloud, 0.1, &rho).unwrap();
        let power: f64 = g
            .iter()
            .zip(&cloud.weights)
            .map(|(gi, &w)| w * gi.iter().map(|x| x * x).sum::<f64>())
            .sum();
        let j0 = objective(&mdp, features.as_ref(), &cloud, 0.1, &rho).unwrap();
        let mut errs = Vec::new();
        for eta in [1e-2, 5e-3, 2.5e-3] {
            let cfg = FlowConfig {
                tau: 0.1,
                sigma: 0.0,
                eta,
                m: 64,
                steps: 1,
                seed: 0,
                prior: prior.clone(),
                record_every: 1,
            };
            let next = step(&cloud, &g, &cfg, 0).unwrap();
            let j1 = objective(&mdp, features.as_ref(), &next, 0.1, &rho).unwrap();
            errs.push((j1 - j0 - eta * power).abs());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            if order < 1.9 {
                order_detail = format!("energy identity order {order:.3} < 1.9 ({errs:?})");
            }
        }
    }

    let pass = detail.is_empty() && order_detail.is_empty();
    conclude(
        3,
        "noiseless flow monotonicity and step order",
        pass,
        &format!("{detail}{order_detail}"),
    );
}

#[test]
fn acceptance_4_quantitative_bounds() {
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let mut detail = String::new();

    for case in 0..100u64 {
        let n_s = rng.gen_range(2..=4);
        let n_a = rng.gen_range(2..=4);
        let gamma = rng.gen_range(0.3..0.9);
        let mdp = random_mdp(&mut rng, n_s, n_a, gamma);
        let tau = rng.gen_range(0.0..0.5);
        let spec = FeatureSpec::OneHidden {
            hidden_dim: 2,
            scale_cap: 1.0,
            seed: case,
        };
        let features = spec.build(n_s, n_a).unwrap();
        let nb = features.norm_bounds();
        let consts = theoretical_constants(
            gamma,
            mdp.reward_sup(),
            tau,
            mdp.mu_total(),
            nb.a0,
            nb.a1,
            nb.a2,
            0.0,
            0.0,
        )
        .unwrap();
        let rho = StateDistribution::new(mdp.rho.clone()).unwrap();
        let dim = features.param_dim();
        let a = random_cloud(&mut rng, 8, dim, 1.0);
        let b = random_cloud(&mut rng, 8, dim, 1.0);

        // gradient envelope |G_i| <= C1
        let g = flow_gradient(&mdp, features.as_ref(), &a, tau, &rho).unwrap();
        for gi in &g {
            let norm = gi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > consts.c1 + TOL {
                detail = format!("case {case}: |G| {norm:.3e} > C1 {:.3e}", consts.c1);
            }
        }

        // policy total variation against W1
        let w1 = wasserstein(&a, &b, 1, WassersteinMethod::Assignment).unwrap();
        let pa = policy_from_cloud(&a, features.as_ref(), &mdp).unwrap();
        let pb = policy_from_cloud(&b, features.as_ref(), &mdp).unwrap();
        for s in 0..n_s {
            let tv: f64 = pa.probs[s]
                .iter()
                .zip(&pb.probs[s])
                .map(|(x, y)| (x - y).abs())
                .sum();
            if tv > 2.0 * nb.a1 * w1 + TOL {
                detail = format!(
                    "case {case}: TV {tv:.3e} > 2 a1 W1 {:.3e}",
                    2.0 * nb.a1 * w1
                );
            }
        }

        // value sensitivity against W2
        let w2 = wasserstein(&a, &b, 2, WassersteinMethod::Assignment).unwrap();
        let ja = objective(&mdp, features.as_ref(), &a, tau, &rho).unwrap();
        let jb = objective(&mdp, features.as_ref(), &b, tau, &rho).unwrap();
        if (ja - jb).abs() > consts.c1 * w2 + TOL {
            detail = format!(
                "case {case}: |dJ| {:.3e} > C1 W2 {:.3e}",
                (ja - jb).abs(),
                consts.c1 * w2
            );
        }

        if !detail.is_empty() {
            break;
        }
    }
    conclude(4, "quantitative bound fuzz", detail.is_empty(), &detail);
}

#[test]
fn acceptance_5_bandit_convergence() {
    let start = Instant::now();
    let spec = BanditSpec {
        ell: vec![1.0],
        lambda: 0.5,
        tau: 1.0,
        m_u: vec![0.0],
        sigma_u: 1.0,
        sigma: 1.0,
    };
    let m = 10_000;
    let eta = 1e-3;
    let run = simulate_bandit_flow(&spec, m, eta, 10_000, 42, 10, None).unwrap();
    let mut detail = String::new();

    // mean tracks the analytic ODE within Monte Carlo + discretization error
    let band = 3.0 * spec.sigma_u / (m as f64).sqrt() + 2.0 * eta;
    for rec in run.records.iter().step_by(10) {
        let gap = (rec.mean[0] - rec.analytic_mean[0]).abs();
        if gap > band {
            detail = format!("t={:.2}: |mean gap| {gap:.4e} > band {band:.4e}", rec.time);
            break;
        }
    }

    // terminal mean hits the stationary value 2/3 within 1%
    let terminal = run.records.last().unwrap();
    let target = 2.0 / 3.0;
    if detail.is_empty() && (terminal.mean[0] - target).abs() > 0.01 * target {
        detail = format!("terminal mean {:.6} vs {target:.6}", terminal.mean[0]);
    }

    // W2 to the stationary measure decays at least at the dissipativity rate
    if detail.is_empty() {
        let beta_hat = spec.sigma * spec.sigma / (2.0 * spec.sigma_u * spec.sigma_u);
        let window: Vec<_> = run
            .records
            .iter()
            .filter(|r| r.time <= 2.0 && r.w2_to_star > 0.0)
            .collect();
        let times: Vec<f64> = window.iter().map(|r| r.time).collect();
        let w2s: Vec<f64> = window.iter().map(|r| r.w2_to_star).collect();
        let fit = fit_log_linear(&times, &w2s).unwrap();
        if fit.slope > -beta_hat {
            detail = format!("W2 slope {:.3} > -beta {beta_hat:.3}", fit.slope);
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    if detail.is_empty() && elapsed >= 60.0 {
        detail = format!("took {elapsed:.1}s, budget 60s");
    }
    conclude(5, "bandit closed-form convergence", detail.is_empty(), &detail);
}

#[test]
fn acceptance_6_example_constants() {
    let doc = stdout_json(&run(&["constants", "--mode", "example42"]));
    let pass = doc["c"].as_f64() == Some(2.0) && doc["l"].as_f64() == Some(6.0);
    conclude(6, "worked-example constants", pass, &doc.to_string());
}

#[test]
fn acceptance_7_sensitivity_bound() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bandit_config.json");
    std::fs::write(
        &config,
        r#"{
  "bandit": {"ell": [1.0], "lambda": 0.5, "tau": 1.0, "m_u": [0.0], "sigma_u": 1.0, "sigma": 1.0},
  "grid": 64,
  "flow": {"tau": 1.0, "sigma": 1.0, "eta": 0.001, "m": 32, "steps": 200, "seed": 7, "record_every": 50},
  "prior": {"sigma": 1.0}
}"#,
    )
    .unwrap();
    let out = run(&[
        "sensitivity",
        "--config",
        config.to_str().unwrap(),
        "--sigma-delta",
        "0.1",
        "--seeds",
        "3",
    ]);
    let ok = out.status.code() == Some(0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap_or_default();
    let pass = ok && doc["pass"] == serde_json::Value::Bool(true);
    conclude(
        7,
        "noise sensitivity bound",
        pass,
        &format!("{} {doc}", String::from_utf8_lossy(&out.stderr)),
    );
}

#[test]
fn acceptance_8_bitwise_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_fixture(dir.path());
    let mut artifacts = Vec::new();
    for (name, threads) in [("r1", "1"), ("r2", "1"), ("r3", "3"), ("r4", "8")] {
        let out_dir = dir.path().join(name);
        let out = mfpg()
            .args([
                "train",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .env("MFPG_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        artifacts.push((
            std::fs::read(out_dir.join("trajectory.csv")).unwrap(),
            std::fs::read(out_dir.join("final_cloud.json")).unwrap(),
        ));
    }
    let pass = artifacts.iter().all(|a| *a == artifacts[0]);

    // the in-process flow must also be invariant to the rayon pool size
    let mut clouds = Vec::new();
    for threads in [1usize, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let cloud = pool.install(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(8008);
            let mdp = random_mdp(&mut rng, 3, 3, 0.8);
            let spec = FeatureSpec::OneHidden {
                hidden_dim: 3,
                scale_cap: 1.0,
                seed: 5,
            };
            let features = spec.build(3, 3).unwrap();
            let prior = GaussianPrior::spherical(features.param_dim(), 1.0).unwrap();
            let cfg = FlowConfig {
                tau: 0.1,
                sigma: 0.5,
                eta: 1e-3,
                m: 32,
                steps: 100,
                seed: 21,
                prior,
                record_every: 50,
            };
            let init = init_from_prior(&cfg.prior, cfg.m, cfg.seed);
            let rho = StateDistribution::new(mdp.rho.clone()).unwrap();
            run_flow(&mdp, features.as_ref(), &cfg, &init, &rho, None)
                .unwrap()
                .final_cloud()
                .clone()
        });
        clouds.push(cloud);
    }
    let bitwise = clouds[0]
        .particles
        .iter()
        .flatten()
        .zip(clouds[1].particles.iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    conclude(
        8,
        "bitwise determinism across runs and thread counts",
        pass && bitwise,
        "outputs differ",
    );
}
