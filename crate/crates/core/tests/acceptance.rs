//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `--nocapture` to see them on success). Monte Carlo sizes are
//! desk scale; seeds are fixed so every run is reproducible.

mod common;

use common::{mean_sd, OracleHawkes};
use lshawkes::estimate::{default_bounds, mle_fit, standard_errors, FitOptions};
use lshawkes::experiments::{self, presets, GRecoveryConfig, LobBatchConfig, NullDistConfig,
    PowerCurveConfig};
use lshawkes::gof::{exp1_cdf, ks_pvalue, ks_statistic};
use lshawkes::kernels::KernelFamily;
use lshawkes::likelihood::{loglik, loglik_grad};
use lshawkes::lrt;
use lshawkes::model::{Activation, Baseline, Entry, KernelSpec, ModelSpec, Reproduction};
use lshawkes::params::ParamVector;
use lshawkes::replicates;
use lshawkes::rng::RngStream;
use lshawkes::simulate::{thinning_simulate, time_rescaling_residuals, SimConfig};
use rand::Rng;

fn report(criterion: &str, pass: bool, detail: &str, elapsed: std::time::Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {verdict} ({detail}; {elapsed:.1?})");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

/// Random feasible instance cycling through kernel families and activations.
fn random_instance(case: usize) -> (ModelSpec, ParamVector, f64) {
    let mut rng = RngStream::new(11_000 + case as u64, 0).rng();
    let degree = 1 + case % 4;
    let family = case % 5;
    let beta = 1.2 + 1.8 * rng.random::<f64>();
    let mu = 0.6 + 0.8 * rng.random::<f64>();
    let branching = 0.2 + 0.4 * rng.random::<f64>();
    let build = |kernel: KernelSpec, activation: Activation| {
        ModelSpec::new(
            1,
            Baseline::Constant,
            kernel,
            Reproduction::Bernstein {
                degree,
                pin_first: false,
            },
            activation,
        )
        .unwrap()
    };
    let (spec, eta, mass) = match family {
        0 => {
            // raw exponential, closed-form path
            let spec = build(
                KernelSpec {
                    family: KernelFamily::Exponential,
                    structure: vec![vec![Entry::Raw]],
                },
                Activation::Identity,
            );
            (spec, vec![mu, beta], 1.0 / beta)
        }
        1 => {
            // free-amplitude exponential
            let alpha = 0.3 + 0.3 * rng.random::<f64>();
            let spec = build(
                KernelSpec {
                    family: KernelFamily::Exponential,
                    structure: vec![vec![Entry::Group(0)]],
                },
                Activation::Identity,
            );
            (spec, vec![mu, alpha, beta], alpha)
        }
        2 => {
            // raw power law
            let pl_beta = 1.7 + 1.2 * rng.random::<f64>();
            let gamma = 0.4 + 0.6 * rng.random::<f64>();
            let spec = build(
                KernelSpec {
                    family: KernelFamily::PowerLaw,
                    structure: vec![vec![Entry::Raw]],
                },
                Activation::Identity,
            );
            let mass = gamma.powf(1.0 - pl_beta) / (pl_beta - 1.0);
            (spec, vec![mu, pl_beta, gamma], mass)
        }
        3 => {
            // raw gaussian
            let g_beta = 1.5 + 2.0 * rng.random::<f64>();
            let gamma = 0.2 + 0.4 * rng.random::<f64>();
            let spec = build(
                KernelSpec {
                    family: KernelFamily::Gaussian,
                    structure: vec![vec![Entry::Raw]],
                },
                Activation::Identity,
            );
            let kernel = lshawkes::kernels::KernelParams::Gaussian {
                alpha: 1.0,
                beta: g_beta,
                gamma,
            };
            let mass = kernel.integral(0.0, f64::INFINITY).unwrap();
            (spec, vec![mu, g_beta, gamma], mass)
        }
        _ => {
            // softplus activation exercises the quadrature path end to end
            let spec = build(
                KernelSpec {
                    family: KernelFamily::Exponential,
                    structure: vec![vec![Entry::Raw]],
                },
                Activation::Softplus { floor: 1e-3 },
            );
            (spec, vec![mu, beta], 1.0 / beta)
        }
    };
    let varpi: Vec<f64> = (0..=degree)
        .map(|_| branching * (0.6 + 0.8 * rng.random::<f64>()) / mass)
        .collect();
    let theta = ParamVector::unbounded(eta, varpi);
    assert!(spec.check_stability(&theta).unwrap().stable, "case {case}");
    // horizon sized for a modest event count (quadrature instances are
    // quadratic in history)
    let horizon = 60.0 / (mu / (1.0 - branching)).max(0.2);
    (spec, theta, horizon.min(120.0))
}

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = std::time::Instant::now();
    let worst: Vec<f64> = replicates::run(20, |case| {
        let (spec, theta, horizon) = random_instance(case);
        let events = thinning_simulate(&SimConfig::new(
            spec.clone(),
            theta.clone(),
            horizon,
            RngStream::new(12_000, case as u64),
        ))
        .unwrap();
        assert!(events.total_events() <= 500, "case {case} too large");
        let grad = loglik_grad(&spec, &theta, &events).unwrap();
        let full = theta.full();
        let mut worst: f64 = 0.0;
        for i in 0..full.len() {
            let h = 1e-5 * full[i].abs().max(1.0);
            let mut up = full.clone();
            let mut down = full.clone();
            up[i] += h;
            down[i] -= h;
            let f_up = loglik(&spec, &theta.with_full(&up).unwrap(), &events).unwrap();
            let f_down = loglik(&spec, &theta.with_full(&down).unwrap(), &events).unwrap();
            let fd = (f_up - f_down) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1.0);
            worst = worst.max((grad[i] - fd).abs() / scale);
        }
        worst
    });
    let max_err = worst.iter().cloned().fold(0.0, f64::max);
    report(
        "1 (gradient correctness)",
        max_err < 1e-5,
        &format!("worst per-coordinate relative error {max_err:.2e} over 20 instances"),
        t0.elapsed(),
    );
}

#[test]
fn criterion_02_likelihood_oracle_equivalence() {
    let t0 = std::time::Instant::now();
    let errors: Vec<f64> = replicates::run(50, |case| {
        let mut rng = RngStream::new(13_000 + case as u64, 0).rng();
        let degree = 1 + case % 3;
        let bivariate = case % 5 == 4;
        let beta = 1.3 + 1.5 * rng.random::<f64>();
        let (spec, theta, oracle) = if bivariate {
            let spec = ModelSpec::new(
                2,
                Baseline::Constant,
                KernelSpec {
                    family: KernelFamily::Exponential,
                    structure: vec![
                        vec![Entry::Group(0), Entry::Group(1)],
                        vec![Entry::Group(2), Entry::Group(3)],
                    ],
                },
                Reproduction::Bernstein {
                    degree,
                    pin_first: false,
                },
                Activation::Identity,
            )
            .unwrap();
            let a = [
                0.25 + 0.2 * rng.random::<f64>(),
                0.1 * rng.random::<f64>(),
                0.1 * rng.random::<f64>(),
                0.25 + 0.2 * rng.random::<f64>(),
            ];
            let mu = [0.7 + 0.5 * rng.random::<f64>(), 0.7 + 0.5 * rng.random::<f64>()];
            let varpi: Vec<f64> = (0..=degree)
                .map(|_| 0.5 + 0.7 * rng.random::<f64>())
                .collect();
            let theta = ParamVector::unbounded(
                vec![mu[0], mu[1], a[0], a[1], a[2], a[3], beta],
                varpi.clone(),
            );
            let oracle = OracleHawkes {
                mu: mu.to_vec(),
                alpha: vec![vec![a[0], a[1]], vec![a[2], a[3]]],
                beta,
                weights: varpi,
            };
            (spec, theta, oracle)
        } else {
            let spec = ModelSpec::univariate_raw_exponential(Reproduction::Bernstein {
                degree,
                pin_first: false,
            });
            let mu = 0.6 + rng.random::<f64>();
            let varpi: Vec<f64> = (0..=degree)
                .map(|_| beta * (0.15 + 0.45 * rng.random::<f64>()))
                .collect();
            let theta = ParamVector::unbounded(vec![mu, beta], varpi.clone());
            let oracle = OracleHawkes {
                mu: vec![mu],
                alpha: vec![vec![1.0 / beta]],
                beta,
                weights: varpi,
            };
            (spec, theta, oracle)
        };
        if !spec.check_stability(&theta).unwrap().stable {
            return 0.0;
        }
        let events = thinning_simulate(&SimConfig::new(
            spec.clone(),
            theta.clone(),
            70.0,
            RngStream::new(14_000, case as u64),
        ))
        .unwrap();
        let fast = loglik(&spec, &theta, &events).unwrap();
        let brute = oracle.loglik(&events);
        (fast - brute).abs() / brute.abs().max(1.0)
    });
    let max_err = errors.iter().cloned().fold(0.0, f64::max);
    report(
        "2 (likelihood oracle equivalence)",
        max_err < 1e-8,
        &format!("worst relative error {max_err:.2e} over 50 instances"),
        t0.elapsed(),
    );
}

#[test]
fn criterion_03_simulator_law() {
    let t0 = std::time::Instant::now();
    let (spec, theta) = presets::null_sim();
    let horizon = 500.0;
    let outcomes: Vec<(usize, f64)> = replicates::run(200, |rep| {
        let events = thinning_simulate(&SimConfig::new(
            spec.clone(),
            theta.clone(),
            horizon,
            RngStream::replicate(15_000, rep as u64),
        ))
        .unwrap();
        let residuals = time_rescaling_residuals(&spec, &theta, &events).unwrap();
        let p = ks_pvalue(
            ks_statistic(&residuals[0], exp1_cdf),
            residuals[0].len(),
        );
        (events.total_events(), p)
    });
    let pooled_rate = outcomes.iter().map(|(n, _)| *n).sum::<usize>() as f64
        / (200.0 * horizon);
    let p_ok = outcomes.iter().filter(|(_, p)| *p > 0.01).count();
    let rate_ok = (pooled_rate - 2.0).abs() / 2.0 < 0.05;
    let frac_ok = p_ok >= 190;
    report(
        "3 (simulator law)",
        rate_ok && frac_ok,
        &format!(
            "pooled rate {pooled_rate:.4} (target 2 within 5%), residual KS p > 0.01 in {p_ok}/200"
        ),
        t0.elapsed(),
    );
}

#[test]
fn criterion_04_null_calibration() {
    let t0 = std::time::Instant::now();
    let cfg = NullDistConfig::default();
    let summary = experiments::run_null_dist(&cfg, None).unwrap();
    let pass = summary.failures == 0
        && summary.ks_distance < 0.08
        && (0.02..=0.09).contains(&summary.fraction_below_005);
    report(
        "4 (null calibration)",
        pass,
        &format!(
            "{} replicates, KS distance {:.4} (< 0.08), frac(p < 0.05) = {:.4} (in [0.02, 0.09]), {} failures",
            summary.replicates, summary.ks_distance, summary.fraction_below_005, summary.failures
        ),
        t0.elapsed(),
    );
}

#[test]
fn criterion_05_power_curve() {
    let t0 = std::time::Instant::now();
    let cfg = PowerCurveConfig::default();
    let rows = experiments::run_power(&cfg, None).unwrap();
    let level_ok = (rows[0].power - 0.05).abs() <= 0.04;
    let top_ok = rows[2].power >= 0.8;
    let monotone = rows[1].power >= rows[0].power - (rows[0].se + rows[1].se)
        && rows[2].power >= rows[1].power - (rows[1].se + rows[2].se);
    report(
        "5 (power curve)",
        level_ok && top_ok && monotone,
        &format!(
            "power = [{:.3}, {:.3}, {:.3}] at alpha0 = [0, 0.3, 0.6]",
            rows[0].power, rows[1].power, rows[2].power
        ),
        t0.elapsed(),
    );
}

fn consistency_rmse(horizon: f64, seed: u64, replicates_n: usize) -> f64 {
    let (sim_spec, sim_theta) = presets::null_sim();
    let fit_spec = presets::univariate_fit(2);
    let truth = [1.0, 2.0, 1.0, 1.0, 1.0];
    let errors: Vec<f64> = replicates::run(replicates_n, |rep| {
        let stream = RngStream::replicate(seed, rep as u64);
        let events = thinning_simulate(&SimConfig::new(
            sim_spec.clone(),
            sim_theta.clone(),
            horizon,
            stream,
        ))
        .unwrap();
        let bounds = default_bounds(&fit_spec, &events).unwrap();
        let mut opts = FitOptions::new(stream.substream(2));
        opts.multistart = 2;
        let fit = mle_fit(&fit_spec, &events, &bounds, &opts).unwrap();
        let est = fit.theta_hat.full();
        est.iter()
            .zip(truth)
            .map(|(e, t)| (e - t) * (e - t))
            .sum::<f64>()
    });
    (errors.iter().sum::<f64>() / errors.len() as f64).sqrt()
}

#[test]
fn criterion_06_sqrt_t_consistency() {
    let t0 = std::time::Instant::now();
    let rmse_short = consistency_rmse(1000.0, 16_000, 100);
    let rmse_long = consistency_rmse(4000.0, 16_500, 100);
    let ratio = rmse_long / rmse_short;
    report(
        "6 (sqrt-T consistency)",
        (0.35..=0.72).contains(&ratio),
        &format!("RMSE(4000) / RMSE(1000) = {rmse_long:.4} / {rmse_short:.4} = {ratio:.3}"),
        t0.elapsed(),
    );
}

#[test]
fn criterion_07_coverage() {
    let t0 = std::time::Instant::now();
    let (sim_spec, sim_theta) = presets::null_sim();
    let fit_spec = presets::univariate_fit(2);
    let truth = [1.0, 2.0, 1.0, 1.0, 1.0];
    let horizon = 2000.0;
    let n_reps = 200;
    let covered: Vec<Option<Vec<bool>>> = replicates::run(n_reps, |rep| {
        let stream = RngStream::replicate(17_000, rep as u64);
        let events = thinning_simulate(&SimConfig::new(
            sim_spec.clone(),
            sim_theta.clone(),
            horizon,
            stream,
        ))
        .unwrap();
        let bounds = default_bounds(&fit_spec, &events).unwrap();
        let mut opts = FitOptions::new(stream.substream(2));
        opts.multistart = 2;
        let fit = mle_fit(&fit_spec, &events, &bounds, &opts).ok()?;
        let se = standard_errors(&fit, horizon).ok()?;
        let est = fit.theta_hat.full();
        Some(
            (0..truth.len())
                .map(|i| {
                    se[i].is_finite() && (est[i] - truth[i]).abs() <= 1.96 * se[i]
                })
                .collect(),
        )
    });
    let usable: Vec<&Vec<bool>> = covered.iter().flatten().collect();
    let mut detail = String::new();
    let mut pass = usable.len() >= n_reps - 5;
    for i in 0..truth.len() {
        let rate =
            usable.iter().filter(|c| c[i]).count() as f64 / usable.len() as f64;
        pass &= (0.91..=0.99).contains(&rate);
        detail.push_str(&format!("{rate:.3} "));
    }
    report(
        "7 (Wald coverage)",
        pass,
        &format!("per-coordinate 95% coverage [{}] over {} fits", detail.trim(), usable.len()),
        t0.elapsed(),
    );
}

#[test]
fn criterion_08_score_centering() {
    let t0 = std::time::Instant::now();
    let sim = presets::univariate_fit(2);
    let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![1.0, 1.0, 1.0]);
    let horizon = 2000.0;
    let n_reps = 200;
    let scores: Vec<Vec<f64>> = replicates::run(n_reps, |rep| {
        let events = thinning_simulate(&SimConfig::new(
            sim.clone(),
            theta.clone(),
            horizon,
            RngStream::replicate(18_000, rep as u64),
        ))
        .unwrap();
        loglik_grad(&sim, &theta, &events)
            .unwrap()
            .iter()
            .map(|g| g / horizon.sqrt())
            .collect()
    });
    let mut pass = true;
    let mut detail = String::new();
    for i in 0..theta.len() {
        let column: Vec<f64> = scores.iter().map(|s| s[i]).collect();
        let (mean, sd) = mean_sd(&column);
        let z = mean / (sd / (n_reps as f64).sqrt());
        pass &= z.abs() <= 4.0;
        detail.push_str(&format!("{z:+.2} "));
    }
    report(
        "8 (score centering)",
        pass,
        &format!("per-coordinate z-scores of the mean score [{}]", detail.trim()),
        t0.elapsed(),
    );
}

#[test]
fn criterion_09_g_recovery() {
    let t0 = std::time::Instant::now();
    let cfg = GRecoveryConfig::default();
    let outcome = experiments::run_g_recovery(&cfg, None).unwrap();
    let max_err = outcome.max_median_error(0.1, 0.9);
    let argmax_gap = (outcome.argmax_median() - outcome.argmax_truth()).abs();
    let pass = outcome.failures == 0 && max_err < 0.15 && argmax_gap <= 0.15;
    report(
        "9 (reproduction-rate recovery)",
        pass,
        &format!(
            "max median error on [0.1, 0.9] = {max_err:.4} (< 0.15), argmax gap {argmax_gap:.3} (<= 0.15)"
        ),
        t0.elapsed(),
    );
}

#[test]
fn criterion_10_boundary_correction_conservative() {
    let t0 = std::time::Instant::now();
    let degree = 2;
    let (sim_spec, sim_theta) = presets::bivariate_sparse_sim(degree);
    let horizon = 2000.0;
    let n_reps = 200;
    let outcomes: Vec<Option<(bool, usize)>> = replicates::run(n_reps, |rep| {
        let stream = RngStream::replicate(19_000, rep as u64);
        let events = thinning_simulate(&SimConfig::new(
            sim_spec.clone(),
            sim_theta.clone(),
            horizon,
            stream,
        ))
        .ok()?;
        let bounds = default_bounds(&sim_spec, &events).ok()?;
        let mut opts = FitOptions::new(stream.substream(2));
        opts.multistart = 2;
        let test = lrt::lrs(&sim_spec, &events, &bounds, &opts).ok()?;
        Some((test.p_corrected < 0.05, test.k_hat))
    });
    let usable: Vec<&(bool, usize)> = outcomes.iter().flatten().collect();
    let rejections = usable.iter().filter(|(r, _)| *r).count();
    let rate = rejections as f64 / usable.len() as f64;
    let with_counter = usable.iter().filter(|(_, k)| *k > 0).count();
    let pass = usable.len() >= n_reps - 5 && rate <= 0.07;
    report(
        "10 (boundary correction conservativeness)",
        pass,
        &format!(
            "corrected rejection rate {rate:.3} (<= 0.07) over {} replicates, k_hat > 0 in {with_counter}",
            usable.len()
        ),
        t0.elapsed(),
    );
}

#[test]
fn criterion_11_orderflow_pipeline() {
    let t0 = std::time::Instant::now();
    let base = std::env::temp_dir().join(format!("lshawkes_accept_lob_{}", std::process::id()));
    let varying_dir = base.join("varying");
    let constant_dir = base.join("constant");
    let varying =
        experiments::generate_synthetic_lob_batch(&varying_dir, 21, false, 21_000).unwrap();
    let constant =
        experiments::generate_synthetic_lob_batch(&constant_dir, 21, true, 22_000).unwrap();
    let cfg = LobBatchConfig::default();
    let varying_summary = experiments::run_lob_analyze(&varying, &cfg, None).unwrap();
    let constant_summary = experiments::run_lob_analyze(&constant, &cfg, None).unwrap();
    let pass = varying_summary.failures == 0
        && constant_summary.failures == 0
        && varying_summary.rejections >= 19
        && constant_summary.rejections <= 3;
    let detail = format!(
        "time-varying batch: {}/21 rejections (need >= 19); constant batch: {}/21 (need <= 3)",
        varying_summary.rejections, constant_summary.rejections
    );
    let _ = std::fs::remove_dir_all(&base);
    report("11 (order-flow pipeline)", pass, &detail, t0.elapsed());
}
