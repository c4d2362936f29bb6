//! Likelihood-ratio test for time invariance of the reproduction rate.
//!
//! The statistic is twice the log-likelihood gap between the degree-d
//! polynomial model and the constant-rate model,
//!
//! ```text
//! Lambda = 2 [ sup L(eta, varpi) - sup L(eta, C) ],
//! ```
//!
//! asymptotically chi-squared with d degrees of freedom under the null.
//! Interaction weights estimated exactly at zero sit on the boundary of the
//! parameter space and distort that limit; the counter `k_hat` of weights
//! null in the constant fit but positive in the polynomial fit inflates the
//! degrees of freedom to `d + k_hat`, which upper-bounds the conditional
//! tail and keeps the corrected test conservative.

use crate::error::{Error, Result};
use crate::estimate::{self, Bounds, FitOptions, FitResult};
use crate::events::EventSequence;
use crate::model::{ModelSpec, Reproduction};
use crate::params::ParamVector;
use crate::replicates;
use crate::rng::RngStream;
use crate::simulate::{thinning_simulate, SimConfig};

/// Negative slack allowed before a nesting violation is declared.
const NESTING_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TestReport {
    /// Likelihood-ratio statistic, floored at zero.
    pub lambda: f64,
    /// Polynomial degree of the alternative (degrees of freedom before
    /// correction).
    pub degree: usize,
    /// Boundary counter feeding the corrected degrees of freedom.
    pub k_hat: usize,
    pub p_raw: f64,
    pub p_corrected: f64,
    /// Any reproduction weight of the full fit on its box boundary; a flag
    /// to consider a smaller polynomial degree.
    pub varpi_on_boundary: bool,
    pub fit_full: FitResult,
    pub fit_null: FitResult,
}

/// Run the time-invariance test: constant-rate fit, polynomial fit warm
/// started from it, statistic, boundary counter, raw and corrected p-values.
pub fn lrs(
    spec: &ModelSpec,
    events: &EventSequence,
    bounds: &Bounds,
    opts: &FitOptions,
) -> Result<TestReport> {
    let Reproduction::Bernstein { degree, .. } = spec.reproduction else {
        return Err(Error::Unsupported(
            "the time-invariance test needs a polynomial reproduction rate".into(),
        ));
    };
    let fit_null = estimate::mle_fit_constant_g(spec, events, bounds, opts)?;
    let mut opts_full = opts.clone();
    opts_full.rng = opts.rng.substream(1);
    // warm start guarantees the nesting inequality up to arithmetic noise
    opts_full.extra_starts.push(fit_null.theta_hat.clone());
    let fit_full = estimate::mle_fit(spec, events, bounds, &opts_full)?;
    let raw_lambda = 2.0 * (fit_full.loglik_value - fit_null.loglik_value);
    if raw_lambda < -NESTING_TOL {
        return Err(Error::NestingViolation(-raw_lambda));
    }
    let lambda = raw_lambda.max(0.0);
    let k_hat = boundary_counter(spec, &fit_full, &fit_null)?;
    let p_raw = chi2_sf(lambda, degree as u32)?;
    let p_corrected = corrected_pvalue(lambda, degree, k_hat)?;
    let layout = spec.layout();
    let varpi_on_boundary = layout
        .varpi_range()
        .any(|i| fit_full.active_bounds.contains(&i) && !is_pinned(&fit_full.theta_hat, i));
    Ok(TestReport {
        lambda,
        degree,
        k_hat,
        p_raw,
        p_corrected,
        varpi_on_boundary,
        fit_full,
        fit_null,
    })
}

fn is_pinned(theta: &ParamVector, i: usize) -> bool {
    theta.lower[i] == theta.upper[i]
}

impl TestReport {
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("degree = {}\n", self.degree));
        out.push_str(&format!("k_hat = {}\n", self.k_hat));
        out.push_str(&format!("p_raw = {}\n", self.p_raw));
        out.push_str(&format!("p_corrected = {}\n", self.p_corrected));
        out.push_str(&format!("varpi_on_boundary = {}\n", self.varpi_on_boundary));
        out.push_str("\n[fit_full]\n");
        out.push_str(&self.fit_full.to_toml(None));
        out.push_str("\n[fit_null]\n");
        out.push_str(&self.fit_null.to_toml(None));
        out
    }
}

/// Count the interaction weights that are null in the constant fit and
/// strictly positive in the polynomial fit. Only the non-negative amplitude
/// block of `eta` is inspected.
pub fn boundary_counter(
    spec: &ModelSpec,
    fit_full: &FitResult,
    fit_null: &FitResult,
) -> Result<usize> {
    let layout = spec.layout();
    if fit_full.theta_hat.len() != layout.n_total()
        || fit_null.theta_hat.len() != layout.n_total()
    {
        return Err(Error::ShapeMismatch {
            expected: layout.n_total(),
            got: fit_full.theta_hat.len().min(fit_null.theta_hat.len()),
        });
    }
    Ok(layout
        .amplitude_range()
        .filter(|&i| fit_null.at_zero_lower_bound(i) && !fit_full.at_zero_lower_bound(i))
        .count())
}

/// Conservative p-value with the boundary-corrected degrees of freedom.
pub fn corrected_pvalue(lambda: f64, degree: usize, k_hat: usize) -> Result<f64> {
    chi2_sf(lambda, (degree + k_hat) as u32)
}

/// Survival function of the chi-squared distribution with `k` degrees of
/// freedom: the regularized upper incomplete gamma `Q(k/2, x/2)`.
pub fn chi2_sf(x: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("degrees of freedom must be positive"));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(format!("chi-squared argument {x} < 0")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(gammq(0.5 * k as f64, 0.5 * x))
}

/// Log of the gamma function at half-integer arguments, exact up to
/// round-off through the recurrence from Gamma(1/2) and Gamma(1).
fn ln_gamma_half(mut a: f64) -> f64 {
    debug_assert!(a > 0.0 && (2.0 * a).fract() == 0.0);
    let mut acc = 0.0;
    while a > 1.0 + 1e-9 {
        a -= 1.0;
        acc += a.ln();
    }
    if (a - 0.5).abs() < 1e-9 {
        acc + std::f64::consts::PI.sqrt().ln()
    } else {
        acc // Gamma(1) = 1
    }
}

/// Regularized upper incomplete gamma `Q(a, x)` for half-integer `a`,
/// series for `x < a + 1` and continued fraction otherwise.
fn gammq(a: f64, x: f64) -> f64 {
    debug_assert!(x >= 0.0 && a > 0.0);
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

/// Regularized lower incomplete gamma by power series.
fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma_half(a)).exp()
}

/// Regularized upper incomplete gamma by modified Lentz continued fraction.
fn gamma_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma_half(a)).exp() * h
}

/// One row of a power study: rejection fraction of the test at `level` over
/// simulated replicates of one alternative configuration.
#[derive(Debug, Clone)]
pub struct PowerRow {
    pub config_id: String,
    pub degree: usize,
    pub horizon: f64,
    /// Distance-to-null label of the configuration (the sinusoid amplitude
    /// in the power study).
    pub alpha0: f64,
    pub rejections: usize,
    pub replicates: usize,
    pub power: f64,
    pub se: f64,
}

/// One alternative configuration of a power study: data simulated under
/// `sim_spec`/`sim_theta`, test run under `fit_spec`.
#[derive(Debug, Clone)]
pub struct PowerConfig {
    pub id: String,
    pub alpha0: f64,
    pub sim_spec: ModelSpec,
    pub sim_theta: ParamVector,
    pub fit_spec: ModelSpec,
    pub horizon: f64,
}

/// Simulate `replicates` trajectories per configuration, test each, and
/// report rejection fractions at `level` with binomial standard errors.
/// Replicates are independent streams of `seed` and run in parallel.
pub fn power_experiment(
    grid: &[PowerConfig],
    level: f64,
    n_replicates: usize,
    seed: u64,
    multistart: usize,
) -> Result<Vec<PowerRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for (cfg_idx, cfg) in grid.iter().enumerate() {
        cfg.sim_spec.check_stability(&cfg.sim_theta)?;
        let outcomes: Vec<Result<bool>> = replicates::run(n_replicates, |rep| {
            let stream = RngStream::replicate(seed, (cfg_idx * n_replicates + rep) as u64);
            let report = run_one_test(cfg, stream, multistart)?;
            Ok(report.p_raw < level)
        });
        let mut rejections = 0usize;
        for outcome in outcomes {
            if outcome? {
                rejections += 1;
            }
        }
        let power = rejections as f64 / n_replicates as f64;
        rows.push(PowerRow {
            config_id: cfg.id.clone(),
            degree: cfg.fit_spec.reproduction.degree().unwrap_or(0),
            horizon: cfg.horizon,
            alpha0: cfg.alpha0,
            rejections,
            replicates: n_replicates,
            power,
            se: (power * (1.0 - power) / n_replicates as f64).sqrt(),
        });
    }
    Ok(rows)
}

/// Simulate one trajectory under the configuration and run the test on it.
pub fn run_one_test(cfg: &PowerConfig, stream: RngStream, multistart: usize) -> Result<TestReport> {
    let sim = SimConfig::new(
        cfg.sim_spec.clone(),
        cfg.sim_theta.clone(),
        cfg.horizon,
        stream,
    );
    let events = thinning_simulate(&sim)?;
    let bounds = estimate::default_bounds(&cfg.fit_spec, &events)?;
    let mut opts = FitOptions::new(stream.substream(2));
    opts.multistart = multistart;
    lrs(&cfg.fit_spec, &events, &bounds, &opts)
}
