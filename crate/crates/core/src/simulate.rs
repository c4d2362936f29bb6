//! Exact simulation by thinning, and time-rescaling residual diagnostics.
//!
//! Proposals are drawn at a dominating rate built from the current
//! excitation with `g` and the baseline bounded over all of `[0, 1]` by the
//! convex hull of their coefficients. Between events the excitation of
//! monotone kernels only decays, so the bound stays valid until the next
//! acceptance; gaussian kernels are not monotone and get a bound refreshed
//! on a grid of step `1 / (2 sqrt(beta))`. Each proposal is accepted with
//! probability `sum_k lambda_k / bound`, which keeps the law exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::intensity::{stationary_mean, ExcitationState, TRUNCATION_REL_TOL};
use crate::kernels::KernelParams;
use crate::likelihood;
use crate::model::ModelSpec;
use crate::params::ParamVector;
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub spec: ModelSpec,
    pub theta: ParamVector,
    pub horizon: f64,
    pub rng: RngStream,
    /// Safety cap on the total number of events; `None` derives
    /// `10 * K * T * (stationary rate bound)`.
    pub max_events: Option<usize>,
}

impl SimConfig {
    pub fn new(spec: ModelSpec, theta: ParamVector, horizon: f64, rng: RngStream) -> Self {
        SimConfig {
            spec,
            theta,
            horizon,
            rng,
            max_events: None,
        }
    }

    fn event_cap(&self) -> Result<usize> {
        if let Some(cap) = self.max_events {
            return Ok(cap);
        }
        let report = self.spec.check_stability(&self.theta)?;
        let resolved = self.spec.resolve(&self.theta)?;
        let mut rate_bound: f64 = 0.0;
        if self.spec.activation.is_identity() {
            for step in 0..=20 {
                let x = step as f64 / 20.0;
                let total: f64 = stationary_mean(&self.spec, &self.theta, x)?.iter().sum();
                rate_bound = rate_bound.max(total);
            }
        } else {
            let mu_total: f64 = (0..self.spec.dimension)
                .map(|k| self.spec.activation.value(resolved.baseline_sup(k)))
                .sum();
            rate_bound = mu_total / (1.0 - report.rho).max(1e-3);
        }
        Ok(((10.0 * self.horizon * rate_bound).ceil() as usize).max(10_000))
    }
}

/// Simulate one trajectory. Deterministic in `cfg.rng`.
pub fn thinning_simulate(cfg: &SimConfig) -> Result<EventSequence> {
    if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
        return Err(Error::domain("horizon must be positive and finite"));
    }
    cfg.spec.validate_theta(&cfg.theta)?;
    let report = cfg.spec.check_stability(&cfg.theta)?;
    if !report.stable {
        return Err(Error::Unstable { rho: report.rho });
    }
    let cap = cfg.event_cap()?;
    let exponential_path = matches!(
        cfg.spec.kernel.family,
        crate::kernels::KernelFamily::Exponential
    );
    if exponential_path {
        simulate_exponential(cfg, cap)
    } else {
        simulate_generic(cfg, cap)
    }
}

fn draw_waiting_time(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

fn simulate_exponential(cfg: &SimConfig, cap: usize) -> Result<EventSequence> {
    let spec = &cfg.spec;
    let resolved = spec.resolve(&cfg.theta)?;
    let k_dim = spec.dimension;
    let g_sup = resolved.g_sup_bound();
    let mu_sup: Vec<f64> = (0..k_dim).map(|k| resolved.baseline_sup(k)).collect();
    let mut state = ExcitationState::new(spec, &cfg.theta)?;
    let mut rng = cfg.rng.rng();
    let mut components: Vec<Vec<f64>> = vec![Vec::new(); k_dim];
    let mut lambdas = vec![0.0; k_dim];
    let mut t = 0.0;
    let mut count = 0usize;
    loop {
        let bound: f64 = (0..k_dim)
            .map(|k| spec.activation.value(mu_sup[k] + g_sup * state.row_sum(k)))
            .sum();
        let dt = draw_waiting_time(&mut rng, bound);
        if dt <= 0.0 {
            continue;
        }
        let t_prop = t + dt;
        if t_prop > cfg.horizon {
            break;
        }
        state.advance(dt);
        t = t_prop;
        let x = t / cfg.horizon;
        let g_x = resolved.g_at(x)?;
        let mut total = 0.0;
        for k in 0..k_dim {
            let inner = resolved.baseline_at(k, x)? + g_x * state.row_sum(k);
            lambdas[k] = spec.activation.value(inner);
            total += lambdas[k];
        }
        if total > bound * (1.0 + 1e-9) {
            return Err(Error::DominationViolated {
                t,
                intensity: total,
                bound,
            });
        }
        let u: f64 = rng.random();
        let mark = u * bound;
        if mark < total {
            let mut acc = 0.0;
            let mut chosen = k_dim - 1;
            for (k, &lk) in lambdas.iter().enumerate() {
                acc += lk;
                if mark < acc {
                    chosen = k;
                    break;
                }
            }
            components[chosen].push(t);
            state.register(chosen)?;
            count += 1;
            if count > cap {
                return Err(Error::EventCapExceeded(cap));
            }
        }
    }
    EventSequence::new(cfg.horizon, components)
}

fn simulate_generic(cfg: &SimConfig, cap: usize) -> Result<EventSequence> {
    let spec = &cfg.spec;
    let resolved = spec.resolve(&cfg.theta)?;
    let k_dim = spec.dimension;
    let g_sup = resolved.g_sup_bound();
    let mu_sup: Vec<f64> = (0..k_dim).map(|k| resolved.baseline_sup(k)).collect();
    let mut pairs: Vec<Option<(KernelParams, f64)>> = Vec::with_capacity(k_dim * k_dim);
    let mut refresh_step = f64::INFINITY;
    for row in 0..k_dim {
        for col in 0..k_dim {
            match resolved.pair(row, col) {
                Some(pair) => {
                    if !pair.params.monotone_decreasing() {
                        if let KernelParams::Gaussian { beta, .. } = pair.params {
                            refresh_step = refresh_step.min(0.5 / beta.sqrt());
                        }
                    }
                    pairs.push(Some((
                        pair.params,
                        pair.params.truncation_horizon(TRUNCATION_REL_TOL),
                    )));
                }
                None => pairs.push(None),
            }
        }
    }
    let mut rng = cfg.rng.rng();
    let mut components: Vec<Vec<f64>> = vec![Vec::new(); k_dim];
    let mut lambdas = vec![0.0; k_dim];
    let mut t = 0.0;
    let mut count = 0usize;
    // `window > 0` asks for an upper bound over `[t, t + window]`; it must
    // include an event sitting exactly at `t` (its contribution only starts
    // growing), while the plain intensity keeps the strict past.
    let excitation = |components: &[Vec<f64>], k: usize, t: f64, window: f64| -> f64 {
        let mut sum = 0.0;
        for l in 0..k_dim {
            if let Some((params, horizon)) = &pairs[k * k_dim + l] {
                let times = &components[l];
                let lo = times.partition_point(|&u| u < t - (horizon + window));
                let hi = if window > 0.0 {
                    times.partition_point(|&u| u <= t)
                } else {
                    times.partition_point(|&u| u < t)
                };
                for &tj in &times[lo..hi] {
                    sum += if window > 0.0 {
                        params.sup_on_window(t - tj, window)
                    } else {
                        params.eval(t - tj)
                    };
                }
            }
        }
        sum
    };
    while t < cfg.horizon {
        let window_end = (t + refresh_step).min(cfg.horizon);
        let window = window_end - t;
        let bound: f64 = (0..k_dim)
            .map(|k| {
                spec.activation
                    .value(mu_sup[k] + g_sup * excitation(&components, k, t, window))
            })
            .sum();
        let dt = draw_waiting_time(&mut rng, bound);
        if dt <= 0.0 {
            continue;
        }
        let t_prop = t + dt;
        if t_prop > window_end {
            t = window_end;
            continue;
        }
        t = t_prop;
        let x = t / cfg.horizon;
        let g_x = resolved.g_at(x)?;
        let mut total = 0.0;
        for k in 0..k_dim {
            let inner = resolved.baseline_at(k, x)? + g_x * excitation(&components, k, t, 0.0);
            lambdas[k] = spec.activation.value(inner);
            total += lambdas[k];
        }
        if total > bound * (1.0 + 1e-9) {
            return Err(Error::DominationViolated {
                t,
                intensity: total,
                bound,
            });
        }
        let u: f64 = rng.random();
        let mark = u * bound;
        if mark < total {
            let mut acc = 0.0;
            let mut chosen = k_dim - 1;
            for (k, &lk) in lambdas.iter().enumerate() {
                acc += lk;
                if mark < acc {
                    chosen = k;
                    break;
                }
            }
            components[chosen].push(t);
            count += 1;
            if count > cap {
                return Err(Error::EventCapExceeded(cap));
            }
        }
    }
    EventSequence::new(cfg.horizon, components)
}

/// Time-rescaling residuals: compensator increments between consecutive
/// events of each component. Under the data-generating parameters these are
/// i.i.d. unit exponentials.
pub fn time_rescaling_residuals(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
) -> Result<Vec<Vec<f64>>> {
    (0..spec.dimension)
        .map(|k| likelihood::compensator_increments(spec, theta, events, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::validate_events;
    use crate::model::Reproduction;
    use approx::assert_abs_diff_eq;

    fn eq9_config(varpi: Vec<f64>, horizon: f64, stream: u64) -> SimConfig {
        let degree = varpi.len() - 1;
        let spec = ModelSpec::univariate_raw_exponential(Reproduction::Bernstein {
            degree,
            pin_first: false,
        });
        let theta = ParamVector::unbounded(vec![1.0, 2.0], varpi);
        SimConfig::new(spec, theta, horizon, RngStream::new(7, stream))
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = eq9_config(vec![1.0], 50.0, 3);
        let a = thinning_simulate(&cfg).unwrap();
        let b = thinning_simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.total_events() > 0);
    }

    #[test]
    fn output_always_validates() {
        for stream in 0..20 {
            let cfg = eq9_config(vec![1.0, 0.5], 30.0, stream);
            let events = thinning_simulate(&cfg).unwrap();
            assert!(validate_events(&events).is_ok());
        }
    }

    #[test]
    fn unstable_model_rejected() {
        let cfg = eq9_config(vec![2.0], 10.0, 0);
        assert!(matches!(
            thinning_simulate(&cfg),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn poisson_rate_recovered() {
        // g = 0: unit-rate Poisson process; pool a few streams
        let mut total = 0usize;
        let horizon = 200.0;
        let reps = 20;
        for stream in 0..reps {
            let cfg = eq9_config(vec![0.0], horizon, stream);
            total += thinning_simulate(&cfg).unwrap().total_events();
        }
        let rate = total as f64 / (horizon * reps as f64);
        // 3 sigma band around 1 with ~4000 expected events
        assert_abs_diff_eq!(rate, 1.0, epsilon = 0.05);
    }

    #[test]
    fn tiny_cap_reports_overflow() {
        let mut cfg = eq9_config(vec![1.0], 100.0, 1);
        cfg.max_events = Some(3);
        assert!(matches!(
            thinning_simulate(&cfg),
            Err(Error::EventCapExceeded(3))
        ));
    }

    #[test]
    fn residuals_of_constant_rate_scale_gaps() {
        // rate 2 Poisson: residuals are twice the raw gaps
        let spec = ModelSpec::univariate_raw_exponential(Reproduction::Bernstein {
            degree: 0,
            pin_first: false,
        });
        let theta = ParamVector::unbounded(vec![2.0, 2.0], vec![0.0]);
        let events = EventSequence::new(3.0, vec![vec![0.5, 1.25, 2.0]]).unwrap();
        let res = time_rescaling_residuals(&spec, &theta, &events).unwrap();
        let expect = [1.0, 1.5, 1.5];
        for (r, e) in res[0].iter().zip(expect) {
            assert_abs_diff_eq!(r, &e, epsilon = 1e-10);
        }
    }

    #[test]
    fn gaussian_kernel_simulation_runs_and_validates() {
        use crate::kernels::KernelFamily;
        use crate::model::{Activation, Baseline, Entry, KernelSpec};
        let spec = ModelSpec::new(
            1,
            Baseline::Constant,
            KernelSpec {
                family: KernelFamily::Gaussian,
                structure: vec![vec![Entry::Group(0)]],
            },
            Reproduction::Bernstein {
                degree: 0,
                pin_first: false,
            },
            Activation::Identity,
        )
        .unwrap();
        // amplitude 0.3, beta 4, gamma 0.5: mass well below critical
        let theta = ParamVector::unbounded(vec![1.0, 0.3, 4.0, 0.5], vec![1.0]);
        let cfg = SimConfig::new(spec, theta, 40.0, RngStream::new(11, 0));
        let events = thinning_simulate(&cfg).unwrap();
        assert!(validate_events(&events).is_ok());
        assert!(events.total_events() > 10);
    }
}
