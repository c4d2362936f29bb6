//! Conditional intensity evaluation and the Markovian excitation state.
//!
//! For exponential kernels the convolution with past events satisfies a
//! one-step update: between events each pair entry decays geometrically and
//! an event in component `l` adds the kernel jump `phi_kl(0+)` to column `l`.
//! The state makes simulation and likelihood passes O(1) per event instead
//! of O(history).
//!
//! Other families fall back to direct history sums, truncated where the
//! neglected kernel tail is below 1e-10 of the total mass.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::events::{validate_events, EventSequence};
use crate::kernels::KernelParams;
use crate::model::ModelSpec;
use crate::params::ParamVector;

/// Relative kernel tail kept out of truncated history sums.
pub(crate) const TRUNCATION_REL_TOL: f64 = 1e-10;

/// Intensity of every component at time `t`, using the strict past
/// (events at exactly `t` do not contribute).
pub fn intensity_at(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
    t: f64,
) -> Result<Vec<f64>> {
    validate_events(events)?;
    if !(0.0..=events.horizon()).contains(&t) {
        return Err(Error::domain(format!(
            "query time {t} outside [0, {}]",
            events.horizon()
        )));
    }
    let resolved = spec.resolve(theta)?;
    let x = t / events.horizon();
    let g = resolved.g_at(x)?;
    let mut out = Vec::with_capacity(spec.dimension);
    for k in 0..spec.dimension {
        let mut excitation = 0.0;
        for l in 0..spec.dimension {
            if let Some(pair) = resolved.pair(k, l) {
                excitation += history_sum(&pair.params, events.component(l), t);
            }
        }
        let inner = resolved.baseline_at(k, x)? + g * excitation;
        out.push(spec.activation.value(inner));
    }
    Ok(out)
}

/// `sum_{t_j < t} phi(t - t_j)` over one component's history, truncated at
/// the kernel's negligible-tail horizon.
fn history_sum(params: &KernelParams, times: &[f64], t: f64) -> f64 {
    let horizon = params.truncation_horizon(TRUNCATION_REL_TOL);
    let lo = times.partition_point(|&u| u < t - horizon);
    let hi = times.partition_point(|&u| u < t);
    times[lo..hi].iter().map(|&u| params.eval(t - u)).sum()
}

/// Exponentially weighted event sums `R_kl(t) = sum_{t_j^l < t} phi_kl(t - t_j^l)`
/// for a model with exponential kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationState {
    /// Current pair sums, row-major K x K.
    r: Vec<f64>,
    /// Decay rates `beta_kl`.
    decay: Vec<f64>,
    /// Jump sizes `phi_kl(0+)` added to column `l` when `l` fires.
    jump: Vec<f64>,
    dimension: usize,
    /// Time the state is currently advanced to.
    t: f64,
}

impl ExcitationState {
    /// Empty-history state at `t = 0`. Errors for non-exponential kernels.
    pub fn new(spec: &ModelSpec, theta: &ParamVector) -> Result<Self> {
        let resolved = spec.resolve(theta)?;
        let k = spec.dimension;
        let mut decay = vec![0.0; k * k];
        let mut jump = vec![0.0; k * k];
        for row in 0..k {
            for col in 0..k {
                if let Some(pair) = resolved.pair(row, col) {
                    match pair.params {
                        KernelParams::Exponential { beta, .. } => {
                            decay[row * k + col] = beta;
                            jump[row * k + col] = pair.params.eval(0.0);
                        }
                        _ => {
                            return Err(Error::Unsupported(
                                "excitation state requires exponential kernels".into(),
                            ))
                        }
                    }
                }
            }
        }
        Ok(ExcitationState {
            r: vec![0.0; k * k],
            decay,
            jump,
            dimension: k,
            t: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn value(&self, k: usize, l: usize) -> f64 {
        self.r[k * self.dimension + l]
    }

    /// Total excitation feeding component `k`.
    pub fn row_sum(&self, k: usize) -> f64 {
        let d = self.dimension;
        self.r[k * d..(k + 1) * d].iter().sum()
    }

    /// Decay every entry over `dt >= 0`.
    pub fn advance(&mut self, dt: f64) {
        debug_assert!(dt >= 0.0);
        if dt == 0.0 {
            return;
        }
        for (r, &b) in self.r.iter_mut().zip(&self.decay) {
            *r *= (-b * dt).exp();
        }
        self.t += dt;
    }

    /// Register an event in source component `l`: every row picks up the
    /// kernel jump of its `(k, l)` pair.
    pub fn register(&mut self, l: usize) -> Result<()> {
        let d = self.dimension;
        if l >= d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: l,
            });
        }
        for k in 0..d {
            self.r[k * d + l] += self.jump[k * d + l];
        }
        Ok(())
    }
}

/// Mean intensity of the stationary comparison process frozen at normalized
/// time `x`: solves `m = mu(x) + g(x) A m` with `A` the kernel-integral
/// matrix. Identity activation only.
pub fn stationary_mean(
    spec: &ModelSpec,
    theta: &ParamVector,
    x: f64,
) -> Result<Vec<f64>> {
    if !spec.activation.is_identity() {
        return Err(Error::Unsupported(
            "stationary mean is only defined for the identity activation".into(),
        ));
    }
    let resolved = spec.resolve(theta)?;
    let g = resolved.g_at(x)?;
    let a = spec.integral_matrix(theta)?;
    let frozen = crate::kernels::stability_from_parts(&a, g)?;
    if !frozen.stable {
        return Err(Error::Unstable { rho: frozen.rho });
    }
    let k = spec.dimension;
    let mut mu = DMatrix::zeros(k, 1);
    for i in 0..k {
        mu[(i, 0)] = resolved.baseline_at(i, x)?;
    }
    let system = DMatrix::identity(k, k) - a * g;
    let solved = system
        .lu()
        .solve(&mu)
        .ok_or(Error::Unstable { rho: frozen.rho })?;
    Ok(solved.column(0).iter().cloned().collect())
}
