//! Parametric excitation kernels, their integrals, and the stability check.
//!
//! Three families are supported, all non-negative and integrable on
//! `[0, infinity)`:
//!
//! ```text
//! exponential:  phi(t) = alpha * beta * exp(-beta t)          integral alpha
//! power law:    phi(t) = alpha * (t + gamma)^(-beta), beta>1  integral alpha gamma^(1-beta)/(beta-1)
//! gaussian:     phi(t) = alpha * exp(-beta (t - gamma)^2)
//! ```
//!
//! The exponential amplitude is normalized so that `alpha` is the branching
//! weight: the matrix of kernel integrals is then directly the interaction
//! matrix whose spectral radius enters the sub-criticality condition
//! `sup_x g(x) * rho(integral matrix) < 1`.

use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Exponential,
    PowerLaw,
    Gaussian,
}

impl KernelFamily {
    /// Number of shape parameters shared by all pairs of a model:
    /// decay for the exponential, (decay, offset) otherwise.
    pub fn shape_len(&self) -> usize {
        match self {
            KernelFamily::Exponential => 1,
            KernelFamily::PowerLaw | KernelFamily::Gaussian => 2,
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" => Ok(KernelFamily::Exponential),
            "powerlaw" => Ok(KernelFamily::PowerLaw),
            "gaussian" => Ok(KernelFamily::Gaussian),
            other => Err(Error::domain(format!(
                "unknown kernel family {other:?}; expected exponential | powerlaw | gaussian"
            ))),
        }
    }
}

/// Fully resolved kernel parameters for one component pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelParams {
    Exponential { alpha: f64, beta: f64 },
    PowerLaw { alpha: f64, beta: f64, gamma: f64 },
    Gaussian { alpha: f64, beta: f64, gamma: f64 },
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelParams::Exponential { alpha, beta } => alpha >= 0.0 && beta > 0.0,
            KernelParams::PowerLaw { alpha, beta, gamma } => {
                alpha >= 0.0 && beta > 1.0 && gamma > 0.0
            }
            KernelParams::Gaussian { alpha, beta, .. } => alpha >= 0.0 && beta > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid kernel parameters {self:?}")))
        }
    }

    /// `phi(t)`; zero for `t < 0` by causality.
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            KernelParams::Exponential { alpha, beta } => alpha * beta * (-beta * t).exp(),
            KernelParams::PowerLaw { alpha, beta, gamma } => alpha * (t + gamma).powf(-beta),
            KernelParams::Gaussian { alpha, beta, gamma } => {
                let d = t - gamma;
                alpha * (-beta * d * d).exp()
            }
        }
    }

    /// Partial derivatives in the family parameters, ordered
    /// `(alpha, beta)` or `(alpha, beta, gamma)`.
    pub fn grad(&self, t: f64) -> Vec<f64> {
        if t < 0.0 {
            return vec![0.0; 1 + self.shape_len()];
        }
        match *self {
            KernelParams::Exponential { alpha, beta } => {
                let e = (-beta * t).exp();
                vec![beta * e, alpha * e * (1.0 - beta * t)]
            }
            KernelParams::PowerLaw { alpha, beta, gamma } => {
                let base = t + gamma;
                let p = base.powf(-beta);
                vec![p, -alpha * p * base.ln(), -alpha * beta * base.powf(-beta - 1.0)]
            }
            KernelParams::Gaussian { alpha, beta, gamma } => {
                let d = t - gamma;
                let e = (-beta * d * d).exp();
                vec![e, -alpha * d * d * e, 2.0 * alpha * beta * d * e]
            }
        }
    }

    fn shape_len(&self) -> usize {
        match self {
            KernelParams::Exponential { .. } => 1,
            _ => 2,
        }
    }

    /// `integral_a^b phi(s) ds`, with `b` possibly infinite. Closed form for
    /// the exponential and power-law families; adaptive quadrature for the
    /// gaussian (absolute tolerance 1e-10).
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if !(0.0 <= a && a <= b) {
            return Err(Error::domain(format!(
                "invalid integration bounds [{a}, {b}]"
            )));
        }
        self.validate()?;
        if a == b {
            return Ok(0.0);
        }
        match *self {
            KernelParams::Exponential { alpha, beta } => {
                let upper = if b.is_infinite() { 0.0 } else { (-beta * b).exp() };
                Ok(alpha * ((-beta * a).exp() - upper))
            }
            KernelParams::PowerLaw { alpha, beta, gamma } => {
                let anti = |t: f64| -> f64 {
                    if t.is_infinite() {
                        0.0
                    } else {
                        (t + gamma).powf(1.0 - beta) / (1.0 - beta)
                    }
                };
                Ok(alpha * (anti(b) - anti(a)))
            }
            KernelParams::Gaussian { beta, gamma, .. } => {
                // integrand is negligible beyond a few standard widths
                let width = 1.0 / beta.sqrt();
                let cutoff = gamma + width * 8.0;
                let hi = if b.is_infinite() { cutoff.max(a) } else { b };
                Ok(adaptive_simpson(&|t| self.eval(t), a, hi, 1e-10))
            }
        }
    }

    /// Elapsed time beyond which the remaining tail integral is below
    /// `rel` of the total mass. Used to truncate history sums.
    pub fn truncation_horizon(&self, rel: f64) -> f64 {
        match *self {
            KernelParams::Exponential { beta, .. } => -rel.ln() / beta,
            KernelParams::PowerLaw { beta, gamma, .. } => {
                gamma * (rel.powf(1.0 / (1.0 - beta)) - 1.0)
            }
            KernelParams::Gaussian { beta, gamma, .. } => {
                // tail of exp(-beta d^2) decays faster than exponential
                gamma.max(0.0) + ((-rel.ln()).max(1.0) / beta).sqrt() + 1.0 / beta.sqrt()
            }
        }
    }

    /// Upper bound of `phi` over the elapsed-time window `[u0, u0 + h]`.
    /// Exact for monotone families; for the gaussian the maximum sits at the
    /// mode when the window straddles it.
    pub fn sup_on_window(&self, u0: f64, h: f64) -> f64 {
        match *self {
            KernelParams::Exponential { .. } | KernelParams::PowerLaw { .. } => self.eval(u0),
            KernelParams::Gaussian { gamma, .. } => {
                if u0 + h <= gamma {
                    self.eval(u0 + h)
                } else if u0 >= gamma {
                    self.eval(u0)
                } else {
                    self.eval(gamma)
                }
            }
        }
    }

    /// True when `phi` never increases on `t >= 0`, in which case a thinning
    /// bound built from current values stays valid until the next event.
    pub fn monotone_decreasing(&self) -> bool {
        match *self {
            KernelParams::Exponential { .. } | KernelParams::PowerLaw { .. } => true,
            KernelParams::Gaussian { gamma, .. } => gamma <= 0.0,
        }
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Largest eigenvalue modulus of an entrywise non-negative square matrix.
///
/// Power iteration on `m + I`: for non-negative matrices the shifted Perron
/// root strictly dominates every other shifted eigenvalue, so the iteration
/// cannot stall on oscillating eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::domain("spectral radius needs a square matrix"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::domain(
            "spectral radius requires finite non-negative entries",
        ));
    }
    const TOL: f64 = 1e-12;
    const MAX_ITERS: usize = 10_000;
    let mut v = DMatrix::from_element(n, 1, 1.0 / n as f64);
    let mut lambda_prev = f64::NAN;
    for _ in 0..MAX_ITERS {
        let mut w = m * &v;
        w += &v; // shift by the identity
        let lambda: f64 = w.iter().sum();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        v = w / lambda;
        if (lambda - lambda_prev).abs() <= TOL * lambda.max(1.0) {
            return Ok((lambda - 1.0).max(0.0));
        }
        lambda_prev = lambda;
    }
    Err(Error::NoConvergence(MAX_ITERS))
}

/// Entrywise product of the kernel-integral matrix with the reproduction-rate
/// supremum; Assumption of sub-criticality asks for spectral radius below 1.
pub fn branching_matrix(integrals: &DMatrix<f64>, g_sup: f64) -> DMatrix<f64> {
    integrals * g_sup
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `sup_x g(x)` bound times the spectral radius of the integral matrix.
    pub rho: f64,
    pub stable: bool,
}

/// Stability of the pair (kernel integral matrix, reproduction-rate bound).
pub fn stability_from_parts(integrals: &DMatrix<f64>, g_sup: f64) -> Result<StabilityReport> {
    let rho = g_sup * spectral_radius(integrals)?;
    Ok(StabilityReport {
        rho,
        stable: rho < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_closed_forms() {
        let k = KernelParams::Exponential { alpha: 1.0, beta: 2.0 };
        assert_abs_diff_eq!(k.eval(0.0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(0.5), 2.0 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(k.eval(-1.0), 0.0);
    }

    #[test]
    fn power_law_value_at_zero() {
        let k = KernelParams::PowerLaw { alpha: 1.0, beta: 2.0, gamma: 1.0 };
        assert_abs_diff_eq!(k.eval(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exponential_gradient_closed_form() {
        let k = KernelParams::Exponential { alpha: 1.0, beta: 2.0 };
        let g = k.grad(1.0);
        // d/d alpha = beta e^{-beta t}
        assert_abs_diff_eq!(g[0], 2.0 * (-2.0f64).exp(), epsilon = 1e-15);
        // d/d beta at (1, 2), t = 1: e^{-2} (1 - 2)
        assert_abs_diff_eq!(g[1], -(-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let kernels = [
            KernelParams::Exponential { alpha: 0.7, beta: 1.3 },
            KernelParams::PowerLaw { alpha: 0.5, beta: 2.4, gamma: 0.8 },
            KernelParams::Gaussian { alpha: 0.9, beta: 1.7, gamma: 0.4 },
        ];
        let bump = |k: &KernelParams, slot: usize, h: f64| -> KernelParams {
            let mut k = *k;
            match &mut k {
                KernelParams::Exponential { alpha, beta } => match slot {
                    0 => *alpha += h,
                    _ => *beta += h,
                },
                KernelParams::PowerLaw { alpha, beta, gamma }
                | KernelParams::Gaussian { alpha, beta, gamma } => match slot {
                    0 => *alpha += h,
                    1 => *beta += h,
                    _ => *gamma += h,
                },
            }
            k
        };
        let mut failures = 0;
        for k in &kernels {
            for trial in 0..50 {
                let t = 0.05 + 0.11 * trial as f64;
                let grad = k.grad(t);
                for (slot, &g) in grad.iter().enumerate() {
                    let h = 1e-6;
                    let fd =
                        (bump(k, slot, h).eval(t) - bump(k, slot, -h).eval(t)) / (2.0 * h);
                    let scale = fd.abs().max(1e-3);
                    if ((g - fd) / scale).abs() > 1e-6 {
                        failures += 1;
                    }
                }
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn exponential_integral_is_branching_weight() {
        // the raw decay kernel e^{-2t} corresponds to alpha = 1/2 here
        let k = KernelParams::Exponential { alpha: 0.5, beta: 2.0 };
        assert_abs_diff_eq!(k.integral(0.0, f64::INFINITY).unwrap(), 0.5, epsilon = 1e-14);
        let unit = KernelParams::Exponential { alpha: 1.0, beta: 2.0 };
        assert_abs_diff_eq!(
            unit.integral(1.0, f64::INFINITY).unwrap(),
            (-2.0f64).exp(),
            epsilon = 1e-14
        );
        assert_eq!(unit.integral(0.7, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn integrals_split_at_interior_point() {
        let kernels = [
            KernelParams::Exponential { alpha: 0.6, beta: 2.0 },
            KernelParams::PowerLaw { alpha: 1.2, beta: 1.8, gamma: 0.5 },
            KernelParams::Gaussian { alpha: 0.8, beta: 3.0, gamma: 0.6 },
        ];
        for k in &kernels {
            let total = k.integral(0.0, f64::INFINITY).unwrap();
            for &b in &[0.1, 1.0, 4.0] {
                let head = k.integral(0.0, b).unwrap();
                let tail = k.integral(b, f64::INFINITY).unwrap();
                assert_abs_diff_eq!(head + tail, total, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn truncation_horizon_controls_tail() {
        for k in [
            KernelParams::Exponential { alpha: 0.5, beta: 2.0 },
            KernelParams::PowerLaw { alpha: 1.0, beta: 3.0, gamma: 0.5 },
            KernelParams::Gaussian { alpha: 1.0, beta: 2.0, gamma: 0.5 },
        ] {
            let rel = 1e-8;
            let h = k.truncation_horizon(rel);
            let total = k.integral(0.0, f64::INFINITY).unwrap();
            let tail = k.integral(h, f64::INFINITY).unwrap();
            assert!(tail <= rel * total * 1.01, "tail {tail} vs total {total}");
        }
    }

    #[test]
    fn spectral_radius_diagonal_and_2x2() {
        let d = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.7]);
        assert_abs_diff_eq!(spectral_radius(&d).unwrap(), 0.7, epsilon = 1e-11);
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.4]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.5, epsilon = 1e-10);
        let one = DMatrix::from_row_slice(1, 1, &[0.9]);
        assert_abs_diff_eq!(spectral_radius(&one).unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_handles_oscillatory_matrices() {
        // plain power iteration would cycle on this permutation matrix
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 1.0, epsilon = 1e-10);
        let zero = DMatrix::from_element(3, 3, 0.0);
        assert_abs_diff_eq!(spectral_radius(&zero).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_entries_rejected() {
        let m = DMatrix::from_row_slice(1, 1, &[-0.1]);
        assert!(spectral_radius(&m).is_err());
    }

    #[test]
    fn stability_boundary_case_rejected() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let report = stability_from_parts(&a, 2.0).unwrap();
        assert_abs_diff_eq!(report.rho, 1.0, epsilon = 1e-12);
        assert!(!report.stable);
        let ok = stability_from_parts(&a, 1.6).unwrap();
        assert_abs_diff_eq!(ok.rho, 0.8, epsilon = 1e-12);
        assert!(ok.stable);
    }
}
