//! Shared test oracles, written straight from the model formulas and kept
//! independent of the crate's evaluation paths: explicit binomial basis
//! values, double-loop history sums, and adaptive Simpson compensators.

// not every test binary touches every oracle
#![allow(dead_code)]

use lshawkes::events::EventSequence;

pub fn binomial(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Direct binomial-formula basis value.
pub fn bernstein_direct(d: usize, i: usize, x: f64) -> f64 {
    binomial(d, i) * x.powi(i as i32) * (1.0 - x).powi((d - i) as i32)
}

pub fn g_direct(weights: &[f64], x: f64) -> f64 {
    let d = weights.len() - 1;
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * bernstein_direct(d, i, x))
        .sum()
}

/// Reference multivariate Hawkes with exponential kernels
/// `alpha_kl * beta * exp(-beta u)`, constant baselines, and a polynomial
/// reproduction rate.
pub struct OracleHawkes {
    pub mu: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: f64,
    pub weights: Vec<f64>,
}

impl OracleHawkes {
    /// Conditional intensity by the plain double loop over all past events.
    pub fn intensity(&self, events: &EventSequence, k: usize, t: f64) -> f64 {
        let x = t / events.horizon();
        let g = g_direct(&self.weights, x);
        let mut excitation = 0.0;
        for (l, times) in events.components().iter().enumerate() {
            for &tj in times.iter().take_while(|&&tj| tj < t) {
                excitation += self.alpha[k][l] * self.beta * (-self.beta * (t - tj)).exp();
            }
        }
        self.mu[k] + g * excitation
    }

    /// Adaptive-Simpson compensator, integrated piecewise between events so
    /// the integrand is smooth on every piece. Absolute tolerance 1e-10 per
    /// piece.
    pub fn compensator(&self, events: &EventSequence, k: usize) -> f64 {
        let mut knots: Vec<f64> = vec![0.0];
        knots.extend(events.merged().iter().map(|&(t, _)| t));
        knots.push(events.horizon());
        let mut total = 0.0;
        for pair in knots.windows(2) {
            if pair[1] > pair[0] {
                total += self.adaptive_simpson(events, k, pair[0], pair[1], 1e-10, 30);
            }
        }
        total
    }

    fn adaptive_simpson(
        &self,
        events: &EventSequence,
        k: usize,
        a: f64,
        b: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let f = |t: f64| self.intensity(events, k, t);
        let m = 0.5 * (a + b);
        let coarse = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
        let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
        let delta = left + right - coarse;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            self.adaptive_simpson(events, k, a, m, tol / 2.0, depth - 1)
                + self.adaptive_simpson(events, k, m, b, tol / 2.0, depth - 1)
        }
    }

    /// Event log terms plus the quadrature compensator.
    pub fn loglik(&self, events: &EventSequence) -> f64 {
        let mut value = 0.0;
        for (k, times) in events.components().iter().enumerate() {
            for &t in times {
                value += self.intensity(events, k, t).ln();
            }
            value -= self.compensator(events, k);
        }
        value
    }
}

/// Sample mean and standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
