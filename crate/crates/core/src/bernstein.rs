//! Bernstein polynomial basis and the polynomial reproduction rate.
//!
//! The reproduction rate is parametrized as
//!
//! ```text
//! g(x, varpi) = sum_i varpi_i * B_{i,d}(x),   B_{i,d}(x) = C(d,i) x^i (1-x)^{d-i}
//! ```
//!
//! on normalized time `x in [0, 1]`. The basis is non-negative and sums to
//! one, so the weights bound the polynomial: `min varpi <= g <= max varpi`,
//! with equality at the endpoints. All evaluation goes through de Casteljau
//! style recurrences rather than explicit binomials, which stays accurate
//! near the endpoints for degrees up to the supported maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported degree; binomial coefficients up to C(30, 15) are
/// exactly representable in f64.
pub const MAX_DEGREE: usize = 30;

/// Degree of the reproduction-rate polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BernsteinDegree(usize);

impl BernsteinDegree {
    pub fn new(d: usize) -> Result<Self> {
        if d > MAX_DEGREE {
            return Err(Error::domain(format!(
                "Bernstein degree {d} exceeds maximum {MAX_DEGREE}"
            )));
        }
        Ok(BernsteinDegree(d))
    }

    pub fn get(&self) -> usize {
        self.0
    }

    /// Number of basis functions, `d + 1`.
    pub fn len(&self) -> usize {
        self.0 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_unit_interval(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x = {x} outside [0, 1]")));
    }
    Ok(())
}

/// All basis values `B_{i,d}(x)` for `i = 0..=d`.
pub fn bernstein_eval(d: usize, x: f64) -> Result<Vec<f64>> {
    check_unit_interval(x)?;
    Ok(basis_row_unchecked(d, x))
}

fn basis_row_unchecked(d: usize, x: f64) -> Vec<f64> {
    let mut b = vec![0.0; d + 1];
    basis_row_into(d, x, &mut b);
    b
}

/// Allocation-free variant of [`bernstein_eval`] writing into `out[..=d]`.
pub(crate) fn basis_row_into(d: usize, x: f64, out: &mut [f64]) {
    debug_assert!(out.len() > d);
    out[..=d].fill(0.0);
    out[0] = 1.0;
    let xm = 1.0 - x;
    for q in 1..=d {
        out[q] = x * out[q - 1];
        for i in (1..q).rev() {
            out[i] = x * out[i - 1] + xm * out[i];
        }
        out[0] *= xm;
    }
}

/// Evaluate `g(x, varpi)` by de Casteljau reduction of the weights.
pub fn g_eval(varpi: &[f64], x: f64) -> Result<f64> {
    check_unit_interval(x)?;
    if varpi.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: 1,
            got: 0,
        });
    }
    let mut w = varpi.to_vec();
    let xm = 1.0 - x;
    for r in 1..w.len() {
        for i in 0..w.len() - r {
            w[i] = xm * w[i] + x * w[i + 1];
        }
    }
    Ok(w[0])
}

/// Gradient of `g` in the weights; `g` is linear in `varpi`, so this is just
/// the basis vector at `x`.
pub fn g_grad(d: usize, x: f64) -> Result<Vec<f64>> {
    bernstein_eval(d, x)
}

/// Basis values at `x` for every degree `q = 0..=d`.
///
/// Row `q` holds `B_{j,q}(x)`; the triangle is what the evaluation recurrence
/// builds anyway, and higher rows feed derivative and antiderivative queries.
#[derive(Debug, Clone)]
pub struct BasisTable {
    x: f64,
    rows: Vec<Vec<f64>>,
}

impl BasisTable {
    pub fn new(d: usize, x: f64) -> Result<Self> {
        check_unit_interval(x)?;
        let mut rows = Vec::with_capacity(d + 1);
        rows.push(vec![1.0]);
        let xm = 1.0 - x;
        for q in 1..=d {
            let prev = &rows[q - 1];
            let mut row = vec![0.0; q + 1];
            row[0] = xm * prev[0];
            for i in 1..q {
                row[i] = x * prev[i - 1] + xm * prev[i];
            }
            row[q] = x * prev[q - 1];
            rows.push(row);
        }
        Ok(BasisTable { x, rows })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn degree(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.rows[q]
    }

    /// m-th derivative of the polynomial with control weights `w` (degree
    /// `len(w) - 1`), evaluated at the table's `x`.
    ///
    /// Uses the B-form derivative: the derivative of a degree-d polynomial is
    /// a degree-(d-m) polynomial whose weights are m-fold forward differences
    /// scaled by d!/(d-m)!.
    pub fn poly_derivative(&self, w: &[f64], m: usize) -> f64 {
        let d = w.len() - 1;
        debug_assert!(d <= self.degree());
        if m > d {
            return 0.0;
        }
        let mut diff = w.to_vec();
        let mut factor = 1.0;
        for step in 0..m {
            for i in 0..d - step {
                diff[i] = diff[i + 1] - diff[i];
            }
            factor *= (d - step) as f64;
        }
        let row = self.row(d - m);
        let dot: f64 = diff[..d - m + 1]
            .iter()
            .zip(row)
            .map(|(a, b)| a * b)
            .sum();
        factor * dot
    }

    /// Taylor coefficients of `u -> p(x + u / scale)` around `u = 0`, where
    /// `p` has control weights `w`. Exact: the expansion terminates at the
    /// polynomial degree. Coefficient `m` is `p^(m)(x) / (m! scale^m)`.
    pub fn taylor_coeffs(&self, w: &[f64], scale: f64) -> Vec<f64> {
        let d = w.len() - 1;
        let mut coeffs = Vec::with_capacity(d + 1);
        let mut denom = 1.0;
        for m in 0..=d {
            if m > 0 {
                denom *= m as f64 * scale;
            }
            coeffs.push(self.poly_derivative(w, m) / denom);
        }
        coeffs
    }
}

/// Antiderivatives of the basis: entry `i` is `integral_0^x B_{i,d}(t) dt`,
/// computed from the classical identity against the degree-(d+1) basis.
pub fn basis_antiderivatives(d: usize, x: f64) -> Result<Vec<f64>> {
    check_unit_interval(x)?;
    let up = basis_row_unchecked(d + 1, x);
    let scale = 1.0 / (d as f64 + 1.0);
    let mut out = vec![0.0; d + 1];
    let mut tail = 0.0;
    for i in (0..=d).rev() {
        tail += up[i + 1];
        out[i] = scale * tail;
    }
    Ok(out)
}
