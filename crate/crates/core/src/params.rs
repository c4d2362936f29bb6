//! Packed parameter vectors with box bounds.
//!
//! The optimization variable is `theta = (eta, varpi)`: `eta` collects the
//! baseline and kernel parameters, `varpi` the reproduction-rate weights.
//! Bounds cover the concatenated vector; a coordinate with equal lower and
//! upper bound is pinned and never moved by the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub eta: Vec<f64>,
    pub varpi: Vec<f64>,
    /// Lower bounds over `eta ++ varpi`.
    pub lower: Vec<f64>,
    /// Upper bounds over `eta ++ varpi`.
    pub upper: Vec<f64>,
}

impl ParamVector {
    pub fn new(eta: Vec<f64>, varpi: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = eta.len() + varpi.len();
        if lower.len() != n || upper.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: lower.len().max(upper.len()),
            });
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo <= hi) {
                return Err(Error::InconsistentBounds(i));
            }
        }
        Ok(ParamVector {
            eta,
            varpi,
            lower,
            upper,
        })
    }

    /// Free bounds: `(-inf, inf)` on `eta`, `[0, inf)` on `varpi`.
    pub fn unbounded(eta: Vec<f64>, varpi: Vec<f64>) -> Self {
        let n = eta.len() + varpi.len();
        let mut lower = vec![f64::NEG_INFINITY; n];
        for slot in lower.iter_mut().skip(eta.len()) {
            *slot = 0.0;
        }
        ParamVector {
            eta,
            varpi,
            lower,
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.eta.len() + self.varpi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenated `eta ++ varpi`.
    pub fn full(&self) -> Vec<f64> {
        let mut v = self.eta.clone();
        v.extend_from_slice(&self.varpi);
        v
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i < self.eta.len() {
            self.eta[i]
        } else {
            self.varpi[i - self.eta.len()]
        }
    }

    pub fn set_coord(&mut self, i: usize, v: f64) {
        if i < self.eta.len() {
            self.eta[i] = v;
        } else {
            self.varpi[i - self.eta.len()] = v;
        }
    }

    /// Replace the values keeping the bounds.
    pub fn with_full(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        let (eta, varpi) = values.split_at(self.eta.len());
        Ok(ParamVector {
            eta: eta.to_vec(),
            varpi: varpi.to_vec(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        })
    }

    pub fn is_feasible(&self) -> bool {
        self.full()
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

/// Project every coordinate into its box. Idempotent.
pub fn clamp_to_bounds(theta: &ParamVector) -> Result<ParamVector> {
    for (i, (&lo, &hi)) in theta.lower.iter().zip(&theta.upper).enumerate() {
        if !(lo <= hi) {
            return Err(Error::InconsistentBounds(i));
        }
    }
    let mut out = theta.clone();
    for (i, v) in out
        .eta
        .iter_mut()
        .chain(out.varpi.iter_mut())
        .enumerate()
    {
        *v = v.clamp(theta.lower[i], theta.upper[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> ParamVector {
        ParamVector::new(values, vec![], lower, upper).unwrap()
    }

    #[test]
    fn clamp_projects_into_box() {
        let t = theta(vec![1.5], vec![0.0], vec![1.0]);
        assert_eq!(clamp_to_bounds(&t).unwrap().eta, vec![1.0]);
    }

    #[test]
    fn clamp_respects_nonnegativity() {
        let t = ParamVector::new(vec![], vec![-0.2], vec![0.0], vec![f64::INFINITY]).unwrap();
        assert_eq!(clamp_to_bounds(&t).unwrap().varpi, vec![0.0]);
    }

    #[test]
    fn clamp_is_idempotent_and_keeps_feasible_points() {
        let t = theta(vec![0.3, 0.9], vec![0.0, 0.0], vec![1.0, 1.0]);
        let once = clamp_to_bounds(&t).unwrap();
        assert_eq!(once, t);
        assert_eq!(clamp_to_bounds(&once).unwrap(), once);
    }

    #[test]
    fn inverted_bounds_rejected() {
        let bad = ParamVector::new(vec![0.0], vec![], vec![1.0], vec![0.0]);
        assert_eq!(bad, Err(Error::InconsistentBounds(0)));
    }

    #[test]
    fn full_concatenates_eta_then_varpi() {
        let t = ParamVector::unbounded(vec![1.0, 2.0], vec![3.0]);
        assert_eq!(t.full(), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.coord(2), 3.0);
    }
}
