//! Model specification: dimension, baseline, kernel structure, reproduction
//! rate, and activation, plus the packed-parameter layout.
//!
//! The conditional intensity of component `k` at time `t` on `[0, T]` is
//!
//! ```text
//! lambda_k(t) = Phi_k[ mu_k(t/T) + g(t/T) * sum_l sum_{t_j^l < t} phi_kl(t - t_j^l) ]
//! ```
//!
//! with all time dependence of the reproduction rate `g` and baseline `mu`
//! expressed in normalized time `x = t/T`. The packed parameter vector is
//! `theta = (eta, varpi)` with
//!
//! ```text
//! eta = [ baseline coefficients | kernel amplitude groups | kernel shape ]
//! ```
//!
//! Kernel amplitudes may be tied across pairs (positions sharing a group
//! share one parameter), structurally zero, or fixed to the family's raw
//! form with no free amplitude. The raw exponential entry is the kernel
//! `e^{-beta t}`, whose amplitude lives entirely in `g`; it is the
//! identifiable parametrization for univariate models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bernstein;
use crate::error::{Error, Result};
use crate::kernels::{self, KernelFamily, KernelParams, StabilityReport};
use crate::params::ParamVector;

/// Activation applied to the linear intensity predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    /// `Phi(x) = floor + log(1 + exp(x - floor))`: 1-Lipschitz, bounded away
    /// from zero, with strictly positive slope.
    Softplus { floor: f64 },
}

impl Activation {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => x,
            Activation::Softplus { floor } => {
                let y = x - floor;
                if y > 35.0 {
                    x + (-y).exp().ln_1p()
                } else {
                    floor + y.exp().ln_1p()
                }
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Softplus { floor } => {
                let y = x - floor;
                1.0 / (1.0 + (-y).exp())
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Activation::Identity)
    }
}

/// Exogenous baseline family in normalized time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// One constant rate per component: K parameters.
    Constant,
    /// One Bernstein polynomial shared by all components: degree + 1
    /// parameters.
    Bernstein { degree: usize },
}

/// Reproduction-rate family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reproduction {
    /// `g(x) = sum_i varpi_i B_{i,d}(x)` with the weights in the varpi
    /// block. `pin_first` freezes `varpi_0 = 1`, the normalization that
    /// restores identifiability when kernel amplitudes are free.
    Bernstein { degree: usize, pin_first: bool },
    /// `g(x) = offset + amplitude * sin(frequency * x)`. Fixed function with
    /// no free weights; used to generate data outside the polynomial family.
    Sinusoidal {
        offset: f64,
        amplitude: f64,
        frequency: f64,
    },
}

impl Reproduction {
    pub fn varpi_len(&self) -> usize {
        match *self {
            Reproduction::Bernstein { degree, .. } => degree + 1,
            Reproduction::Sinusoidal { .. } => 0,
        }
    }

    pub fn degree(&self) -> Option<usize> {
        match *self {
            Reproduction::Bernstein { degree, .. } => Some(degree),
            Reproduction::Sinusoidal { .. } => None,
        }
    }

    pub fn pin_first(&self) -> bool {
        matches!(self, Reproduction::Bernstein { pin_first: true, .. })
    }
}

/// One position of the K x K interaction structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entry {
    /// Hard structural zero, never optimized.
    Zero,
    /// The family's raw kernel with no free amplitude
    /// (exponential: `e^{-beta t}`; power law: `(t+gamma)^{-beta}`;
    /// gaussian: `e^{-beta (t-gamma)^2}`).
    Raw,
    /// Amplitude tied to the given group; positions sharing a group share
    /// one parameter.
    Group(usize),
}

/// Kernel family plus the interaction structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// K x K entries, row `k` = receiving component, column `l` = source.
    pub structure: Vec<Vec<Entry>>,
}

impl KernelSpec {
    pub fn n_groups(&self) -> usize {
        self.structure
            .iter()
            .flatten()
            .filter_map(|e| match e {
                Entry::Group(g) => Some(g + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn has_kernel(&self) -> bool {
        self.structure
            .iter()
            .flatten()
            .any(|e| !matches!(e, Entry::Zero))
    }

    fn validate(&self, dimension: usize) -> Result<()> {
        if self.structure.len() != dimension
            || self.structure.iter().any(|row| row.len() != dimension)
        {
            return Err(Error::domain("kernel structure must be K x K"));
        }
        let n = self.n_groups();
        let mut used = vec![false; n];
        for e in self.structure.iter().flatten() {
            if let Entry::Group(g) = e {
                used[*g] = true;
            }
        }
        if used.iter().any(|u| !u) {
            return Err(Error::domain("amplitude group indices must be contiguous"));
        }
        Ok(())
    }
}

/// Offsets of the packed parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_baseline: usize,
    pub n_amplitude: usize,
    pub n_shape: usize,
    pub n_varpi: usize,
}

impl ParamLayout {
    pub fn n_eta(&self) -> usize {
        self.n_baseline + self.n_amplitude + self.n_shape
    }

    pub fn n_total(&self) -> usize {
        self.n_eta() + self.n_varpi
    }

    pub fn baseline_range(&self) -> std::ops::Range<usize> {
        0..self.n_baseline
    }

    pub fn amplitude_range(&self) -> std::ops::Range<usize> {
        self.n_baseline..self.n_baseline + self.n_amplitude
    }

    pub fn shape_range(&self) -> std::ops::Range<usize> {
        let s = self.n_baseline + self.n_amplitude;
        s..s + self.n_shape
    }

    pub fn varpi_range(&self) -> std::ops::Range<usize> {
        self.n_eta()..self.n_total()
    }
}

/// Full model specification. Immutable and cheap to clone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dimension: usize,
    pub baseline: Baseline,
    pub kernel: KernelSpec,
    pub reproduction: Reproduction,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(
        dimension: usize,
        baseline: Baseline,
        kernel: KernelSpec,
        reproduction: Reproduction,
        activation: Activation,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::EmptyDimension);
        }
        kernel.validate(dimension)?;
        if let Reproduction::Bernstein { degree, .. } = reproduction {
            bernstein::BernsteinDegree::new(degree)?;
        }
        if let Reproduction::Sinusoidal {
            offset, amplitude, ..
        } = reproduction
        {
            if offset - amplitude.abs() < 0.0 {
                return Err(Error::domain(
                    "sinusoidal reproduction rate must stay non-negative",
                ));
            }
        }
        if let Activation::Softplus { floor } = activation {
            if !(floor > 0.0) {
                return Err(Error::domain("softplus floor must be positive"));
            }
        }
        Ok(ModelSpec {
            dimension,
            baseline,
            kernel,
            reproduction,
            activation,
        })
    }

    /// Univariate model with the raw exponential kernel `e^{-beta t}` and a
    /// constant baseline; `eta = [mu, beta]`.
    pub fn univariate_raw_exponential(reproduction: Reproduction) -> Self {
        ModelSpec::new(
            1,
            Baseline::Constant,
            KernelSpec {
                family: KernelFamily::Exponential,
                structure: vec![vec![Entry::Raw]],
            },
            reproduction,
            Activation::Identity,
        )
        .expect("valid by construction")
    }

    pub fn layout(&self) -> ParamLayout {
        let n_baseline = match self.baseline {
            Baseline::Constant => self.dimension,
            Baseline::Bernstein { degree } => degree + 1,
        };
        ParamLayout {
            n_baseline,
            n_amplitude: self.kernel.n_groups(),
            n_shape: if self.kernel.has_kernel() {
                self.kernel.family.shape_len()
            } else {
                0
            },
            n_varpi: self.reproduction.varpi_len(),
        }
    }

    /// Check that `theta` has the right shape and lies in the admissible
    /// region of the model (non-negative weights, valid kernel parameters).
    pub fn validate_theta(&self, theta: &ParamVector) -> Result<()> {
        let layout = self.layout();
        if theta.eta.len() != layout.n_eta() {
            return Err(Error::ShapeMismatch {
                expected: layout.n_eta(),
                got: theta.eta.len(),
            });
        }
        if theta.varpi.len() != layout.n_varpi {
            return Err(Error::ShapeMismatch {
                expected: layout.n_varpi,
                got: theta.varpi.len(),
            });
        }
        if theta.varpi.iter().any(|&w| w < 0.0) {
            return Err(Error::domain("reproduction-rate weights must be >= 0"));
        }
        if theta.eta[layout.baseline_range()].iter().any(|&b| b < 0.0) {
            return Err(Error::domain("baseline coefficients must be >= 0"));
        }
        if theta.eta[layout.amplitude_range()].iter().any(|&a| a < 0.0) {
            return Err(Error::domain("kernel amplitudes must be >= 0"));
        }
        let resolved = Resolved::new(self, theta)?;
        for pair in resolved.pairs.iter().flatten() {
            pair.params.validate()?;
        }
        Ok(())
    }

    pub fn resolve<'a>(&'a self, theta: &'a ParamVector) -> Result<Resolved<'a>> {
        Resolved::new(self, theta)
    }

    /// K x K matrix of total kernel masses `integral_0^inf phi_kl`.
    pub fn integral_matrix(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        let resolved = self.resolve(theta)?;
        let k = self.dimension;
        let mut m = DMatrix::zeros(k, k);
        for row in 0..k {
            for col in 0..k {
                if let Some(pair) = resolved.pair(row, col) {
                    m[(row, col)] = pair.params.integral(0.0, f64::INFINITY)?;
                }
            }
        }
        Ok(m)
    }

    /// Sub-criticality check: bound `sup_x g` by the largest weight (the
    /// polynomial lies in the convex hull of its weights, so this is
    /// conservative and exact at the endpoints) and multiply by the spectral
    /// radius of the kernel-integral matrix.
    pub fn check_stability(&self, theta: &ParamVector) -> Result<StabilityReport> {
        let resolved = self.resolve(theta)?;
        let g_sup = resolved.g_sup_bound();
        kernels::stability_from_parts(&self.integral_matrix(theta)?, g_sup)
    }
}

/// View of a model at a specific parameter vector: per-pair kernels together
/// with the chain rule back to free coordinates.
pub struct Resolved<'a> {
    pub spec: &'a ModelSpec,
    pub layout: ParamLayout,
    baseline: &'a [f64],
    varpi: &'a [f64],
    pairs: Vec<Option<ResolvedPair>>,
}

/// Kernel of one pair plus the mapping of its family partials onto eta
/// coordinates: `d phi / d eta_coord = sum chain * grad(t)[slot]`.
#[derive(Debug, Clone)]
pub struct ResolvedPair {
    pub params: KernelParams,
    pub dfree: Vec<(usize, usize, f64)>,
}

impl<'a> Resolved<'a> {
    fn new(spec: &'a ModelSpec, theta: &'a ParamVector) -> Result<Self> {
        let layout = spec.layout();
        if theta.eta.len() != layout.n_eta() || theta.varpi.len() != layout.n_varpi {
            return Err(Error::ShapeMismatch {
                expected: layout.n_total(),
                got: theta.eta.len() + theta.varpi.len(),
            });
        }
        let k = spec.dimension;
        let amplitudes = &theta.eta[layout.amplitude_range()];
        let shape = &theta.eta[layout.shape_range()];
        let shape_base = layout.shape_range().start;
        let mut pairs = Vec::with_capacity(k * k);
        for row in 0..k {
            for col in 0..k {
                let entry = spec.kernel.structure[row][col];
                pairs.push(resolve_entry(
                    spec.kernel.family,
                    entry,
                    amplitudes,
                    shape,
                    layout.amplitude_range().start,
                    shape_base,
                )?);
            }
        }
        Ok(Resolved {
            spec,
            layout,
            baseline: &theta.eta[layout.baseline_range()],
            varpi: &theta.varpi,
            pairs,
        })
    }

    pub fn pair(&self, k: usize, l: usize) -> Option<&ResolvedPair> {
        self.pairs[k * self.spec.dimension + l].as_ref()
    }

    pub fn varpi(&self) -> &[f64] {
        self.varpi
    }

    pub fn baseline_coeffs(&self) -> &[f64] {
        self.baseline
    }

    /// `mu_k(x)`.
    pub fn baseline_at(&self, k: usize, x: f64) -> Result<f64> {
        match self.spec.baseline {
            Baseline::Constant => Ok(self.baseline[k]),
            Baseline::Bernstein { .. } => bernstein::g_eval(self.baseline, x),
        }
    }

    /// Upper bound of `mu_k` over all of `[0, 1]` (convex hull of the
    /// coefficients).
    pub fn baseline_sup(&self, k: usize) -> f64 {
        match self.spec.baseline {
            Baseline::Constant => self.baseline[k],
            Baseline::Bernstein { .. } => self.baseline.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// `g(x)`.
    pub fn g_at(&self, x: f64) -> Result<f64> {
        match self.spec.reproduction {
            Reproduction::Bernstein { .. } => bernstein::g_eval(self.varpi, x),
            Reproduction::Sinusoidal {
                offset,
                amplitude,
                frequency,
            } => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::domain(format!("x = {x} outside [0, 1]")));
                }
                Ok(offset + amplitude * (frequency * x).sin())
            }
        }
    }

    /// Upper bound of `g` over `[0, 1]`.
    pub fn g_sup_bound(&self) -> f64 {
        match self.spec.reproduction {
            Reproduction::Bernstein { .. } => self.varpi.iter().cloned().fold(0.0, f64::max),
            Reproduction::Sinusoidal {
                offset, amplitude, ..
            } => offset + amplitude.abs(),
        }
    }
}

fn resolve_entry(
    family: KernelFamily,
    entry: Entry,
    amplitudes: &[f64],
    shape: &[f64],
    amp_base: usize,
    shape_base: usize,
) -> Result<Option<ResolvedPair>> {
    let make = |alpha: f64| -> KernelParams {
        match family {
            KernelFamily::Exponential => KernelParams::Exponential {
                alpha,
                beta: shape[0],
            },
            KernelFamily::PowerLaw => KernelParams::PowerLaw {
                alpha,
                beta: shape[0],
                gamma: shape[1],
            },
            KernelFamily::Gaussian => KernelParams::Gaussian {
                alpha,
                beta: shape[0],
                gamma: shape[1],
            },
        }
    };
    match entry {
        Entry::Zero => Ok(None),
        Entry::Group(g) => {
            let mut dfree = vec![(amp_base + g, 0, 1.0)];
            for s in 0..family.shape_len() {
                dfree.push((shape_base + s, s + 1, 1.0));
            }
            Ok(Some(ResolvedPair {
                params: make(amplitudes[g]),
                dfree,
            }))
        }
        Entry::Raw => {
            let (alpha, dfree) = match family {
                // e^{-beta t} = alpha beta e^{-beta t} with alpha = 1/beta;
                // the chain picks up d alpha / d beta = -1/beta^2
                KernelFamily::Exponential => {
                    let beta = shape[0];
                    if !(beta > 0.0) {
                        return Err(Error::domain("exponential decay must be positive"));
                    }
                    (
                        1.0 / beta,
                        vec![(shape_base, 1, 1.0), (shape_base, 0, -1.0 / (beta * beta))],
                    )
                }
                KernelFamily::PowerLaw | KernelFamily::Gaussian => (
                    1.0,
                    vec![(shape_base, 1, 1.0), (shape_base + 1, 2, 1.0)],
                ),
            };
            Ok(Some(ResolvedPair {
                params: make(alpha),
                dfree,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eq9_spec(degree: usize) -> ModelSpec {
        ModelSpec::univariate_raw_exponential(Reproduction::Bernstein {
            degree,
            pin_first: false,
        })
    }

    fn eq9_theta(spec: &ModelSpec) -> ParamVector {
        let layout = spec.layout();
        ParamVector::unbounded(vec![1.0, 2.0], vec![1.0; layout.n_varpi])
    }

    #[test]
    fn layout_counts_univariate() {
        let spec = eq9_spec(3);
        let layout = spec.layout();
        assert_eq!(layout.n_baseline, 1);
        assert_eq!(layout.n_amplitude, 0);
        assert_eq!(layout.n_shape, 1);
        assert_eq!(layout.n_varpi, 4);
        assert_eq!(layout.n_total(), 6);
    }

    #[test]
    fn raw_exponential_resolves_to_unit_kernel() {
        let spec = eq9_spec(0);
        let theta = eq9_theta(&spec);
        let resolved = spec.resolve(&theta).unwrap();
        let pair = resolved.pair(0, 0).unwrap();
        // e^{-2t} at t = 0.5
        assert_abs_diff_eq!(pair.params.eval(0.5), (-1.0f64).exp(), epsilon = 1e-15);
        // total mass 1/beta
        assert_abs_diff_eq!(
            pair.params.integral(0.0, f64::INFINITY).unwrap(),
            0.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn stability_of_sinusoidal_model() {
        // reproduction g(x) = 1 + 0.6 sin(x), kernel e^{-2t}
        let spec = ModelSpec::univariate_raw_exponential(Reproduction::Sinusoidal {
            offset: 1.0,
            amplitude: 0.6,
            frequency: 1.0,
        });
        let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![]);
        let report = spec.check_stability(&theta).unwrap();
        assert_abs_diff_eq!(report.rho, 0.8, epsilon = 1e-10);
        assert!(report.stable);
    }

    #[test]
    fn stability_boundary_not_stable() {
        // constant g = 2 against integral 0.5
        let spec = eq9_spec(2);
        let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![2.0, 2.0, 2.0]);
        let report = spec.check_stability(&theta).unwrap();
        assert_abs_diff_eq!(report.rho, 1.0, epsilon = 1e-10);
        assert!(!report.stable);
    }

    #[test]
    fn zero_weights_are_stable() {
        let spec = eq9_spec(1);
        let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![0.0, 0.0]);
        let report = spec.check_stability(&theta).unwrap();
        assert_eq!(report.rho, 0.0);
        assert!(report.stable);
    }

    #[test]
    fn structural_zeros_resolve_to_none() {
        let spec = ModelSpec::new(
            2,
            Baseline::Constant,
            KernelSpec {
                family: KernelFamily::Exponential,
                structure: vec![
                    vec![Entry::Group(0), Entry::Zero],
                    vec![Entry::Zero, Entry::Group(1)],
                ],
            },
            Reproduction::Bernstein {
                degree: 2,
                pin_first: true,
            },
            Activation::Identity,
        )
        .unwrap();
        let theta = ParamVector::unbounded(vec![1.0, 1.0, 0.5, 0.25, 2.0], vec![1.0, 1.0, 1.0]);
        let resolved = spec.resolve(&theta).unwrap();
        assert!(resolved.pair(0, 1).is_none());
        assert!(resolved.pair(1, 0).is_none());
        let m = spec.integral_matrix(&theta).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 1)], 0.25, epsilon = 1e-14);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn gap_in_group_indices_rejected() {
        let bad = ModelSpec::new(
            1,
            Baseline::Constant,
            KernelSpec {
                family: KernelFamily::Exponential,
                structure: vec![vec![Entry::Group(1)]],
            },
            Reproduction::Bernstein {
                degree: 1,
                pin_first: false,
            },
            Activation::Identity,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn softplus_is_lipschitz_and_floored() {
        let act = Activation::Softplus { floor: 1e-3 };
        let mut prev = act.value(-50.0);
        assert!(prev >= 1e-3);
        let mut x = -50.0;
        while x < 50.0 {
            let next = act.value(x + 0.25);
            assert!(next >= prev);
            assert!(next - prev <= 0.25 + 1e-12);
            assert!(act.derivative(x) > 0.0);
            prev = next;
            x += 0.25;
        }
        // large arguments approach the identity
        assert_abs_diff_eq!(act.value(40.0), 40.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        let spec = eq9_spec(1);
        let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![1.0, 1.0]);
        let mut bad = theta.clone();
        bad.varpi[0] = -0.1;
        // unbounded() puts a zero lower bound on varpi, so relax it first
        bad.lower[2] = f64::NEG_INFINITY;
        assert!(spec.validate_theta(&theta).is_ok());
        assert!(spec.validate_theta(&bad).is_err());
    }
}
