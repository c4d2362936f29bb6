//! Box-constrained maximum-likelihood fitting.
//!
//! The optimizer is a projected quasi-Newton loop: limited-memory secant
//! pairs build the search direction, a backtracking line search walks the
//! projected path `clamp(z + t d)`, and every iterate stays inside the box.
//! Internally each free coordinate is rescaled to `[0, 1]` by its bounds so
//! tolerances are scale-free. Multistart wraps the whole loop; the best
//! start wins, with ties broken by the lowest start index.
//!
//! A coordinate whose lower and upper bound coincide is pinned: it keeps its
//! value and is excluded from the optimization variables. The constant-rate
//! null fit ties every reproduction weight to one scalar instead.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::kernels::{spectral_radius, KernelFamily};
use crate::likelihood::Workspace;
use crate::model::{Baseline, Entry, ModelSpec};
use crate::params::{clamp_to_bounds, ParamVector};
use crate::replicates;
use crate::rng::RngStream;

/// A coordinate sitting within this fraction of its box width of a bound is
/// treated as boundary-active (and as "null" when the bound is zero).
pub(crate) const BOUNDARY_REL_TOL: f64 = 1e-8;

/// Box bounds over the packed parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InconsistentBounds(i));
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Pin coordinate `i` at `value`.
    pub fn pin(&mut self, i: usize, value: f64) {
        self.lower[i] = value;
        self.upper[i] = value;
    }

    fn is_pinned(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Infinity-norm tolerance on the projected gradient, per unit horizon.
    pub grad_tol: f64,
    /// Relative step tolerance.
    pub step_tol: f64,
    /// Number of starts (first is moment-based, the rest are log-uniform
    /// perturbations of it).
    pub multistart: usize,
    pub rng: RngStream,
    /// Additional warm starts tried before the generated ones.
    pub extra_starts: Vec<ParamVector>,
}

impl FitOptions {
    pub fn new(rng: RngStream) -> Self {
        FitOptions {
            max_iters: 500,
            grad_tol: 1e-6,
            step_tol: 1e-9,
            multistart: 5,
            rng,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    /// Log-likelihood re-evaluated exactly at `theta_hat`.
    pub loglik_value: f64,
    /// Projected-gradient infinity norm (scaled coordinates) at the optimum.
    pub gradient_norm: f64,
    pub converged: bool,
    pub observed_info: DMatrix<f64>,
    /// Full-vector indices sitting on a box bound (pinned ones included).
    pub active_bounds: Vec<usize>,
}

impl FitResult {
    /// True when coordinate `i` sits on a zero lower bound.
    pub fn at_zero_lower_bound(&self, i: usize) -> bool {
        let lo = self.theta_hat.lower[i];
        if lo != 0.0 {
            return false;
        }
        let width = self.theta_hat.upper[i] - lo;
        let tol = if width.is_finite() && width > 0.0 {
            BOUNDARY_REL_TOL * width
        } else {
            BOUNDARY_REL_TOL
        };
        self.theta_hat.coord(i) <= lo + tol
    }

    pub fn to_toml(&self, se: Option<&[f64]>) -> String {
        let mut out = String::new();
        out.push_str(&format!("loglik = {}\n", self.loglik_value));
        out.push_str(&format!("converged = {}\n", self.converged));
        out.push_str(&format!("gradient_norm = {}\n", self.gradient_norm));
        out.push_str(&format!("eta = {:?}\n", self.theta_hat.eta));
        out.push_str(&format!("varpi = {:?}\n", self.theta_hat.varpi));
        out.push_str(&format!("active_bounds = {:?}\n", self.active_bounds));
        if let Some(se) = se {
            let rendered: Vec<String> = se
                .iter()
                .map(|s| {
                    if s.is_nan() {
                        "\"boundary\"".to_string()
                    } else {
                        format!("{s}")
                    }
                })
                .collect();
            out.push_str(&format!("se = [{}]\n", rendered.join(", ")));
        }
        out
    }
}

/// Unconstrained (full-space) maximum-likelihood fit over the box.
pub fn mle_fit(
    spec: &ModelSpec,
    events: &EventSequence,
    bounds: &Bounds,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_reduced(spec, events, bounds, opts, Reduction::Full)
}

/// Null fit with the reproduction rate constrained to a constant: all
/// weights tie to one scalar `C >= 0`. When the first weight is pinned by
/// the normalization, the constant is pinned with it and the fit reduces to
/// the eta block alone. The result reports the full-length weight vector.
pub fn mle_fit_constant_g(
    spec: &ModelSpec,
    events: &EventSequence,
    bounds: &Bounds,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_reduced(spec, events, bounds, opts, Reduction::TiedVarpi)
}

/// Wald standard errors from the observed information: on the coordinates
/// away from their bounds, `se_i = sqrt((I^{-1})_{ii} / T)`; boundary
/// coordinates are marked with NaN.
pub fn standard_errors(fit: &FitResult, horizon: f64) -> Result<Vec<f64>> {
    let n = fit.theta_hat.len();
    let mut inactive: Vec<usize> = (0..n)
        .filter(|i| !fit.active_bounds.contains(i))
        .collect();
    inactive.sort_unstable();
    let mut se = vec![f64::NAN; n];
    if inactive.is_empty() {
        return Ok(se);
    }
    let m = inactive.len();
    let mut sub = DMatrix::zeros(m, m);
    for (a, &i) in inactive.iter().enumerate() {
        for (b, &j) in inactive.iter().enumerate() {
            sub[(a, b)] = fit.observed_info[(i, j)];
        }
    }
    let eig = sub.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(min_eig > 0.0) || max_eig / min_eig > 1e12 {
        return Err(Error::SingularInformation);
    }
    let mut inv_diag = vec![0.0; m];
    for a in 0..m {
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors[(a, k)];
            inv_diag[a] += v * v / lam;
        }
    }
    for (a, &i) in inactive.iter().enumerate() {
        se[i] = (inv_diag[a] / horizon).sqrt();
    }
    Ok(se)
}

/// Data-driven default box: baselines scaled by the observed event rates,
/// kernel shape parameters scaled by the median inter-event gap, amplitudes
/// and weights on generous branching-scale boxes. The first weight is pinned
/// to one when the model carries the normalization.
pub fn default_bounds(spec: &ModelSpec, events: &EventSequence) -> Result<Bounds> {
    let layout = spec.layout();
    let horizon = events.horizon();
    let rates: Vec<f64> = (0..spec.dimension)
        .map(|k| events.component(k).len() as f64 / horizon)
        .collect();
    let rate_max = rates.iter().cloned().fold(0.1, f64::max);
    let med_gap = median_gap(events).unwrap_or(1.0);
    let mut lower = vec![0.0; layout.n_total()];
    let mut upper = vec![0.0; layout.n_total()];
    for i in layout.baseline_range() {
        lower[i] = 1e-8;
        upper[i] = match spec.baseline {
            Baseline::Constant => 10.0 * rates[i].max(0.1) + 1.0,
            Baseline::Bernstein { .. } => 10.0 * rate_max + 1.0,
        };
    }
    let pattern_radius = amplitude_pattern_radius(spec)?;
    for i in layout.amplitude_range() {
        lower[i] = 0.0;
        upper[i] = 4.0 / pattern_radius.max(1.0);
    }
    let beta_hat = (1.0 / med_gap).clamp(1e-6, 1e6);
    if layout.n_shape > 0 {
        let s = layout.shape_range().start;
        match spec.kernel.family {
            KernelFamily::Exponential => {
                lower[s] = beta_hat / 64.0;
                upper[s] = beta_hat * 64.0;
            }
            KernelFamily::PowerLaw => {
                lower[s] = 1.05;
                upper[s] = 12.0;
                lower[s + 1] = (med_gap / 100.0).max(1e-6);
                upper[s + 1] = 100.0 * med_gap + 1.0;
            }
            KernelFamily::Gaussian => {
                lower[s] = 1e-4 / (med_gap * med_gap);
                upper[s] = 1e4 / (med_gap * med_gap);
                lower[s + 1] = 0.0;
                upper[s + 1] = 20.0 * med_gap;
            }
        }
    }
    let raw_exponential = spec.kernel.family == KernelFamily::Exponential
        && spec
            .kernel
            .structure
            .iter()
            .flatten()
            .any(|e| matches!(e, Entry::Raw));
    let w_hi = if raw_exponential {
        8.0 * beta_hat.max(1.0)
    } else {
        8.0
    };
    for i in layout.varpi_range() {
        lower[i] = 0.0;
        upper[i] = w_hi;
    }
    let mut bounds = Bounds::new(lower, upper)?;
    if spec.reproduction.pin_first() {
        bounds.pin(layout.varpi_range().start, 1.0);
    }
    Ok(bounds)
}

/// Moment-flavored start: the window-count overdispersion pins the branching
/// level, the median gap pins the decay scale, and the observed rates thinned
/// by the branching level pin the baseline.
pub fn moment_start(spec: &ModelSpec, events: &EventSequence, bounds: &Bounds) -> Result<ParamVector> {
    let layout = spec.layout();
    let horizon = events.horizon();
    let branching = branching_from_counts(events);
    let rates: Vec<f64> = (0..spec.dimension)
        .map(|k| events.component(k).len() as f64 / horizon)
        .collect();
    let mean_rate = rates.iter().sum::<f64>() / spec.dimension as f64;
    let med_gap = median_gap(events).unwrap_or(1.0);
    let beta_hat = (1.0 / med_gap).clamp(1e-6, 1e6);
    let mut full = vec![0.0; layout.n_total()];
    for (slot, i) in layout.baseline_range().enumerate() {
        full[i] = match spec.baseline {
            Baseline::Constant => (rates[slot] * (1.0 - branching)).max(1e-4),
            Baseline::Bernstein { .. } => (mean_rate * (1.0 - branching)).max(1e-4),
        };
    }
    let pattern_radius = amplitude_pattern_radius(spec)?;
    for i in layout.amplitude_range() {
        full[i] = branching / pattern_radius.max(1e-6);
    }
    if layout.n_shape > 0 {
        let s = layout.shape_range().start;
        match spec.kernel.family {
            KernelFamily::Exponential => full[s] = beta_hat,
            KernelFamily::PowerLaw => {
                full[s] = 2.0;
                full[s + 1] = med_gap;
            }
            KernelFamily::Gaussian => {
                full[s] = 1.0 / (med_gap * med_gap);
                full[s + 1] = med_gap;
            }
        }
    }
    let raw_exponential = spec.kernel.family == KernelFamily::Exponential
        && spec
            .kernel
            .structure
            .iter()
            .flatten()
            .any(|e| matches!(e, Entry::Raw));
    for i in layout.varpi_range() {
        full[i] = if raw_exponential {
            branching * beta_hat
        } else {
            1.0
        };
    }
    let (eta, varpi) = split_full(layout.n_eta(), &full);
    let theta = ParamVector::new(eta, varpi, bounds.lower.clone(), bounds.upper.clone())?;
    clamp_to_bounds(&theta)
}

fn split_full(n_eta: usize, full: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (full[..n_eta].to_vec(), full[n_eta..].to_vec())
}

fn median_gap(events: &EventSequence) -> Option<f64> {
    let merged = events.merged();
    let mut gaps: Vec<f64> = merged
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .filter(|&g| g > 0.0)
        .collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(gaps[gaps.len() / 2])
}

/// Spectral radius of the 0/1 pattern of tied-amplitude positions.
fn amplitude_pattern_radius(spec: &ModelSpec) -> Result<f64> {
    let k = spec.dimension;
    let mut pattern = DMatrix::zeros(k, k);
    for row in 0..k {
        for col in 0..k {
            if matches!(spec.kernel.structure[row][col], Entry::Group(_)) {
                pattern[(row, col)] = 1.0;
            }
        }
    }
    spectral_radius(&pattern)
}

/// Branching-level estimate from the overdispersion of window counts.
fn branching_from_counts(events: &EventSequence) -> f64 {
    const WINDOWS: usize = 32;
    let horizon = events.horizon();
    let mut counts = [0.0f64; WINDOWS];
    for times in events.components() {
        for &t in times {
            let w = ((t / horizon * WINDOWS as f64) as usize).min(WINDOWS - 1);
            counts[w] += 1.0;
        }
    }
    let mean = counts.iter().sum::<f64>() / WINDOWS as f64;
    if mean <= 0.0 {
        return 0.1;
    }
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (WINDOWS - 1) as f64;
    if var > mean {
        ((var - mean) / (var + mean)).clamp(0.05, 0.9)
    } else {
        0.1
    }
}

// ---------------------------------------------------------------------------
// reduced coordinates and the projected quasi-Newton loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reduction {
    Full,
    /// All reproduction weights tied to one scalar.
    TiedVarpi,
}

#[derive(Debug, Clone, Copy)]
enum FreeCoord {
    /// One full-vector coordinate.
    Plain(usize),
    /// The tied reproduction-rate constant (chain rule sums the weight
    /// gradients).
    TiedConstant,
}

/// Internal map of one free coordinate onto `[0, 1]`. Boxes spanning orders
/// of magnitude (decay scales) map logarithmically, which keeps the search
/// space isotropic; boxes touching zero stay linear so boundary estimates
/// land exactly on the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    Linear,
    Log,
}

fn pick_scale(lo: f64, hi: f64) -> Scale {
    if lo > 0.0 && hi / lo > 50.0 {
        Scale::Log
    } else {
        Scale::Linear
    }
}

struct Problem<'a> {
    ws: &'a Workspace<'a>,
    spec: &'a ModelSpec,
    bounds: &'a Bounds,
    reduction: Reduction,
    free: Vec<FreeCoord>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    scale: Vec<Scale>,
    n_eta: usize,
    n_total: usize,
    horizon: f64,
}

impl<'a> Problem<'a> {
    fn new(
        ws: &'a Workspace<'a>,
        spec: &'a ModelSpec,
        bounds: &'a Bounds,
        reduction: Reduction,
    ) -> Result<Self> {
        let layout = spec.layout();
        let n_total = layout.n_total();
        if bounds.len() != n_total {
            return Err(Error::ShapeMismatch {
                expected: n_total,
                got: bounds.len(),
            });
        }
        let mut free = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut scale = Vec::new();
        for i in 0..layout.n_eta() {
            if !bounds.is_pinned(i) {
                free.push(FreeCoord::Plain(i));
                lo.push(bounds.lower[i]);
                hi.push(bounds.upper[i]);
                scale.push(pick_scale(bounds.lower[i], bounds.upper[i]));
            }
        }
        match reduction {
            Reduction::Full => {
                for i in layout.varpi_range() {
                    if !bounds.is_pinned(i) {
                        free.push(FreeCoord::Plain(i));
                        lo.push(bounds.lower[i]);
                        hi.push(bounds.upper[i]);
                        scale.push(pick_scale(bounds.lower[i], bounds.upper[i]));
                    }
                }
            }
            Reduction::TiedVarpi => {
                if layout.n_varpi > 0 {
                    // the constant inherits the tightest bounds; a pinned
                    // weight (the normalization) pins the constant too
                    let range = layout.varpi_range();
                    let c_lo = range
                        .clone()
                        .map(|i| bounds.lower[i])
                        .fold(f64::MIN, f64::max);
                    let c_hi = range.map(|i| bounds.upper[i]).fold(f64::MAX, f64::min);
                    if !(c_lo <= c_hi) {
                        return Err(Error::InconsistentBounds(layout.n_eta()));
                    }
                    if c_lo < c_hi {
                        free.push(FreeCoord::TiedConstant);
                        lo.push(c_lo);
                        hi.push(c_hi);
                        scale.push(pick_scale(c_lo, c_hi));
                    }
                }
            }
        }
        Ok(Problem {
            ws,
            spec,
            bounds,
            reduction,
            free,
            lo,
            hi,
            scale,
            n_eta: layout.n_eta(),
            n_total,
            horizon: 0.0,
        })
    }

    fn tied_constant_base(&self) -> f64 {
        // pinned weights force the constant; otherwise the tightest lower
        // bound is only a floor and the base value matters just for expand()
        let layout = self.spec.layout();
        let range = layout.varpi_range();
        for i in range {
            if self.bounds.is_pinned(i) {
                return self.bounds.lower[i];
            }
        }
        0.0
    }

    /// Parameter value of free coordinate `j` at scaled position `z`.
    fn coord_value(&self, j: usize, z: f64) -> f64 {
        match self.scale[j] {
            Scale::Linear => self.lo[j] + z * (self.hi[j] - self.lo[j]),
            Scale::Log => self.lo[j] * (self.hi[j] / self.lo[j]).powf(z),
        }
    }

    /// `d value / d z` at scaled position `z`.
    fn coord_slope(&self, j: usize, z: f64) -> f64 {
        match self.scale[j] {
            Scale::Linear => self.hi[j] - self.lo[j],
            Scale::Log => self.coord_value(j, z) * (self.hi[j] / self.lo[j]).ln(),
        }
    }

    /// Full theta from the scaled free coordinates.
    fn expand(&self, z: &[f64]) -> ParamVector {
        let mut full = vec![0.0; self.n_total];
        for i in 0..self.n_total {
            full[i] = self.bounds.lower[i]; // pinned coords and defaults
        }
        if self.reduction == Reduction::TiedVarpi && self.n_total > self.n_eta {
            let c = self.tied_constant_base();
            for slot in full.iter_mut().skip(self.n_eta) {
                *slot = c;
            }
        }
        for (j, coord) in self.free.iter().enumerate() {
            let value = self.coord_value(j, z[j]);
            match coord {
                FreeCoord::Plain(i) => full[*i] = value,
                FreeCoord::TiedConstant => {
                    for slot in full.iter_mut().skip(self.n_eta) {
                        *slot = value;
                    }
                }
            }
        }
        let (eta, varpi) = split_full(self.n_eta, &full);
        ParamVector {
            eta,
            varpi,
            lower: self.bounds.lower.clone(),
            upper: self.bounds.upper.clone(),
        }
    }

    /// Scaled coordinates of a full start vector.
    fn reduce(&self, theta: &ParamVector) -> Vec<f64> {
        let full = theta.full();
        self.free
            .iter()
            .enumerate()
            .map(|(j, coord)| {
                let raw = match coord {
                    FreeCoord::Plain(i) => full[*i],
                    FreeCoord::TiedConstant => {
                        full[self.n_eta..].iter().sum::<f64>()
                            / (self.n_total - self.n_eta) as f64
                    }
                };
                let z = match self.scale[j] {
                    Scale::Linear => (raw - self.lo[j]) / (self.hi[j] - self.lo[j]),
                    Scale::Log => {
                        (raw.max(self.lo[j]) / self.lo[j]).ln()
                            / (self.hi[j] / self.lo[j]).ln()
                    }
                };
                z.clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Negative log-likelihood with its scaled gradient; `Ok(None)` flags an
    /// infeasible point (rejected by the line search).
    fn eval(&self, z: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let theta = self.expand(z);
        match self.ws.loglik_with_grad(&theta) {
            Ok((value, grad_full)) => {
                let grad = self
                    .free
                    .iter()
                    .enumerate()
                    .map(|(j, coord)| {
                        let slope = match coord {
                            FreeCoord::Plain(i) => grad_full[*i],
                            FreeCoord::TiedConstant => grad_full[self.n_eta..].iter().sum(),
                        };
                        -slope * self.coord_slope(j, z[j])
                    })
                    .collect();
                Ok(Some((-value, grad)))
            }
            Err(Error::NonPositiveIntensityAtEvent { .. }) | Err(Error::Unstable { .. }) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn active_set(z: &[f64], g: &[f64]) -> Vec<bool> {
    z.iter()
        .zip(g)
        .map(|(zi, gi)| (*zi <= 0.0 && *gi > 0.0) || (*zi >= 1.0 && *gi < 0.0))
        .collect()
}

fn projected_gradient_norm(z: &[f64], g: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    for (zi, gi) in z.iter().zip(g) {
        let blocked = (*zi <= 0.0 && *gi > 0.0) || (*zi >= 1.0 && *gi < 0.0);
        if !blocked {
            norm = norm.max(gi.abs());
        }
    }
    norm
}

struct StartOutcome {
    z: Vec<f64>,
    value: f64,
    grad_norm: f64,
    converged: bool,
}

/// Projected L-BFGS from one start. Returns `None` if the start itself is
/// infeasible.
fn minimize(problem: &Problem, z0: Vec<f64>, opts: &FitOptions) -> Result<Option<StartOutcome>> {
    const MEMORY: usize = 8;
    const C1: f64 = 1e-4;
    let m = z0.len();
    let grad_tol = opts.grad_tol * problem.horizon.max(1.0);
    let mut z = z0;
    let Some((mut f, mut g)) = problem.eval(&z)? else {
        return Ok(None);
    };
    if m == 0 {
        return Ok(Some(StartOutcome {
            z,
            value: f,
            grad_norm: 0.0,
            converged: true,
        }));
    }
    let mut s_mem: Vec<Vec<f64>> = Vec::new();
    let mut y_mem: Vec<Vec<f64>> = Vec::new();
    let mut stalled_iters = 0usize;
    let mut prev_active: Vec<bool> = Vec::new();
    for _ in 0..opts.max_iters {
        // coordinates pressed against a bound are frozen this iteration;
        // the direction lives in the free subspace only
        let active = active_set(&z, &g);
        let g_proj: Vec<f64> = g
            .iter()
            .zip(&active)
            .map(|(gi, &a)| if a { 0.0 } else { *gi })
            .collect();
        let pg = g_proj.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg <= grad_tol {
            break;
        }
        // secant pairs from a different active set describe the wrong
        // subspace
        if active != prev_active {
            s_mem.clear();
            y_mem.clear();
            prev_active = active.clone();
        }
        let mut dir = two_loop_direction(&g_proj, &s_mem, &y_mem);
        for (d, &a) in dir.iter_mut().zip(&active) {
            if a {
                *d = 0.0;
            }
        }
        if dot(&dir, &g_proj) >= 0.0 {
            s_mem.clear();
            y_mem.clear();
            dir = g_proj.iter().map(|v| -v).collect();
        }
        // backtracking along the projected path
        let mut step = 1.0;
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        while step >= 1e-14 {
            let z_new: Vec<f64> = z
                .iter()
                .zip(&dir)
                .map(|(zi, di)| (zi + step * di).clamp(0.0, 1.0))
                .collect();
            let displacement: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
            if displacement.iter().all(|d| d.abs() < 1e-16) {
                break;
            }
            if let Some((f_new, g_new)) = problem.eval(&z_new)? {
                if f_new <= f + C1 * dot(&g_proj, &displacement) {
                    accepted = Some((z_new, f_new, g_new));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((z_new, f_new, g_new)) = accepted else {
            // no admissible step in this direction; with fresh memory this
            // is a stationary point of the projected path
            if s_mem.is_empty() {
                break;
            }
            s_mem.clear();
            y_mem.clear();
            continue;
        };
        let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new
            .iter()
            .zip(&g)
            .zip(&active)
            .map(|((gn, go), &a)| if a { 0.0 } else { gn - go })
            .collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm2(&s) * norm2(&y) {
            s_mem.push(s.clone());
            y_mem.push(y);
            if s_mem.len() > MEMORY {
                s_mem.remove(0);
                y_mem.remove(0);
            }
        }
        // a single tiny step can just mean a badly scaled direction; only
        // repeated negligible progress counts as a stall
        let f_change = (f - f_new).abs();
        let step_rel = norm2(&s) / norm2(&z_new).max(1.0);
        if f_change <= opts.step_tol * (1.0 + f_new.abs()) && step_rel <= opts.step_tol.sqrt() {
            stalled_iters += 1;
        } else {
            stalled_iters = 0;
        }
        z = z_new;
        f = f_new;
        g = g_new;
        if stalled_iters >= 3 {
            break;
        }
    }
    let grad_norm = projected_gradient_norm(&z, &g);
    Ok(Some(StartOutcome {
        z,
        value: f,
        grad_norm,
        converged: grad_norm <= grad_tol,
    }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn two_loop_direction(g: &[f64], s_mem: &[Vec<f64>], y_mem: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let k = s_mem.len();
    let mut alpha = vec![0.0; k];
    let mut rho = vec![0.0; k];
    for i in (0..k).rev() {
        rho[i] = 1.0 / dot(&y_mem[i], &s_mem[i]);
        alpha[i] = rho[i] * dot(&s_mem[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_mem[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if k > 0 {
        let last = k - 1;
        let gamma = dot(&s_mem[last], &y_mem[last]) / dot(&y_mem[last], &y_mem[last]);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
    }
    for i in 0..k {
        let beta = rho[i] * dot(&y_mem[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_mem[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn fit_reduced(
    spec: &ModelSpec,
    events: &EventSequence,
    bounds: &Bounds,
    opts: &FitOptions,
    reduction: Reduction,
) -> Result<FitResult> {
    if opts.multistart == 0 {
        return Err(Error::domain("multistart must be at least 1"));
    }
    let ws = Workspace::new(spec, events)?;
    let mut problem = Problem::new(&ws, spec, bounds, reduction)?;
    problem.horizon = events.horizon();
    // starts: warm starts first, then the moment start, then perturbations
    let mut starts: Vec<ParamVector> = Vec::new();
    for extra in &opts.extra_starts {
        let carried = ParamVector::new(
            extra.eta.clone(),
            extra.varpi.clone(),
            bounds.lower.clone(),
            bounds.upper.clone(),
        )?;
        starts.push(clamp_to_bounds(&carried)?);
    }
    let base = moment_start(spec, events, bounds)?;
    starts.push(base.clone());
    let mut rng = opts.rng.rng();
    for _ in 1..opts.multistart {
        let mut jittered = base.clone();
        let n = jittered.len();
        for i in 0..n {
            let u: f64 = rng.random();
            let factor = (3.0f64.ln() * (2.0 * u - 1.0)).exp();
            jittered.set_coord(i, jittered.coord(i) * factor);
        }
        starts.push(clamp_to_bounds(&jittered)?);
    }
    let outcomes: Vec<Result<Option<StartOutcome>>> = replicates::run(starts.len(), |i| {
        minimize(&problem, problem.reduce(&starts[i]), opts)
    });
    let mut best: Option<(usize, StartOutcome)> = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        if let Some(out) = outcome? {
            let better = match &best {
                None => true,
                Some((_, b)) => out.value < b.value,
            };
            if better {
                best = Some((i, out));
            }
        }
    }
    let Some((_, winner)) = best else {
        return Err(Error::AllStartsFailed);
    };
    let mut theta_hat = problem.expand(&winner.z);
    // coordinates within the boundary tolerance snap onto the bound exactly
    for i in 0..theta_hat.len() {
        let lo = bounds.lower[i];
        let hi = bounds.upper[i];
        let tol = BOUNDARY_REL_TOL * (hi - lo).max(0.0) + f64::EPSILON;
        let v = theta_hat.coord(i);
        if v - lo <= tol {
            theta_hat.set_coord(i, lo);
        } else if hi - v <= tol {
            theta_hat.set_coord(i, hi);
        }
    }
    let loglik_value = ws.loglik(&theta_hat)?;
    let observed_info = ws.observed_information(&theta_hat)?;
    let active_bounds = (0..theta_hat.len())
        .filter(|&i| {
            let lo = bounds.lower[i];
            let hi = bounds.upper[i];
            let tol = BOUNDARY_REL_TOL * (hi - lo).max(0.0) + f64::EPSILON;
            let v = theta_hat.coord(i);
            v - lo <= tol || hi - v <= tol
        })
        .collect();
    Ok(FitResult {
        theta_hat,
        loglik_value,
        gradient_norm: winner.grad_norm,
        converged: winner.converged,
        observed_info,
        active_bounds,
    })
}
