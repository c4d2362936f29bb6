//! Log-likelihood, analytic score, compensator, and observed information.
//!
//! For an observation on `[0, T]` the log-likelihood is
//!
//! ```text
//! L(theta) = sum_k [ sum_j log lambda_k(t_j^k) - integral_0^T lambda_k(s) ds ]
//! ```
//!
//! Two evaluation paths share one public API:
//!
//! - a closed-form path for identity activation with exponential kernels and
//!   polynomial baseline/reproduction rate. Between events the excitation is
//!   `W e^{-beta u}`, so every compensator piece reduces to moments
//!   `integral u^m e^{-beta u} du` against the exact Taylor expansion of the
//!   polynomials, and the whole pass is O(events). The Taylor tables of the
//!   basis polynomials depend only on the event times, so the workspace
//!   precomputes them once and every likelihood evaluation reuses them.
//! - a Gauss-Legendre path (order 16 per inter-event chunk with a refinement
//!   pass) for every other configuration, with direct history sums truncated
//!   at a negligible kernel tail.
//!
//! Events sitting exactly on a chunk boundary are never sampled: quadrature
//! nodes are interior, and event terms always use the strict left limit of
//! the history, so predictability is preserved by construction.

use nalgebra::DMatrix;

use crate::bernstein::{self, BasisTable};
use crate::error::{Error, Result};
use crate::events::{validate_events, EventSequence};
use crate::intensity::TRUNCATION_REL_TOL;
use crate::model::{Baseline, ModelSpec, ParamLayout, Reproduction, Resolved};
use crate::params::ParamVector;

/// Intensities below this are treated as zero at an event (infeasible theta).
const MIN_EVENT_INTENSITY: f64 = 1e-300;

/// Gauss-Legendre order 16 nodes and weights on [-1, 1].
const GL16_X: [f64; 16] = [
    -0.989_400_934_991_649_9,
    -0.944_575_023_073_232_6,
    -0.865_631_202_387_831_7,
    -0.755_404_408_355_003_0,
    -0.617_876_244_402_643_7,
    -0.458_016_777_657_227_4,
    -0.281_603_550_779_258_9,
    -0.095_012_509_837_637_44,
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_W: [f64; 16] = [
    0.027_152_459_411_754_095,
    0.062_253_523_938_647_89,
    0.095_158_511_682_492_78,
    0.124_628_971_255_533_87,
    0.149_595_988_816_576_73,
    0.169_156_519_395_002_54,
    0.182_603_415_044_923_59,
    0.189_450_610_455_068_5,
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_59,
    0.169_156_519_395_002_54,
    0.149_595_988_816_576_73,
    0.124_628_971_255_533_87,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_095,
];

/// Moments `E_m = integral_0^h u^m exp(-beta u) du` for `m = 0..=mmax`,
/// written into `out`.
///
/// The top moment comes from the everywhere-positive series
/// `E_m = h^{m+1} m! e^{-bh} sum_n (bh)^n / (m+n+1)!`, then a downward
/// recurrence (only positive additions) fills the rest. Far in the tail the
/// upward recurrence is used instead, where its subtraction is benign.
pub(crate) fn exp_moments_into(h: f64, beta: f64, mmax: usize, out: &mut [f64]) {
    debug_assert!(out.len() > mmax);
    if h <= 0.0 {
        out[..=mmax].fill(0.0);
        return;
    }
    let bh = beta * h;
    if bh >= 200.0 {
        out[0] = -(-bh).exp_m1() / beta;
        let ln_h = h.ln();
        for m in 1..=mmax {
            let tail = (m as f64 * ln_h - bh).exp();
            out[m] = ((m as f64) * out[m - 1] - tail) / beta;
        }
        return;
    }
    let m = mmax;
    let mut term = 1.0;
    for j in 1..=(m + 1) {
        term /= j as f64;
    }
    let mut sum = term;
    for n in 1..=600 {
        term *= bh / (m + n + 1) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    // prefactor h^{m+1} m! e^{-bh}
    let mut pref = (-bh).exp();
    for j in 1..=m {
        pref *= h * j as f64;
    }
    pref *= h;
    if !pref.is_finite() {
        let mut ln_fact = 0.0;
        for j in 1..=m {
            ln_fact += (j as f64).ln();
        }
        pref = ((m as f64 + 1.0) * h.ln() + ln_fact - bh).exp();
    }
    out[m] = pref * sum;
    if m > 0 {
        // h^m e^{-bh}, stepped down one power of h per level
        let mut tail = (-bh).exp();
        for _ in 0..m {
            tail *= h;
        }
        if !tail.is_finite() {
            tail = ((m as f64) * h.ln() - bh).exp();
        }
        for mm in (0..m).rev() {
            out[mm] = (beta * out[mm + 1] + tail) / (mm as f64 + 1.0);
            tail /= h;
        }
    }
}

#[cfg(test)]
pub(crate) fn exp_moments(h: f64, beta: f64, mmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; mmax + 1];
    exp_moments_into(h, beta, mmax, &mut out);
    out
}

/// Theta-independent tables for the closed-form path: Taylor coefficients of
/// every basis polynomial at each interval start, baseline integral pieces,
/// and basis rows at the event times.
struct ExpPrecomp {
    d_g: usize,
    /// One entry per merged event (the interval ending at it) plus the final
    /// interval up to the horizon.
    intervals: Vec<IntervalPre>,
    /// Basis rows of the reproduction polynomial at each merged event,
    /// flattened `(d_g + 1)` per event.
    event_basis_g: Vec<f64>,
    /// Basis rows of a polynomial baseline at each merged event (empty for a
    /// constant baseline).
    event_basis_mu: Vec<f64>,
}

struct IntervalPre {
    h: f64,
    /// `[i * (d_g + 1) + m]` = m-th Taylor coefficient of basis polynomial
    /// `i` around the interval start (in elapsed time `u`, so the scale
    /// `1 / T^m` is folded in). Empty for zero-length intervals.
    basis_taylor: Vec<f64>,
    /// Per baseline coordinate: the integral of its basis polynomial over
    /// the interval (polynomial baselines only).
    mu_piece: Vec<f64>,
}

impl ExpPrecomp {
    fn build(
        spec: &ModelSpec,
        events: &EventSequence,
        merged: &[(f64, usize, usize)],
    ) -> Result<Self> {
        let Reproduction::Bernstein { degree: d_g, .. } = spec.reproduction else {
            return Err(Error::Unsupported("closed form needs a polynomial rate".into()));
        };
        let horizon = events.horizon();
        let n_events = merged.len();
        let stride = d_g + 1;
        let mut intervals = Vec::with_capacity(n_events + 1);
        let mut event_basis_g = vec![0.0; n_events * stride];
        let mut event_basis_mu = Vec::new();
        let mu_degree = match spec.baseline {
            Baseline::Constant => None,
            Baseline::Bernstein { degree } => {
                event_basis_mu = vec![0.0; n_events * (degree + 1)];
                Some(degree)
            }
        };
        let mut prev = 0.0;
        let mut prev_anti: Option<Vec<f64>> = match mu_degree {
            Some(dm) => Some(bernstein::basis_antiderivatives(dm, 0.0)?),
            None => None,
        };
        for idx in 0..=n_events {
            let t_next = if idx < n_events {
                merged[idx].0
            } else {
                horizon
            };
            let h = t_next - prev;
            let mut pre = IntervalPre {
                h,
                basis_taylor: Vec::new(),
                mu_piece: Vec::new(),
            };
            if h > 0.0 {
                let table = BasisTable::new(d_g, prev / horizon)?;
                let mut flat = vec![0.0; stride * stride];
                let mut unit = vec![0.0; stride];
                for i in 0..=d_g {
                    unit[i] = 1.0;
                    let coeffs = table.taylor_coeffs(&unit, horizon);
                    flat[i * stride..(i + 1) * stride].copy_from_slice(&coeffs);
                    unit[i] = 0.0;
                }
                pre.basis_taylor = flat;
                if let Some(dm) = mu_degree {
                    let anti_b = bernstein::basis_antiderivatives(dm, t_next / horizon)?;
                    let anti_a = prev_anti.as_ref().expect("initialized above");
                    pre.mu_piece = anti_b
                        .iter()
                        .zip(anti_a)
                        .map(|(b, a)| horizon * (b - a))
                        .collect();
                    prev_anti = Some(anti_b);
                }
            }
            intervals.push(pre);
            if idx < n_events {
                let x = t_next / horizon;
                bernstein::basis_row_into(
                    d_g,
                    x,
                    &mut event_basis_g[idx * stride..(idx + 1) * stride],
                );
                if let Some(dm) = mu_degree {
                    bernstein::basis_row_into(
                        dm,
                        x,
                        &mut event_basis_mu[idx * (dm + 1)..(idx + 1) * (dm + 1)],
                    );
                }
                prev = t_next;
            }
        }
        Ok(ExpPrecomp {
            d_g,
            intervals,
            event_basis_g,
            event_basis_mu,
        })
    }
}

/// Reusable evaluation context for one `(spec, events)` pair.
pub struct Workspace<'a> {
    spec: &'a ModelSpec,
    events: &'a EventSequence,
    /// `(time, component, index within component)` in time order.
    merged: Vec<(f64, usize, usize)>,
    layout: ParamLayout,
    exp_pre: Option<ExpPrecomp>,
}

impl<'a> Workspace<'a> {
    pub fn new(spec: &'a ModelSpec, events: &'a EventSequence) -> Result<Self> {
        validate_events(events)?;
        if events.dimension() != spec.dimension {
            return Err(Error::ShapeMismatch {
                expected: spec.dimension,
                got: events.dimension(),
            });
        }
        let mut merged = Vec::with_capacity(events.total_events());
        for (k, times) in events.components().iter().enumerate() {
            merged.extend(times.iter().enumerate().map(|(i, &t)| (t, k, i)));
        }
        merged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let closed_form = spec.activation.is_identity()
            && matches!(spec.kernel.family, crate::kernels::KernelFamily::Exponential)
            && matches!(spec.reproduction, Reproduction::Bernstein { .. });
        let exp_pre = if closed_form {
            Some(ExpPrecomp::build(spec, events, &merged)?)
        } else {
            None
        };
        Ok(Workspace {
            spec,
            events,
            merged,
            layout: spec.layout(),
            exp_pre,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_total()
    }

    pub fn loglik(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.eval(theta, false)?.0)
    }

    pub fn loglik_with_grad(&self, theta: &ParamVector) -> Result<(f64, Vec<f64>)> {
        let (value, grad) = self.eval(theta, true)?;
        Ok((value, grad.expect("gradient requested")))
    }

    pub fn compensator(&self, theta: &ParamVector, component: usize) -> Result<f64> {
        let increments = self.compensator_profile(theta, component)?;
        Ok(increments.total)
    }

    pub fn compensator_increments(
        &self,
        theta: &ParamVector,
        component: usize,
    ) -> Result<Vec<f64>> {
        Ok(self.compensator_profile(theta, component)?.increments)
    }

    pub fn observed_information(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        let resolved = self.spec.resolve(theta)?;
        match &self.exp_pre {
            Some(pre) => ExpEngine::new(self, &resolved, pre)?.information(),
            None => QuadEngine::new(self, &resolved).information(),
        }
    }

    fn eval(&self, theta: &ParamVector, grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let resolved = self.spec.resolve(theta)?;
        match &self.exp_pre {
            Some(pre) => ExpEngine::new(self, &resolved, pre)?.loglik(grad),
            None => QuadEngine::new(self, &resolved).loglik(grad),
        }
    }

    fn compensator_profile(&self, theta: &ParamVector, component: usize) -> Result<Compensator> {
        if component >= self.spec.dimension {
            return Err(Error::ShapeMismatch {
                expected: self.spec.dimension,
                got: component,
            });
        }
        let resolved = self.spec.resolve(theta)?;
        match &self.exp_pre {
            Some(pre) => ExpEngine::new(self, &resolved, pre)?.compensator(component),
            None => QuadEngine::new(self, &resolved).compensator(component),
        }
    }
}

struct Compensator {
    total: f64,
    /// Compensator increment between consecutive events of the component,
    /// starting from time zero.
    increments: Vec<f64>,
}

pub fn loglik(spec: &ModelSpec, theta: &ParamVector, events: &EventSequence) -> Result<f64> {
    Workspace::new(spec, events)?.loglik(theta)
}

pub fn loglik_grad(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
) -> Result<Vec<f64>> {
    Ok(Workspace::new(spec, events)?.loglik_with_grad(theta)?.1)
}

pub fn loglik_with_grad(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
) -> Result<(f64, Vec<f64>)> {
    Workspace::new(spec, events)?.loglik_with_grad(theta)
}

/// `integral_0^T lambda_k(s) ds` for one component.
pub fn compensator(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
    component: usize,
) -> Result<f64> {
    Workspace::new(spec, events)?.compensator(theta, component)
}

/// Compensator increments between consecutive events of `component`
/// (the first spans from time zero). Unit exponentials under the true model.
pub fn compensator_increments(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
    component: usize,
) -> Result<Vec<f64>> {
    Workspace::new(spec, events)?.compensator_increments(theta, component)
}

/// Plug-in observed information: the integrated predictable variation of the
/// score,
///
/// ```text
/// I_T(theta) = (1/T) sum_k integral_0^T d lambda_k d lambda_k' / lambda_k ds,
/// ```
///
/// symmetric positive semi-definite by construction.
pub fn observed_information(
    spec: &ModelSpec,
    theta: &ParamVector,
    events: &EventSequence,
) -> Result<DMatrix<f64>> {
    Workspace::new(spec, events)?.observed_information(theta)
}

// ---------------------------------------------------------------------------
// closed-form path
// ---------------------------------------------------------------------------

/// Per-source running sums for the exponential fast path:
/// `s_l = sum exp(-beta u_j)` and `v_l = sum u_j exp(-beta u_j)` with
/// `u_j` the elapsed time since each past event of component `l`.
struct ExpState {
    s: Vec<f64>,
    v: Vec<f64>,
}

impl ExpState {
    fn new(k: usize) -> Self {
        ExpState {
            s: vec![0.0; k],
            v: vec![0.0; k],
        }
    }

    fn advance(&mut self, beta: f64, dt: f64) {
        if dt == 0.0 {
            return;
        }
        let decay = (-beta * dt).exp();
        for (s, v) in self.s.iter_mut().zip(self.v.iter_mut()) {
            *v = decay * (*v + dt * *s);
            *s *= decay;
        }
    }

    fn register(&mut self, l: usize) {
        self.s[l] += 1.0;
    }
}

struct ExpEngine<'a> {
    ws: &'a Workspace<'a>,
    resolved: &'a Resolved<'a>,
    pre: &'a ExpPrecomp,
    k_dim: usize,
    n: usize,
    horizon: f64,
    beta: f64,
    /// Kernel values at zero, `c_kl = phi_kl(0+)`, row-major; zero entries
    /// for structural zeros.
    c: Vec<f64>,
    /// `d c_kl / d beta` (zero for the raw kernel, alpha for free amplitudes).
    cp: Vec<f64>,
    /// Column sums over rows of `c` and `cp`, for compensators pooled over
    /// components.
    c_col: Vec<f64>,
    cp_col: Vec<f64>,
    /// Per row: `(amplitude coordinate, source column)` of free-amplitude
    /// pairs.
    amp_cols: Vec<Vec<(usize, usize)>>,
    varpi: &'a [f64],
    d_g: usize,
    shape_coord: Option<usize>,
}

impl<'a> ExpEngine<'a> {
    fn new(
        ws: &'a Workspace<'a>,
        resolved: &'a Resolved<'a>,
        pre: &'a ExpPrecomp,
    ) -> Result<Self> {
        let k_dim = ws.spec.dimension;
        let layout = ws.layout;
        let mut c = vec![0.0; k_dim * k_dim];
        let mut cp = vec![0.0; k_dim * k_dim];
        let mut amp_cols = vec![Vec::new(); k_dim];
        let mut beta = 1.0;
        let shape_coord = (layout.n_shape > 0).then(|| layout.shape_range().start);
        for row in 0..k_dim {
            for col in 0..k_dim {
                if let Some(pair) = resolved.pair(row, col) {
                    let (alpha, b) = match pair.params {
                        crate::kernels::KernelParams::Exponential { alpha, beta } => {
                            (alpha, beta)
                        }
                        _ => unreachable!("closed-form path is exponential only"),
                    };
                    if !(b > 0.0) || alpha < 0.0 {
                        return Err(Error::domain("invalid exponential kernel parameters"));
                    }
                    beta = b;
                    c[row * k_dim + col] = alpha * b;
                    // dc/d beta through every chain entry hitting the shape
                    // coordinate
                    let mut dc = 0.0;
                    for &(coord, slot, chain) in &pair.dfree {
                        if Some(coord) == shape_coord {
                            dc += chain * if slot == 0 { b } else { alpha };
                        }
                        if slot == 0 && Some(coord) != shape_coord {
                            amp_cols[row].push((coord, col));
                        }
                    }
                    cp[row * k_dim + col] = dc;
                }
            }
        }
        let mut c_col = vec![0.0; k_dim];
        let mut cp_col = vec![0.0; k_dim];
        for col in 0..k_dim {
            for row in 0..k_dim {
                c_col[col] += c[row * k_dim + col];
                cp_col[col] += cp[row * k_dim + col];
            }
        }
        Ok(ExpEngine {
            ws,
            resolved,
            pre,
            k_dim,
            n: layout.n_total(),
            horizon: ws.events.horizon(),
            beta,
            c,
            cp,
            c_col,
            cp_col,
            amp_cols,
            varpi: resolved.varpi(),
            d_g: pre.d_g,
            shape_coord,
        })
    }

    fn w_row(&self, state: &ExpState, k: usize) -> f64 {
        let mut w = 0.0;
        for l in 0..self.k_dim {
            w += self.c[k * self.k_dim + l] * state.s[l];
        }
        w
    }

    /// Compensator of this interval pooled over components, optionally
    /// accumulating minus its gradient. `g_taylor` and `moments` are
    /// per-interval scratch already filled by the caller.
    fn pooled_interval_term(
        &self,
        pre: &IntervalPre,
        state: &ExpState,
        g_taylor: &[f64],
        moments: &[f64],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let stride = self.d_g + 1;
        // baseline, identical across components when polynomial
        let mut total = 0.0;
        match self.ws.spec.baseline {
            Baseline::Constant => {
                let coeffs = self.resolved.baseline_coeffs();
                for (k, &mu) in coeffs.iter().enumerate() {
                    total += mu * pre.h;
                    if let Some(g) = grad.as_deref_mut() {
                        g[k] -= pre.h;
                    }
                }
            }
            Baseline::Bernstein { .. } => {
                let coeffs = self.resolved.baseline_coeffs();
                let k_f = self.k_dim as f64;
                for (j, &piece) in pre.mu_piece.iter().enumerate() {
                    total += k_f * coeffs[j] * piece;
                    if let Some(g) = grad.as_deref_mut() {
                        g[j] -= k_f * piece;
                    }
                }
            }
        }
        // excitation pooled through column sums
        let mut w_tot = 0.0;
        let mut p_tot = 0.0;
        for l in 0..self.k_dim {
            w_tot += self.c_col[l] * state.s[l];
            p_tot += self.cp_col[l] * state.s[l] - self.c_col[l] * state.v[l];
        }
        let mut g_int = 0.0;
        let mut g_int_up = 0.0;
        for m in 0..stride {
            g_int += g_taylor[m] * moments[m];
            g_int_up += g_taylor[m] * moments[m + 1];
        }
        total += w_tot * g_int;
        if let Some(gr) = grad.as_deref_mut() {
            let varpi_base = self.ws.layout.varpi_range().start;
            for i in 0..stride {
                let row = &pre.basis_taylor[i * stride..(i + 1) * stride];
                let mut bi = 0.0;
                for m in 0..stride {
                    bi += row[m] * moments[m];
                }
                gr[varpi_base + i] -= w_tot * bi;
            }
            for row in 0..self.k_dim {
                for &(coord, col) in &self.amp_cols[row] {
                    gr[coord] -= self.beta * state.s[col] * g_int;
                }
            }
            if let Some(coord) = self.shape_coord {
                gr[coord] -= p_tot * g_int - w_tot * g_int_up;
            }
        }
        total
    }

    /// Compensator of a single component over one interval (diagnostics
    /// path; no gradient).
    fn component_interval_term(
        &self,
        k: usize,
        pre: &IntervalPre,
        prev: f64,
        state: &ExpState,
        g_taylor: &[f64],
        moments: &[f64],
    ) -> Result<f64> {
        let stride = self.d_g + 1;
        let mut total = match self.ws.spec.baseline {
            Baseline::Constant => self.resolved.baseline_coeffs()[k] * pre.h,
            Baseline::Bernstein { .. } => {
                let coeffs = self.resolved.baseline_coeffs();
                pre.mu_piece
                    .iter()
                    .zip(coeffs)
                    .map(|(piece, c)| c * piece)
                    .sum()
            }
        };
        let _ = prev;
        let w = self.w_row(state, k);
        let mut g_int = 0.0;
        for m in 0..stride {
            g_int += g_taylor[m] * moments[m];
        }
        total += w * g_int;
        Ok(total)
    }

    /// Intensity of component `k` at merged event `idx`, with the optional
    /// gradient (not yet divided by the intensity) accumulated into `grad`.
    fn event_intensity(
        &self,
        idx: usize,
        k: usize,
        state: &ExpState,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let stride = self.d_g + 1;
        let basis_g = &self.pre.event_basis_g[idx * stride..(idx + 1) * stride];
        let w = self.w_row(state, k);
        let g_x: f64 = basis_g
            .iter()
            .zip(self.varpi)
            .map(|(b, w)| b * w)
            .sum();
        let coeffs = self.resolved.baseline_coeffs();
        let mu = match self.ws.spec.baseline {
            Baseline::Constant => coeffs[k],
            Baseline::Bernstein { degree } => {
                let row =
                    &self.pre.event_basis_mu[idx * (degree + 1)..(idx + 1) * (degree + 1)];
                row.iter().zip(coeffs).map(|(b, c)| b * c).sum()
            }
        };
        let lambda = mu + g_x * w;
        if let Some(gr) = grad {
            match self.ws.spec.baseline {
                Baseline::Constant => gr[k] += 1.0,
                Baseline::Bernstein { degree } => {
                    let row =
                        &self.pre.event_basis_mu[idx * (degree + 1)..(idx + 1) * (degree + 1)];
                    for (j, b) in row.iter().enumerate() {
                        gr[j] += b;
                    }
                }
            }
            let varpi_base = self.ws.layout.varpi_range().start;
            for (i, b) in basis_g.iter().enumerate() {
                gr[varpi_base + i] += b * w;
            }
            for &(coord, col) in &self.amp_cols[k] {
                gr[coord] += g_x * self.beta * state.s[col];
            }
            if let Some(coord) = self.shape_coord {
                let mut p = 0.0;
                for l in 0..self.k_dim {
                    let idx2 = k * self.k_dim + l;
                    p += self.cp[idx2] * state.s[l] - self.c[idx2] * state.v[l];
                }
                gr[coord] += g_x * p;
            }
        }
        lambda
    }

    /// Fill the Taylor coefficients of `g` at the interval start by linearity
    /// over the precomputed basis tables.
    fn fill_g_taylor(&self, pre: &IntervalPre, out: &mut [f64]) {
        let stride = self.d_g + 1;
        out[..stride].fill(0.0);
        for (i, &w) in self.varpi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &pre.basis_taylor[i * stride..(i + 1) * stride];
            for m in 0..stride {
                out[m] += w * row[m];
            }
        }
    }

    fn loglik(&self, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let mut grad = want_grad.then(|| vec![0.0; self.n]);
        let mut state = ExpState::new(self.k_dim);
        let mut value = 0.0;
        let merged = &self.ws.merged;
        let stride = self.d_g + 1;
        let mut g_taylor = vec![0.0; stride];
        let mut moments = vec![0.0; stride + 1];
        let mut scratch = vec![0.0; self.n];
        let mut idx = 0;
        while idx <= merged.len() {
            let pre = &self.ws.exp_pre.as_ref().expect("closed form").intervals[idx];
            if pre.h > 0.0 {
                self.fill_g_taylor(pre, &mut g_taylor);
                exp_moments_into(pre.h, self.beta, stride, &mut moments);
                value -= self.pooled_interval_term(
                    pre,
                    &state,
                    &g_taylor,
                    &moments,
                    grad.as_deref_mut(),
                );
                state.advance(self.beta, pre.h);
            }
            if idx >= merged.len() {
                break;
            }
            // all events at exactly this time share the strict-past state
            let t_now = merged[idx].0;
            let tie_end = merged[idx..]
                .iter()
                .position(|e| e.0 > t_now)
                .map_or(merged.len(), |p| idx + p);
            for (offset, &(_, comp, comp_idx)) in merged[idx..tie_end].iter().enumerate() {
                let event_idx = idx + offset;
                let lambda = if let Some(gr) = grad.as_deref_mut() {
                    scratch.fill(0.0);
                    let lambda =
                        self.event_intensity(event_idx, comp, &state, Some(&mut scratch));
                    if lambda > MIN_EVENT_INTENSITY {
                        for (g, s) in gr.iter_mut().zip(&scratch) {
                            *g += s / lambda;
                        }
                    }
                    lambda
                } else {
                    self.event_intensity(event_idx, comp, &state, None)
                };
                if lambda <= MIN_EVENT_INTENSITY {
                    return Err(Error::NonPositiveIntensityAtEvent {
                        component: comp,
                        index: comp_idx,
                    });
                }
                value += lambda.ln();
            }
            for &(_, comp, _) in &merged[idx..tie_end] {
                state.register(comp);
            }
            idx = tie_end;
        }
        Ok((value, grad))
    }

    fn compensator(&self, component: usize) -> Result<Compensator> {
        let mut state = ExpState::new(self.k_dim);
        let mut prev = 0.0;
        let mut running = 0.0;
        let mut last_mark = 0.0;
        let mut increments = Vec::with_capacity(self.ws.events.component(component).len());
        let merged = &self.ws.merged;
        let stride = self.d_g + 1;
        let mut g_taylor = vec![0.0; stride];
        let mut moments = vec![0.0; stride + 1];
        let mut idx = 0;
        while idx <= merged.len() {
            let pre = &self.ws.exp_pre.as_ref().expect("closed form").intervals[idx];
            if pre.h > 0.0 {
                self.fill_g_taylor(pre, &mut g_taylor);
                exp_moments_into(pre.h, self.beta, stride, &mut moments);
                running += self.component_interval_term(
                    component, pre, prev, &state, &g_taylor, &moments,
                )?;
                state.advance(self.beta, pre.h);
                prev += pre.h;
            }
            if idx >= merged.len() {
                break;
            }
            let t_now = merged[idx].0;
            let tie_end = merged[idx..]
                .iter()
                .position(|e| e.0 > t_now)
                .map_or(merged.len(), |p| idx + p);
            for &(_, comp, _) in &merged[idx..tie_end] {
                if comp == component {
                    increments.push(running - last_mark);
                    last_mark = running;
                }
                state.register(comp);
            }
            idx = tie_end;
        }
        Ok(Compensator {
            total: running,
            increments,
        })
    }

    fn information(&self) -> Result<DMatrix<f64>> {
        let mut info = DMatrix::zeros(self.n, self.n);
        let mut state = ExpState::new(self.k_dim);
        let mut node = ExpState::new(self.k_dim);
        let merged = &self.ws.merged;
        let mut grad = vec![0.0; self.n];
        let mut prev = 0.0;
        let mut idx = 0;
        while idx <= merged.len() {
            let pre = &self.ws.exp_pre.as_ref().expect("closed form").intervals[idx];
            if pre.h > 0.0 {
                let h = pre.h;
                for (xi, wi) in GL16_X.iter().zip(GL16_W) {
                    let u = 0.5 * h * (xi + 1.0);
                    let decay = (-self.beta * u).exp();
                    for l in 0..self.k_dim {
                        node.s[l] = state.s[l] * decay;
                        node.v[l] = decay * (state.v[l] + u * state.s[l]);
                    }
                    let x = (prev + u) / self.horizon;
                    let weight = 0.5 * h * wi;
                    for k in 0..self.k_dim {
                        grad.fill(0.0);
                        let lambda = self.node_intensity(k, x, &node, &mut grad)?;
                        if lambda <= MIN_EVENT_INTENSITY {
                            continue;
                        }
                        rank_one_update(&mut info, &grad, weight / lambda);
                    }
                }
                state.advance(self.beta, h);
                prev += h;
            }
            if idx >= merged.len() {
                break;
            }
            let t_now = merged[idx].0;
            let tie_end = merged[idx..]
                .iter()
                .position(|e| e.0 > t_now)
                .map_or(merged.len(), |p| idx + p);
            for &(_, comp, _) in &merged[idx..tie_end] {
                state.register(comp);
            }
            idx = tie_end;
        }
        info /= self.horizon;
        symmetrize(&mut info);
        Ok(info)
    }

    /// Intensity and gradient at an off-event quadrature node.
    fn node_intensity(
        &self,
        k: usize,
        x: f64,
        state: &ExpState,
        gr: &mut [f64],
    ) -> Result<f64> {
        let mut basis_g = [0.0; bernstein::MAX_DEGREE + 1];
        bernstein::basis_row_into(self.d_g, x, &mut basis_g);
        let w = self.w_row(state, k);
        let g_x: f64 = basis_g[..=self.d_g]
            .iter()
            .zip(self.varpi)
            .map(|(b, w)| b * w)
            .sum();
        let coeffs = self.resolved.baseline_coeffs();
        let mu = match self.ws.spec.baseline {
            Baseline::Constant => {
                gr[k] += 1.0;
                coeffs[k]
            }
            Baseline::Bernstein { degree } => {
                let mut basis_mu = [0.0; bernstein::MAX_DEGREE + 1];
                bernstein::basis_row_into(degree, x, &mut basis_mu);
                for (j, b) in basis_mu[..=degree].iter().enumerate() {
                    gr[j] += b;
                }
                basis_mu[..=degree]
                    .iter()
                    .zip(coeffs)
                    .map(|(b, c)| b * c)
                    .sum()
            }
        };
        let varpi_base = self.ws.layout.varpi_range().start;
        for (i, b) in basis_g[..=self.d_g].iter().enumerate() {
            gr[varpi_base + i] += b * w;
        }
        for &(coord, col) in &self.amp_cols[k] {
            gr[coord] += g_x * self.beta * state.s[col];
        }
        if let Some(coord) = self.shape_coord {
            let mut p = 0.0;
            for l in 0..self.k_dim {
                let idx2 = k * self.k_dim + l;
                p += self.cp[idx2] * state.s[l] - self.c[idx2] * state.v[l];
            }
            gr[coord] += g_x * p;
        }
        Ok(mu + g_x * w)
    }
}

fn rank_one_update(m: &mut DMatrix<f64>, v: &[f64], w: f64) {
    let n = v.len();
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        let wi = w * v[i];
        for j in i..n {
            m[(i, j)] += wi * v[j];
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
}

// ---------------------------------------------------------------------------
// quadrature path
// ---------------------------------------------------------------------------

struct QuadEngine<'a> {
    ws: &'a Workspace<'a>,
    resolved: &'a Resolved<'a>,
    k_dim: usize,
    n: usize,
    horizon: f64,
    /// Truncation horizon per pair, row-major.
    trunc: Vec<f64>,
}

impl<'a> QuadEngine<'a> {
    fn new(ws: &'a Workspace<'a>, resolved: &'a Resolved<'a>) -> Self {
        let k_dim = ws.spec.dimension;
        let mut trunc = vec![0.0; k_dim * k_dim];
        for row in 0..k_dim {
            for col in 0..k_dim {
                if let Some(pair) = resolved.pair(row, col) {
                    trunc[row * k_dim + col] =
                        pair.params.truncation_horizon(TRUNCATION_REL_TOL);
                }
            }
        }
        QuadEngine {
            ws,
            resolved,
            k_dim,
            n: ws.layout.n_total(),
            horizon: ws.events.horizon(),
            trunc,
        }
    }

    /// Inner predictor of component `k` at `t` (before activation), plus the
    /// gradient of the inner predictor when requested.
    fn inner_at(&self, k: usize, t: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
        let x = t / self.horizon;
        let g_x = self.resolved.g_at(x)?;
        let mut excitation = 0.0;
        for l in 0..self.k_dim {
            let Some(pair) = self.resolved.pair(k, l) else {
                continue;
            };
            let times = self.ws.events.component(l);
            let horizon = self.trunc[k * self.k_dim + l];
            let lo = times.partition_point(|&u| u < t - horizon);
            let hi = times.partition_point(|&u| u < t);
            for &tj in &times[lo..hi] {
                let u = t - tj;
                excitation += pair.params.eval(u);
                if let Some(gr) = grad.as_deref_mut() {
                    let partials = pair.params.grad(u);
                    for &(coord, slot, chain) in &pair.dfree {
                        gr[coord] += g_x * chain * partials[slot];
                    }
                }
            }
        }
        if let Some(gr) = grad.as_deref_mut() {
            // baseline
            match self.ws.spec.baseline {
                Baseline::Constant => gr[k] += 1.0,
                Baseline::Bernstein { degree } => {
                    let basis = bernstein::bernstein_eval(degree, x)?;
                    for (j, b) in basis.iter().enumerate() {
                        gr[j] += b;
                    }
                }
            }
            // reproduction weights (empty for fixed reproduction rates)
            if let Reproduction::Bernstein { degree, .. } = self.ws.spec.reproduction {
                let basis = bernstein::bernstein_eval(degree, x)?;
                let base = self.ws.layout.varpi_range().start;
                for (i, b) in basis.iter().enumerate() {
                    gr[base + i] += b * excitation;
                }
            }
        }
        Ok(self.resolved.baseline_at(k, x)? + g_x * excitation)
    }

    /// Intensity and its gradient through the activation.
    fn lambda_at(&self, k: usize, t: f64, grad: Option<&mut [f64]>) -> Result<f64> {
        let act = self.ws.spec.activation;
        match grad {
            None => Ok(act.value(self.inner_at(k, t, None)?)),
            Some(gr) => {
                let inner = self.inner_at(k, t, Some(gr))?;
                let slope = act.derivative(inner);
                for g in gr.iter_mut() {
                    *g *= slope;
                }
                Ok(act.value(inner))
            }
        }
    }

    /// Longest chunk over which order-16 quadrature resolves the integrand.
    fn max_step(&self) -> f64 {
        let mut h: f64 = self.horizon;
        for pair in (0..self.k_dim * self.k_dim)
            .filter_map(|i| self.resolved.pair(i / self.k_dim, i % self.k_dim))
        {
            let scale = match pair.params {
                crate::kernels::KernelParams::Exponential { beta, .. } => 4.0 / beta,
                crate::kernels::KernelParams::PowerLaw { gamma, .. } => 4.0 * gamma + 1.0,
                crate::kernels::KernelParams::Gaussian { beta, .. } => 2.0 / beta.sqrt(),
            };
            h = h.min(scale);
        }
        if let Reproduction::Sinusoidal { frequency, .. } = self.ws.spec.reproduction {
            h = h.min(self.horizon / (1.0 + frequency.abs()));
        }
        h.max(self.horizon * 1e-9)
    }

    /// Integrate `lambda_k` (slot 0) and optionally its gradient (slots 1..)
    /// over `[a, b]` with one refinement pass per chunk and bounded bisection
    /// on disagreement.
    fn integrate_interval(
        &self,
        k: usize,
        a: f64,
        b: f64,
        out: &mut [f64],
        with_grad: bool,
        max_step: f64,
    ) -> Result<()> {
        let mut chunk_start = a;
        while chunk_start < b {
            let chunk_end = (chunk_start + max_step).min(b);
            self.integrate_chunk(k, chunk_start, chunk_end, out, with_grad, 0)?;
            chunk_start = chunk_end;
        }
        Ok(())
    }

    fn gl16_pass(
        &self,
        k: usize,
        a: f64,
        b: f64,
        out: &mut [f64],
        with_grad: bool,
        scratch: &mut [f64],
    ) -> Result<f64> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut value = 0.0;
        for (xi, wi) in GL16_X.iter().zip(GL16_W) {
            let t = mid + half * xi;
            let w = half * wi;
            if with_grad {
                scratch.fill(0.0);
                let lambda = self.lambda_at(k, t, Some(scratch))?;
                value += w * lambda;
                for (o, s) in out[1..].iter_mut().zip(scratch.iter()) {
                    *o += w * s;
                }
            } else {
                value += w * self.lambda_at(k, t, None)?;
            }
        }
        out[0] += value;
        Ok(value)
    }

    fn integrate_chunk(
        &self,
        k: usize,
        a: f64,
        b: f64,
        out: &mut [f64],
        with_grad: bool,
        depth: u32,
    ) -> Result<()> {
        let mut scratch = vec![0.0; if with_grad { self.n } else { 0 }];
        let mut coarse = vec![0.0; out.len()];
        let coarse_val = self.gl16_pass(k, a, b, &mut coarse, with_grad, &mut scratch)?;
        let mut refined = vec![0.0; out.len()];
        let mid = 0.5 * (a + b);
        let left = self.gl16_pass(k, a, mid, &mut refined, with_grad, &mut scratch)?;
        let right = self.gl16_pass(k, mid, b, &mut refined, with_grad, &mut scratch)?;
        let disagreement = (coarse_val - (left + right)).abs();
        let tolerance =
            1e-9 * (b - a).max(1e-12) + 1e-12 * (left + right).abs().max(1.0);
        if disagreement > tolerance {
            if depth >= 24 {
                return Err(Error::QuadratureFailure {
                    disagreement,
                    tolerance,
                });
            }
            self.integrate_chunk(k, a, mid, out, with_grad, depth + 1)?;
            self.integrate_chunk(k, mid, b, out, with_grad, depth + 1)?;
            return Ok(());
        }
        for (o, r) in out.iter_mut().zip(&refined) {
            *o += r;
        }
        Ok(())
    }

    fn loglik(&self, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let mut grad = want_grad.then(|| vec![0.0; self.n]);
        let mut value = 0.0;
        let mut scratch = vec![0.0; self.n];
        // event terms
        for &(t, comp, comp_idx) in &self.ws.merged {
            let lambda = if let Some(gr) = grad.as_deref_mut() {
                scratch.fill(0.0);
                let lambda = self.lambda_at(comp, t, Some(&mut scratch))?;
                if lambda > MIN_EVENT_INTENSITY {
                    for (g, s) in gr.iter_mut().zip(&scratch) {
                        *g += s / lambda;
                    }
                }
                lambda
            } else {
                self.lambda_at(comp, t, None)?
            };
            if lambda <= MIN_EVENT_INTENSITY {
                return Err(Error::NonPositiveIntensityAtEvent {
                    component: comp,
                    index: comp_idx,
                });
            }
            value += lambda.ln();
        }
        // compensator terms over merged inter-event intervals
        let max_step = self.max_step();
        let slots = if want_grad { 1 + self.n } else { 1 };
        let mut acc = vec![0.0; slots];
        for k in 0..self.k_dim {
            let mut prev = 0.0;
            for &(t, _, _) in &self.ws.merged {
                if t > prev {
                    self.integrate_interval(k, prev, t, &mut acc, want_grad, max_step)?;
                    prev = t;
                }
            }
            if self.horizon > prev {
                self.integrate_interval(k, prev, self.horizon, &mut acc, want_grad, max_step)?;
            }
        }
        value -= acc[0];
        if let Some(gr) = grad.as_deref_mut() {
            for (g, a) in gr.iter_mut().zip(&acc[1..]) {
                *g -= a;
            }
        }
        Ok((value, grad))
    }

    fn compensator(&self, component: usize) -> Result<Compensator> {
        let max_step = self.max_step();
        let mut acc = [0.0];
        let mut prev = 0.0;
        let mut last_mark = 0.0;
        let mut increments = Vec::new();
        for &(t, comp, _) in &self.ws.merged {
            if t > prev {
                self.integrate_interval(component, prev, t, &mut acc, false, max_step)?;
                prev = t;
            }
            if comp == component {
                increments.push(acc[0] - last_mark);
                last_mark = acc[0];
            }
        }
        if self.horizon > prev {
            self.integrate_interval(component, prev, self.horizon, &mut acc, false, max_step)?;
        }
        Ok(Compensator {
            total: acc[0],
            increments,
        })
    }

    fn information(&self) -> Result<DMatrix<f64>> {
        let mut info = DMatrix::zeros(self.n, self.n);
        let max_step = self.max_step();
        let mut grad = vec![0.0; self.n];
        for k in 0..self.k_dim {
            let mut prev = 0.0;
            let mut intervals: Vec<(f64, f64)> = Vec::new();
            for &(t, _, _) in &self.ws.merged {
                if t > prev {
                    intervals.push((prev, t));
                    prev = t;
                }
            }
            if self.horizon > prev {
                intervals.push((prev, self.horizon));
            }
            for (a, b) in intervals {
                let mut chunk_start = a;
                while chunk_start < b {
                    let chunk_end = (chunk_start + max_step).min(b);
                    let half = 0.5 * (chunk_end - chunk_start);
                    let mid = 0.5 * (chunk_start + chunk_end);
                    for (xi, wi) in GL16_X.iter().zip(GL16_W) {
                        let t = mid + half * xi;
                        grad.fill(0.0);
                        let lambda = self.lambda_at(k, t, Some(&mut grad))?;
                        if lambda > MIN_EVENT_INTENSITY {
                            rank_one_update(&mut info, &grad, half * wi / lambda);
                        }
                    }
                    chunk_start = chunk_end;
                }
            }
        }
        info /= self.horizon;
        symmetrize(&mut info);
        Ok(info)
    }
}
