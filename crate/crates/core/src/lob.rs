//! Limit-order-book event ingestion and the four-dimensional order-flow
//! model.
//!
//! Sessions arrive as `timestamp,side,kind` CSV. Limit and market orders on
//! each side form the components `(L_ask, L_bid, M_ask, M_bid)`; cancels are
//! counted and dropped. The interaction matrix is tied by symmetry between
//! sides and carries hard structural zeros:
//!
//! ```text
//!          La  Lb  Ma  Mb
//!   La   [  a   b   c   0 ]
//!   Lb   [  b   a   0   c ]
//!   Ma   [  d   0   e   0 ]
//!   Mb   [  0   d   0   e ]
//! ```
//!
//! with one shared decay, a shared degree-4 polynomial baseline, and a
//! degree-4 reproduction rate normalized by pinning its first weight.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::events::EventSequence;
use crate::kernels::{spectral_radius, KernelFamily};
use crate::model::{Activation, Baseline, Entry, KernelSpec, ModelSpec, Reproduction};
use crate::params::ParamVector;

pub const COMPONENT_NAMES: [&str; 4] = ["limit_ask", "limit_bid", "market_ask", "market_bid"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ask,
    Bid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Limit,
    Market,
    Cancel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobEvent {
    /// Seconds from session start; non-decreasing in file order.
    pub timestamp: f64,
    pub side: Side,
    pub kind: Kind,
}

/// Component index of a retained order-flow event.
fn component_of(side: Side, kind: Kind) -> Option<usize> {
    match (kind, side) {
        (Kind::Limit, Side::Ask) => Some(0),
        (Kind::Limit, Side::Bid) => Some(1),
        (Kind::Market, Side::Ask) => Some(2),
        (Kind::Market, Side::Bid) => Some(3),
        (Kind::Cancel, _) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseStats {
    pub rows: usize,
    pub retained: usize,
    pub cancels: usize,
    /// Simultaneous events within one component broken by nanosecond jitter.
    pub jittered: usize,
    /// Events beyond the virtual close, left out of the sample.
    pub after_close: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobParseOptions {
    /// Nominal session length in seconds.
    pub session_length: f64,
    /// Horizon cut before the nominal end (the virtual close).
    pub close_offset: f64,
}

impl LobParseOptions {
    pub fn horizon(&self) -> f64 {
        self.session_length - self.close_offset
    }
}

/// Parse one session of `timestamp,side,kind` rows into a four-component
/// event sequence on `[0, session_length - close_offset]`.
pub fn parse_lob_csv<R: BufRead>(
    r: R,
    opts: &LobParseOptions,
) -> Result<(EventSequence, ParseStats)> {
    if !(opts.horizon() > 0.0) {
        return Err(Error::domain("virtual close must leave a positive horizon"));
    }
    let mut stats = ParseStats::default();
    let mut components: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let mut prev_ts = f64::NEG_INFINITY;
    let horizon = opts.horizon();
    for (line_no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line_no == 0 {
            if line != "timestamp,side,kind" {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `timestamp,side,kind`, got {line:?}"),
                });
            }
            continue;
        }
        let lineno = line_no + 1;
        let mut fields = line.split(',');
        let (Some(ts), Some(side), Some(kind), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line: lineno,
                message: "expected three comma-separated fields".into(),
            });
        };
        let timestamp: f64 = ts.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid timestamp {ts:?}"),
        })?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::NegativeTimestamp(lineno));
        }
        if timestamp < prev_ts {
            return Err(Error::Parse {
                line: lineno,
                message: format!("timestamp {timestamp} decreases below {prev_ts}"),
            });
        }
        prev_ts = timestamp;
        let side = match side.trim().to_ascii_lowercase().as_str() {
            "ask" | "a" => Side::Ask,
            "bid" | "b" => Side::Bid,
            other => {
                return Err(Error::UnknownCode {
                    line: lineno,
                    code: other.to_string(),
                })
            }
        };
        let kind = match kind.trim().to_ascii_lowercase().as_str() {
            "limit" | "l" => Kind::Limit,
            "market" | "m" => Kind::Market,
            "cancel" | "c" => Kind::Cancel,
            other => {
                return Err(Error::UnknownCode {
                    line: lineno,
                    code: other.to_string(),
                })
            }
        };
        stats.rows += 1;
        let Some(component) = component_of(side, kind) else {
            stats.cancels += 1;
            continue;
        };
        if timestamp > horizon {
            stats.after_close += 1;
            continue;
        }
        // ties within the component get nanosecond jitter, i-th collision
        // shifted by i nanoseconds
        let mut t = timestamp;
        while components[component].last().is_some_and(|&last| t <= last) {
            t += 1e-9;
            stats.jittered += 1;
        }
        components[component].push(t);
        stats.retained += 1;
    }
    let events = EventSequence::new(horizon, components)?;
    Ok((events, stats))
}

/// Write a four-component sequence back to the session CSV format,
/// interleaving a cancel row after every `cancel_every`-th event when
/// requested (fixture realism for the parser's drop path).
pub fn write_lob_csv<W: Write>(
    events: &EventSequence,
    mut w: W,
    cancel_every: Option<usize>,
) -> Result<()> {
    if events.dimension() != 4 {
        return Err(Error::ShapeMismatch {
            expected: 4,
            got: events.dimension(),
        });
    }
    writeln!(w, "timestamp,side,kind")?;
    let names = [
        ("ask", "limit"),
        ("bid", "limit"),
        ("ask", "market"),
        ("bid", "market"),
    ];
    for (i, (t, comp)) in events.merged().into_iter().enumerate() {
        let (side, kind) = names[comp];
        writeln!(w, "{t},{side},{kind}")?;
        if let Some(every) = cancel_every {
            if every > 0 && (i + 1) % every == 0 {
                let side = if comp % 2 == 0 { "ask" } else { "bid" };
                writeln!(w, "{t},{side},cancel")?;
            }
        }
    }
    Ok(())
}

/// The four-dimensional order-flow model and its session conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFlowSpec {
    pub model: ModelSpec,
    pub session_length: f64,
    /// Initial decay used to seed fits.
    pub beta_init: f64,
}

/// Build the tied K = 4 specification: 5 interaction letters, one shared
/// decay, 5 baseline coefficients, and 4 free reproduction weights behind
/// the pinned normalization. 15 free parameters in total.
pub fn build_orderflow_model(session_length: f64, beta_init: f64) -> Result<OrderFlowSpec> {
    if !(session_length > 0.0) {
        return Err(Error::domain("session length must be positive"));
    }
    use Entry::{Group, Zero};
    let structure = vec![
        vec![Group(0), Group(1), Group(2), Zero],
        vec![Group(1), Group(0), Zero, Group(2)],
        vec![Group(3), Zero, Group(4), Zero],
        vec![Zero, Group(3), Zero, Group(4)],
    ];
    let model = ModelSpec::new(
        4,
        Baseline::Bernstein { degree: 4 },
        KernelSpec {
            family: KernelFamily::Exponential,
            structure,
        },
        Reproduction::Bernstein {
            degree: 4,
            pin_first: true,
        },
        Activation::Identity,
    )?;
    Ok(OrderFlowSpec {
        model,
        session_length,
        beta_init,
    })
}

impl OrderFlowSpec {
    /// Number of coordinates the optimizer actually moves.
    pub fn free_parameters(&self) -> usize {
        let layout = self.model.layout();
        // everything except the pinned normalization weight
        layout.n_total() - 1
    }

    /// Pack an order-flow parameter vector from the natural pieces.
    pub fn theta(
        &self,
        baseline: [f64; 5],
        letters: [f64; 5],
        beta: f64,
        varpi: [f64; 5],
    ) -> ParamVector {
        let mut eta = baseline.to_vec();
        eta.extend_from_slice(&letters);
        eta.push(beta);
        ParamVector::unbounded(eta, varpi.to_vec())
    }
}

/// Estimated endogeneity profile `rho_hat(x) = g(x) * rho(integral matrix)`
/// on a grid of normalized times.
pub fn endogeneity_profile(
    fit: &FitResult,
    spec: &ModelSpec,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let integral = spec.integral_matrix(&fit.theta_hat)?;
    let radius = spectral_radius(&integral)?;
    let resolved = spec.resolve(&fit.theta_hat)?;
    grid.iter()
        .map(|&x| Ok((x, resolved.g_at(x)? * radius)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn opts() -> LobParseOptions {
        LobParseOptions {
            session_length: 100.0,
            close_offset: 10.0,
        }
    }

    #[test]
    fn mixed_rows_parse_and_cancels_drop() {
        let csv = "timestamp,side,kind\n\
                   1.0,ask,limit\n\
                   2.0,bid,limit\n\
                   3.0,ask,market\n\
                   4.0,bid,cancel\n";
        let (events, stats) = parse_lob_csv(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(
            events.components().iter().map(Vec::len).collect::<Vec<_>>(),
            vec![1, 1, 1, 0]
        );
        assert_eq!(stats.rows, 4);
        assert_eq!(stats.cancels, 1);
        assert_eq!(stats.retained + stats.cancels + stats.after_close, stats.rows);
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let csv = "timestamp,side,kind\n2.0,ask,limit\n1.0,bid,limit\n";
        assert!(matches!(
            parse_lob_csv(csv.as_bytes(), &opts()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn unknown_side_code_rejected() {
        let csv = "timestamp,side,kind\n1.0,x,limit\n";
        assert!(matches!(
            parse_lob_csv(csv.as_bytes(), &opts()),
            Err(Error::UnknownCode { line: 2, .. })
        ));
    }

    #[test]
    fn negative_timestamp_rejected() {
        let csv = "timestamp,side,kind\n-0.5,ask,limit\n";
        assert!(matches!(
            parse_lob_csv(csv.as_bytes(), &opts()),
            Err(Error::NegativeTimestamp(2))
        ));
    }

    #[test]
    fn ties_within_component_get_jitter() {
        let csv = "timestamp,side,kind\n1.0,ask,limit\n1.0,ask,limit\n1.0,bid,limit\n";
        let (events, stats) = parse_lob_csv(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(stats.jittered, 1);
        let ask = events.component(0);
        assert_eq!(ask.len(), 2);
        assert!(ask[1] > ask[0]);
        assert_abs_diff_eq!(ask[1] - ask[0], 1e-9, epsilon = 1e-12);
        // cross-component tie needs no jitter
        assert_eq!(events.component(1), &[1.0]);
    }

    #[test]
    fn events_after_virtual_close_are_cut() {
        let csv = "timestamp,side,kind\n1.0,ask,limit\n95.0,bid,market\n";
        let (events, stats) = parse_lob_csv(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(stats.after_close, 1);
        assert_eq!(events.total_events(), 1);
        assert_abs_diff_eq!(events.horizon(), 90.0, epsilon = 1e-12);
    }

    #[test]
    fn orderflow_model_has_fifteen_free_parameters() {
        let spec = build_orderflow_model(61_200.0, 0.1).unwrap();
        assert_eq!(spec.free_parameters(), 15);
        let layout = spec.model.layout();
        assert_eq!(layout.n_baseline, 5);
        assert_eq!(layout.n_amplitude, 5);
        assert_eq!(layout.n_shape, 1);
        assert_eq!(layout.n_varpi, 5);
    }

    #[test]
    fn structural_zeros_block_market_cross_excitation() {
        let spec = build_orderflow_model(100.0, 1.0).unwrap();
        let theta = spec.theta([1.0; 5], [0.1, 0.08, 0.05, 0.04, 0.12], 2.0, [1.0; 5]);
        let resolved = spec.model.resolve(&theta).unwrap();
        // market-ask intensity sees nothing from limit-bid or market-bid
        assert!(resolved.pair(2, 1).is_none());
        assert!(resolved.pair(2, 3).is_none());
        // parameter tying is exact within a letter
        let m = spec.model.integral_matrix(&theta).unwrap();
        assert_eq!(m[(0, 0)], m[(1, 1)]);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        assert_eq!(m[(2, 0)], m[(3, 1)]);
    }

    #[test]
    fn constant_g_profile_is_flat_at_radius() {
        let spec = build_orderflow_model(100.0, 1.0).unwrap();
        let theta = spec.theta([1.0; 5], [0.2, 0.1, 0.05, 0.05, 0.15], 2.0, [1.0; 5]);
        let fit = FitResult {
            theta_hat: theta.clone(),
            loglik_value: 0.0,
            gradient_norm: 0.0,
            converged: true,
            observed_info: nalgebra::DMatrix::zeros(16, 16),
            active_bounds: vec![],
        };
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let profile = endogeneity_profile(&fit, &spec.model, &grid).unwrap();
        let radius = spectral_radius(&spec.model.integral_matrix(&theta).unwrap()).unwrap();
        for (_, rho) in profile {
            assert_abs_diff_eq!(rho, radius, epsilon = 1e-10);
            assert!(rho >= 0.0);
        }
    }

    #[test]
    fn csv_round_trip_with_cancels() {
        let events = EventSequence::new(
            90.0,
            vec![vec![1.0, 5.0], vec![2.0], vec![3.0], vec![4.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_lob_csv(&events, &mut buf, Some(2)).unwrap();
        let (back, stats) = parse_lob_csv(buf.as_slice(), &opts()).unwrap();
        assert_eq!(back, events);
        assert_eq!(stats.cancels, 2);
    }
}
