//! Observed event sequences on a fixed horizon.
//!
//! An [`EventSequence`] stores, per component, the strictly increasing event
//! times of one realization observed on `[0, horizon]`. Times are kept in
//! absolute units; normalized time `t / horizon` is computed on demand.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate point-process realization.
///
/// Immutable after construction; simultaneous events are allowed across
/// components but rejected within one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    horizon: f64,
    components: Vec<Vec<f64>>,
}

/// Sidecar metadata carried next to the event CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub horizon: f64,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EventSequence {
    pub fn new(horizon: f64, components: Vec<Vec<f64>>) -> Result<Self> {
        let seq = EventSequence {
            horizon,
            components,
        };
        validate_events(&seq)?;
        Ok(seq)
    }

    pub fn empty(horizon: f64, dimension: usize) -> Result<Self> {
        Self::new(horizon, vec![Vec::new(); dimension])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn total_events(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }

    /// All events merged into time order as `(time, component)` pairs.
    /// Ties across components keep component order.
    pub fn merged(&self) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = Vec::with_capacity(self.total_events());
        for (k, times) in self.components.iter().enumerate() {
            all.extend(times.iter().map(|&t| (t, k)));
        }
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all
    }

    /// Write the `component,time` CSV, one row per event, component-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "component,time")?;
        for (k, times) in self.components.iter().enumerate() {
            for t in times {
                writeln!(w, "{k},{t}")?;
            }
        }
        Ok(())
    }

    /// Read a `component,time` CSV produced by [`write_csv`](Self::write_csv).
    /// The horizon and dimension come from the sidecar metadata.
    pub fn read_csv<R: BufRead>(r: R, meta: &SequenceMeta) -> Result<Self> {
        let mut components = vec![Vec::new(); meta.dimension];
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line_no == 0 {
                if line != "component,time" {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("expected header `component,time`, got {line:?}"),
                    });
                }
                continue;
            }
            let parse = |msg: &str| Error::Parse {
                line: line_no + 1,
                message: msg.to_string(),
            };
            let (comp, time) = line.split_once(',').ok_or_else(|| parse("missing comma"))?;
            let comp: usize = comp
                .trim()
                .parse()
                .map_err(|_| parse("invalid component index"))?;
            let time: f64 = time.trim().parse().map_err(|_| parse("invalid time"))?;
            if comp >= meta.dimension {
                return Err(parse("component index out of range"));
            }
            components[comp].push(time);
        }
        Self::new(meta.horizon, components)
    }

    pub fn meta(&self, seed: Option<u64>) -> SequenceMeta {
        SequenceMeta {
            horizon: self.horizon,
            dimension: self.dimension(),
            seed,
        }
    }
}

impl SequenceMeta {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metadata serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            message: format!("metadata: {e}"),
        })
    }
}

/// Check every [`EventSequence`] invariant, reporting the first violation.
pub fn validate_events(events: &EventSequence) -> Result<()> {
    if events.components.is_empty() {
        return Err(Error::EmptyDimension);
    }
    let horizon = events.horizon;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::domain(format!(
            "horizon must be a positive finite real, got {horizon}"
        )));
    }
    for (k, times) in events.components.iter().enumerate() {
        let mut prev = f64::NEG_INFINITY;
        for (i, &t) in times.iter().enumerate() {
            if !(t >= 0.0 && t <= horizon) {
                return Err(Error::OutOfHorizon {
                    component: k,
                    index: i,
                });
            }
            if !(t > prev) {
                return Err(Error::NonMonotoneTimes {
                    component: k,
                    index: i,
                });
            }
            prev = t;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_sequence_passes() {
        let seq = EventSequence::new(2.0, vec![vec![0.5, 1.0, 1.5]]).unwrap();
        assert!(validate_events(&seq).is_ok());
        assert_eq!(seq.total_events(), 3);
    }

    #[test]
    fn decreasing_times_rejected() {
        let seq = EventSequence {
            horizon: 2.0,
            components: vec![vec![1.0, 0.5]],
        };
        assert_eq!(
            validate_events(&seq),
            Err(Error::NonMonotoneTimes {
                component: 0,
                index: 1
            })
        );
    }

    #[test]
    fn out_of_horizon_rejected() {
        let seq = EventSequence {
            horizon: 2.0,
            components: vec![vec![2.5]],
        };
        assert_eq!(
            validate_events(&seq),
            Err(Error::OutOfHorizon {
                component: 0,
                index: 0
            })
        );
    }

    #[test]
    fn zero_components_rejected() {
        let seq = EventSequence {
            horizon: 1.0,
            components: vec![],
        };
        assert_eq!(validate_events(&seq), Err(Error::EmptyDimension));
    }

    #[test]
    fn duplicate_time_within_component_rejected() {
        assert!(EventSequence::new(2.0, vec![vec![1.0, 1.0]]).is_err());
        // the same time in different components is fine
        assert!(EventSequence::new(2.0, vec![vec![1.0], vec![1.0]]).is_ok());
    }

    #[test]
    fn merged_orders_by_time_then_component() {
        let seq = EventSequence::new(3.0, vec![vec![1.0, 2.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(
            seq.merged(),
            vec![(0.5, 1), (1.0, 0), (1.0, 1), (2.5, 0)]
        );
    }

    #[test]
    fn csv_round_trip() {
        let seq = EventSequence::new(2.0, vec![vec![0.25, 1.5], vec![0.75]]).unwrap();
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let meta = seq.meta(Some(9));
        let back = EventSequence::read_csv(buf.as_slice(), &meta).unwrap();
        assert_eq!(seq, back);
        let meta_back = SequenceMeta::from_toml(&meta.to_toml()).unwrap();
        assert_eq!(meta, meta_back);
    }

    #[test]
    fn csv_bad_header_rejected() {
        let meta = SequenceMeta {
            horizon: 1.0,
            dimension: 1,
            seed: None,
        };
        let err = EventSequence::read_csv("time,component\n0,0.5".as_bytes(), &meta);
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }
}
