//! Experiment configuration files: one `[model]` section plus flat
//! per-experiment sections. Command-line flags override file values.

use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use lshawkes::experiments::{GRecoveryConfig, LobBatchConfig, NullDistConfig, PowerCurveConfig};
use lshawkes::kernels::KernelFamily;
use lshawkes::model::{Activation, Baseline, Entry, KernelSpec, ModelSpec, Reproduction};
use lshawkes::params::ParamVector;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<ModelSection>,
    pub truth: Option<TruthSection>,
    #[serde(rename = "null-dist")]
    pub null_dist: Option<NullDistSection>,
    pub power: Option<PowerSection>,
    #[serde(rename = "g-recovery")]
    pub g_recovery: Option<GRecoverySection>,
    pub lob: Option<LobSection>,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// `constant` or `bernstein:<degree>`.
    #[serde(default = "default_baseline")]
    pub baseline: String,
    /// `exponential | powerlaw | gaussian`.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    /// K x K entries: `0` or `.` structural zero, `raw` fixed-amplitude
    /// kernel, letters name tied amplitude groups.
    #[serde(default)]
    pub structure: Option<Vec<Vec<String>>>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub pin_first_weight: bool,
    /// `identity` or `softplus:<floor>`.
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_dimension() -> usize {
    1
}
fn default_baseline() -> String {
    "constant".into()
}
fn default_kernel() -> String {
    "exponential".into()
}
fn default_degree() -> usize {
    3
}
fn default_activation() -> String {
    "identity".into()
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dimension: 1,
            baseline: default_baseline(),
            kernel: default_kernel(),
            structure: None,
            degree: default_degree(),
            pin_first_weight: false,
            activation: default_activation(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub varpi: Vec<f64>,
    pub sinusoidal: Option<SinusoidSection>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidSection {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl ModelSection {
    pub fn build(&self, sinusoid: Option<SinusoidSection>) -> Result<ModelSpec> {
        let family = KernelFamily::from_str(&self.kernel)?;
        let structure = match &self.structure {
            Some(rows) => parse_structure(rows, self.dimension)?,
            None => {
                if self.dimension != 1 {
                    bail!("a structure matrix is required when dimension > 1");
                }
                vec![vec![Entry::Raw]]
            }
        };
        let baseline = parse_baseline(&self.baseline)?;
        let activation = parse_activation(&self.activation)?;
        let reproduction = match sinusoid {
            Some(s) => Reproduction::Sinusoidal {
                offset: s.offset,
                amplitude: s.amplitude,
                frequency: s.frequency,
            },
            None => Reproduction::Bernstein {
                degree: self.degree,
                pin_first: self.pin_first_weight,
            },
        };
        Ok(ModelSpec::new(
            self.dimension,
            baseline,
            KernelSpec { family, structure },
            reproduction,
            activation,
        )?)
    }
}

fn parse_baseline(s: &str) -> Result<Baseline> {
    if s == "constant" {
        return Ok(Baseline::Constant);
    }
    if let Some(degree) = s.strip_prefix("bernstein:") {
        return Ok(Baseline::Bernstein {
            degree: degree.parse().context("baseline degree")?,
        });
    }
    bail!("unknown baseline {s:?}; expected `constant` or `bernstein:<degree>`");
}

fn parse_activation(s: &str) -> Result<Activation> {
    if s == "identity" {
        return Ok(Activation::Identity);
    }
    if let Some(floor) = s.strip_prefix("softplus:") {
        return Ok(Activation::Softplus {
            floor: floor.parse().context("softplus floor")?,
        });
    }
    bail!("unknown activation {s:?}; expected `identity` or `softplus:<floor>`");
}

fn parse_structure(rows: &[Vec<String>], dimension: usize) -> Result<Vec<Vec<Entry>>> {
    if rows.len() != dimension || rows.iter().any(|r| r.len() != dimension) {
        bail!("structure must be a {dimension} x {dimension} matrix");
    }
    let mut groups: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(dimension);
    for row in rows {
        let mut entries = Vec::with_capacity(dimension);
        for cell in row {
            let cell = cell.trim();
            let entry = match cell {
                "0" | "." => Entry::Zero,
                "raw" => Entry::Raw,
                label => {
                    let id = match groups.iter().position(|g| g == label) {
                        Some(id) => id,
                        None => {
                            groups.push(label.to_string());
                            groups.len() - 1
                        }
                    };
                    Entry::Group(id)
                }
            };
            entries.push(entry);
        }
        out.push(entries);
    }
    Ok(out)
}

impl TruthSection {
    pub fn theta(&self, spec: &ModelSpec) -> Result<ParamVector> {
        let layout = spec.layout();
        if self.eta.len() != layout.n_eta() {
            bail!(
                "truth eta has {} coordinates, the model needs {}",
                self.eta.len(),
                layout.n_eta()
            );
        }
        if self.varpi.len() != layout.n_varpi {
            bail!(
                "truth varpi has {} weights, the model needs {}",
                self.varpi.len(),
                layout.n_varpi
            );
        }
        Ok(ParamVector::unbounded(
            self.eta.clone(),
            self.varpi.clone(),
        ))
    }
}

macro_rules! override_field {
    ($cfg:expr, $section:expr, $field:ident) => {
        if let Some(v) = $section.$field {
            $cfg.$field = v;
        }
    };
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullDistSection {
    pub horizon: Option<f64>,
    pub replicates: Option<usize>,
    pub degree: Option<usize>,
    pub seed: Option<u64>,
    pub multistart: Option<usize>,
}

impl NullDistSection {
    pub fn apply(&self, cfg: &mut NullDistConfig) {
        override_field!(cfg, self, horizon);
        override_field!(cfg, self, replicates);
        override_field!(cfg, self, degree);
        override_field!(cfg, self, seed);
        override_field!(cfg, self, multistart);
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub horizon: Option<f64>,
    pub replicates: Option<usize>,
    pub degree: Option<usize>,
    pub seed: Option<u64>,
    pub multistart: Option<usize>,
    pub alpha0: Option<Vec<f64>>,
    pub gamma: Option<f64>,
    pub alpha1: Option<f64>,
    pub level: Option<f64>,
}

impl PowerSection {
    pub fn apply(&self, cfg: &mut PowerCurveConfig) {
        override_field!(cfg, self, horizon);
        override_field!(cfg, self, replicates);
        override_field!(cfg, self, degree);
        override_field!(cfg, self, seed);
        override_field!(cfg, self, multistart);
        override_field!(cfg, self, gamma);
        override_field!(cfg, self, alpha1);
        override_field!(cfg, self, level);
        if let Some(grid) = &self.alpha0 {
            cfg.alpha0_grid = grid.clone();
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GRecoverySection {
    pub horizon: Option<f64>,
    pub replicates: Option<usize>,
    pub degree: Option<usize>,
    pub seed: Option<u64>,
    pub multistart: Option<usize>,
    pub gamma: Option<f64>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
}

impl GRecoverySection {
    pub fn apply(&self, cfg: &mut GRecoveryConfig) {
        override_field!(cfg, self, horizon);
        override_field!(cfg, self, replicates);
        override_field!(cfg, self, degree);
        override_field!(cfg, self, seed);
        override_field!(cfg, self, multistart);
        override_field!(cfg, self, gamma);
        override_field!(cfg, self, alpha0);
        override_field!(cfg, self, alpha1);
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LobSection {
    pub seed: Option<u64>,
    pub multistart: Option<usize>,
    pub level: Option<f64>,
    pub use_corrected: Option<bool>,
}

impl LobSection {
    pub fn apply(&self, cfg: &mut LobBatchConfig) {
        override_field!(cfg, self, seed);
        override_field!(cfg, self, multistart);
        override_field!(cfg, self, level);
        override_field!(cfg, self, use_corrected);
    }
}
