//! Monte Carlo experiment drivers: null calibration, power curves,
//! reproduction-rate recovery, and the order-flow session batch.
//!
//! Every driver keys its replicates by `(seed, replicate index)` streams, so
//! reruns reproduce identical rows and partially completed output files are
//! resumed rather than recomputed: existing rows are kept verbatim and only
//! missing replicates run. All CSV schemas are stable across runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{self, FitOptions};
use crate::events::EventSequence;
use crate::gof;
use crate::lob::{self, LobParseOptions, OrderFlowSpec};
use crate::lrt::{self, PowerConfig};
use crate::model::{ModelSpec, Reproduction};
use crate::params::ParamVector;
use crate::replicates;
use crate::rng::RngStream;
use crate::simulate::{thinning_simulate, SimConfig};

/// Model presets for the simulation studies.
pub mod presets {
    use super::*;

    /// Unit-baseline univariate model with kernel `e^{-2t}` and constant
    /// unit reproduction rate (branching 1/2).
    pub fn null_sim() -> (ModelSpec, ParamVector) {
        let spec = ModelSpec::univariate_raw_exponential(Reproduction::Bernstein {
            degree: 0,
            pin_first: false,
        });
        let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![1.0]);
        (spec, theta)
    }

    /// Same process with the sinusoidal reproduction rate
    /// `g(x) = gamma + alpha0 sin(alpha1 x)`.
    pub fn sinusoidal_sim(gamma: f64, alpha0: f64, alpha1: f64) -> (ModelSpec, ParamVector) {
        let spec = ModelSpec::univariate_raw_exponential(Reproduction::Sinusoidal {
            offset: gamma,
            amplitude: alpha0,
            frequency: alpha1,
        });
        let theta = ParamVector::unbounded(vec![1.0, 2.0], vec![]);
        (spec, theta)
    }

    /// Univariate fitting model with a free degree-`d` reproduction rate.
    pub fn univariate_fit(degree: usize) -> ModelSpec {
        ModelSpec::univariate_raw_exponential(Reproduction::Bernstein {
            degree,
            pin_first: false,
        })
    }

    /// Bivariate exponential model with free amplitudes, cross-excitation
    /// zero under the truth, and the pinned-weight normalization.
    pub fn bivariate_sparse_sim(degree: usize) -> (ModelSpec, ParamVector) {
        let spec = bivariate_fit(degree);
        // [mu1, mu2, a11, a12, a21, a22, beta]
        let eta = vec![1.0, 1.0, 0.5, 0.0, 0.0, 0.5, 2.0];
        let theta = ParamVector::unbounded(eta, vec![1.0; degree + 1]);
        (spec, theta)
    }

    pub fn bivariate_fit(degree: usize) -> ModelSpec {
        use crate::kernels::KernelFamily;
        use crate::model::{Activation, Baseline, Entry, KernelSpec};
        ModelSpec::new(
            2,
            Baseline::Constant,
            KernelSpec {
                family: KernelFamily::Exponential,
                structure: vec![
                    vec![Entry::Group(0), Entry::Group(1)],
                    vec![Entry::Group(2), Entry::Group(3)],
                ],
            },
            Reproduction::Bernstein {
                degree,
                pin_first: true,
            },
            Activation::Identity,
        )
        .expect("valid by construction")
    }

    /// Order-flow truth used by the synthetic session batches. The
    /// endogeneity level is kept high (spectral radius of the letters about
    /// 0.45, reproduction rate swinging 0.75 to 1.75) so a session carries a
    /// clear time-variation signal against the free polynomial baseline.
    pub fn orderflow_truth(constant_g: bool) -> (OrderFlowSpec, ParamVector) {
        let of = lob::build_orderflow_model(2440.0, 2.0).expect("valid by construction");
        let varpi = if constant_g {
            [1.0; 5]
        } else {
            [1.0, 1.45, 1.75, 1.3, 0.75]
        };
        let theta = of.theta(
            [0.6, 1.1, 1.3, 1.0, 0.5],
            [0.28, 0.14, 0.10, 0.10, 0.22],
            2.0,
            varpi,
        );
        (of, theta)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Read a keyed CSV back for resumption: returns raw data lines by their
/// leading integer key. A non-integer key column drops the file (schema
/// drift is treated as a fresh start).
fn read_existing(path: &Path) -> BTreeMap<usize, String> {
    let mut rows = BTreeMap::new();
    let Ok(file) = fs::File::open(path) else {
        return rows;
    };
    for line in BufReader::new(file).lines().skip(1).map_while(|l| l.ok()) {
        let Some((key, _)) = line.split_once(',') else {
            continue;
        };
        let Ok(key) = key.parse::<usize>() else {
            return BTreeMap::new();
        };
        rows.insert(key, line);
    }
    rows
}

/// Index of files produced by one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

pub fn write_manifest(dir: &Path, command: &str, seed: u64, outputs: &[&Path]) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        seed,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(e.to_string()))?;
    write_file(&dir.join("manifest.json"), &json)
}

// ---------------------------------------------------------------------------
// null distribution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NullDistConfig {
    pub horizon: f64,
    pub replicates: usize,
    pub degree: usize,
    pub seed: u64,
    pub multistart: usize,
}

impl Default for NullDistConfig {
    fn default() -> Self {
        NullDistConfig {
            horizon: 2000.0,
            replicates: 500,
            degree: 3,
            seed: 20_317,
            multistart: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NullDistSummary {
    pub replicates: usize,
    pub failures: usize,
    /// Sup distance between the empirical statistic distribution and the
    /// chi-squared CDF with `degree` degrees of freedom.
    pub ks_distance: f64,
    /// Fraction of raw p-values below 0.05.
    pub fraction_below_005: f64,
    pub lambdas: Vec<f64>,
    pub p_raw: Vec<f64>,
}

/// Simulate the constant-rate null model, test each replicate at the given
/// degree, and summarize the statistic's law against its chi-squared limit.
/// With `out_dir`, writes `null_dist.csv`, `null_dist_summary.csv`, and the
/// run manifest; completed replicates found on disk are not recomputed.
pub fn run_null_dist(cfg: &NullDistConfig, out_dir: Option<&Path>) -> Result<NullDistSummary> {
    let csv_path = out_dir.map(|d| d.join("null_dist.csv"));
    let existing = csv_path
        .as_deref()
        .map(read_existing)
        .unwrap_or_default();
    let (sim_spec, sim_theta) = presets::null_sim();
    let fit_spec = presets::univariate_fit(cfg.degree);
    let pending: Vec<usize> = (0..cfg.replicates)
        .filter(|rep| !existing.contains_key(rep))
        .collect();
    let fresh: Vec<(usize, String)> = replicates::run(pending.len(), |slot| {
        let rep = pending[slot];
        let stream = RngStream::replicate(cfg.seed, rep as u64);
        let config = PowerConfig {
            id: "null".into(),
            alpha0: 0.0,
            sim_spec: sim_spec.clone(),
            sim_theta: sim_theta.clone(),
            fit_spec: fit_spec.clone(),
            horizon: cfg.horizon,
        };
        let line = match lrt::run_one_test(&config, stream, cfg.multistart) {
            Ok(report) => format!(
                "{rep},{},{},{},{},false",
                report.lambda, report.p_raw, report.k_hat, report.p_corrected
            ),
            Err(_) => format!("{rep},,,,,true"),
        };
        (rep, line)
    });
    let mut rows = existing;
    rows.extend(fresh);
    let mut lambdas = Vec::new();
    let mut p_raw = Vec::new();
    let mut failures = 0usize;
    for line in rows.values() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 || fields[5] == "true" {
            failures += 1;
            continue;
        }
        lambdas.push(fields[1].parse::<f64>().map_err(|_| Error::Parse {
            line: 0,
            message: "corrupt lambda column".into(),
        })?);
        p_raw.push(fields[2].parse::<f64>().unwrap_or(f64::NAN));
    }
    let ks_distance = gof::ks_statistic(&lambdas, |x| {
        1.0 - lrt::chi2_sf(x.max(0.0), cfg.degree as u32).unwrap_or(1.0)
    });
    let fraction_below_005 = if p_raw.is_empty() {
        0.0
    } else {
        p_raw.iter().filter(|&&p| p < 0.05).count() as f64 / p_raw.len() as f64
    };
    if let Some(dir) = out_dir {
        let mut data = String::from("replicate,lambda,p_raw,k_hat,p_corrected,failed\n");
        for line in rows.values() {
            data.push_str(line);
            data.push('\n');
        }
        let data_path = dir.join("null_dist.csv");
        write_file(&data_path, &data)?;
        let summary_path = dir.join("null_dist_summary.csv");
        write_file(
            &summary_path,
            &format!(
                "replicates,failures,ks_distance,fraction_p_below_005\n{},{},{},{}\n",
                rows.len(),
                failures,
                ks_distance,
                fraction_below_005
            ),
        )?;
        write_manifest(dir, "exp null-dist", cfg.seed, &[&data_path, &summary_path])?;
    }
    Ok(NullDistSummary {
        replicates: rows.len(),
        failures,
        ks_distance,
        fraction_below_005,
        lambdas,
        p_raw,
    })
}

// ---------------------------------------------------------------------------
// power curve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PowerCurveConfig {
    pub horizon: f64,
    pub replicates: usize,
    pub degree: usize,
    pub seed: u64,
    pub multistart: usize,
    /// Sinusoid amplitudes `alpha0`; zero is the null row.
    pub alpha0_grid: Vec<f64>,
    pub gamma: f64,
    pub alpha1: f64,
    pub level: f64,
}

impl Default for PowerCurveConfig {
    fn default() -> Self {
        PowerCurveConfig {
            horizon: 5000.0,
            replicates: 200,
            degree: 3,
            seed: 40_411,
            multistart: 3,
            alpha0_grid: vec![0.0, 0.3, 0.6],
            gamma: 1.0,
            alpha1: 1.0,
            level: 0.05,
        }
    }
}

pub fn power_grid(cfg: &PowerCurveConfig) -> Vec<PowerConfig> {
    cfg.alpha0_grid
        .iter()
        .map(|&alpha0| {
            let (sim_spec, sim_theta) = if alpha0 == 0.0 {
                let (mut spec, theta) = presets::null_sim();
                // constant g = gamma
                spec.reproduction = Reproduction::Bernstein {
                    degree: 0,
                    pin_first: false,
                };
                (spec, ParamVector::unbounded(theta.eta.clone(), vec![cfg.gamma]))
            } else {
                presets::sinusoidal_sim(cfg.gamma, alpha0, cfg.alpha1)
            };
            PowerConfig {
                id: format!("alpha0={alpha0}"),
                alpha0,
                sim_spec,
                sim_theta,
                fit_spec: presets::univariate_fit(cfg.degree),
                horizon: cfg.horizon,
            }
        })
        .collect()
}

/// Rejection rate of the test along the alternative grid. With `out_dir`,
/// writes `power.csv` (rows keyed by config id are resumed) and a manifest.
pub fn run_power(cfg: &PowerCurveConfig, out_dir: Option<&Path>) -> Result<Vec<lrt::PowerRow>> {
    let existing: BTreeMap<String, lrt::PowerRow> = out_dir
        .map(|d| d.join("power.csv"))
        .and_then(|path| fs::read_to_string(path).ok())
        .map(|text| {
            text.lines()
                .skip(1)
                .filter_map(parse_power_row)
                .map(|row| (row.config_id.clone(), row))
                .collect()
        })
        .unwrap_or_default();
    let grid = power_grid(cfg);
    let mut rows = Vec::with_capacity(grid.len());
    for (idx, config) in grid.iter().enumerate() {
        if let Some(row) = existing.get(&config.id) {
            if row.replicates == cfg.replicates {
                rows.push(row.clone());
                continue;
            }
        }
        let computed = lrt::power_experiment(
            std::slice::from_ref(config),
            cfg.level,
            cfg.replicates,
            cfg.seed.wrapping_add(idx as u64 * 0x9e37_79b9),
            cfg.multistart,
        )?
        .remove(0);
        rows.push(computed);
    }
    if let Some(dir) = out_dir {
        let mut data = String::from("config_id,degree,T,alpha0,rejections,replicates,power,se\n");
        for row in &rows {
            data.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.config_id,
                row.degree,
                row.horizon,
                row.alpha0,
                row.rejections,
                row.replicates,
                row.power,
                row.se
            ));
        }
        let data_path = dir.join("power.csv");
        write_file(&data_path, &data)?;
        write_manifest(dir, "exp power", cfg.seed, &[&data_path])?;
    }
    Ok(rows)
}

fn parse_power_row(line: &str) -> Option<lrt::PowerRow> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 8 {
        return None;
    }
    Some(lrt::PowerRow {
        config_id: f[0].to_string(),
        degree: f[1].parse().ok()?,
        horizon: f[2].parse().ok()?,
        alpha0: f[3].parse().ok()?,
        rejections: f[4].parse().ok()?,
        replicates: f[5].parse().ok()?,
        power: f[6].parse().ok()?,
        se: f[7].parse().ok()?,
    })
}

// ---------------------------------------------------------------------------
// reproduction-rate recovery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GRecoveryConfig {
    pub horizon: f64,
    pub replicates: usize,
    pub degree: usize,
    pub seed: u64,
    pub multistart: usize,
    /// Sinusoid truth; amplitude zero simulates the constant-rate null.
    pub gamma: f64,
    pub alpha0: f64,
    pub alpha1: f64,
}

impl Default for GRecoveryConfig {
    fn default() -> Self {
        GRecoveryConfig {
            horizon: 5000.0,
            replicates: 50,
            degree: 3,
            seed: 52_109,
            multistart: 3,
            gamma: 1.0,
            alpha0: 0.6,
            alpha1: 5.0,
        }
    }
}

pub const G_RECOVERY_GRID: usize = 101;

#[derive(Debug, Clone)]
pub struct GRecoveryOutcome {
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub median: Vec<f64>,
    pub estimates: Vec<Vec<f64>>,
    pub failures: usize,
}

impl GRecoveryOutcome {
    /// Largest pointwise median error over normalized times in
    /// `[x_lo, x_hi]`.
    pub fn max_median_error(&self, x_lo: f64, x_hi: f64) -> f64 {
        self.grid
            .iter()
            .zip(self.median.iter().zip(&self.truth))
            .filter(|(x, _)| **x >= x_lo && **x <= x_hi)
            .map(|(_, (m, t))| (m - t).abs())
            .fold(0.0, f64::max)
    }

    pub fn argmax_median(&self) -> f64 {
        argmax(&self.grid, &self.median)
    }

    pub fn argmax_truth(&self) -> f64 {
        argmax(&self.grid, &self.truth)
    }
}

fn argmax(grid: &[f64], values: &[f64]) -> f64 {
    let mut best = (0usize, f64::MIN);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    grid[best.0]
}

/// Fit the polynomial model on replicates of the sinusoidal truth and
/// collect the estimated reproduction rate on a fixed grid. With `out_dir`,
/// writes long-form `g_recovery.csv` (per-replicate rows, then pointwise
/// median rows) and a manifest.
pub fn run_g_recovery(cfg: &GRecoveryConfig, out_dir: Option<&Path>) -> Result<GRecoveryOutcome> {
    let grid: Vec<f64> = (0..G_RECOVERY_GRID)
        .map(|i| i as f64 / (G_RECOVERY_GRID - 1) as f64)
        .collect();
    let (sim_spec, sim_theta) = if cfg.alpha0 == 0.0 {
        presets::null_sim()
    } else {
        presets::sinusoidal_sim(cfg.gamma, cfg.alpha0, cfg.alpha1)
    };
    let truth: Vec<f64> = {
        let resolved = sim_spec.resolve(&sim_theta)?;
        grid.iter()
            .map(|&x| resolved.g_at(x))
            .collect::<Result<_>>()?
    };
    let fit_spec = presets::univariate_fit(cfg.degree);
    let estimates: Vec<Option<Vec<f64>>> = replicates::run(cfg.replicates, |rep| {
        let stream = RngStream::replicate(cfg.seed, rep as u64);
        let sim = SimConfig::new(
            sim_spec.clone(),
            sim_theta.clone(),
            cfg.horizon,
            stream,
        );
        let events = thinning_simulate(&sim).ok()?;
        let bounds = estimate::default_bounds(&fit_spec, &events).ok()?;
        let mut opts = FitOptions::new(stream.substream(2));
        opts.multistart = cfg.multistart;
        let fit = estimate::mle_fit(&fit_spec, &events, &bounds, &opts).ok()?;
        let g_hat: Vec<f64> = grid
            .iter()
            .map(|&x| crate::bernstein::g_eval(&fit.theta_hat.varpi, x).unwrap_or(f64::NAN))
            .collect();
        Some(g_hat)
    });
    let failures = estimates.iter().filter(|e| e.is_none()).count();
    let kept: Vec<Vec<f64>> = estimates.iter().flatten().cloned().collect();
    let mut median = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut column: Vec<f64> = kept.iter().map(|e| e[i]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median.push(if column.is_empty() {
            f64::NAN
        } else {
            column[column.len() / 2]
        });
    }
    if let Some(dir) = out_dir {
        let mut data = String::from("replicate,x,g_hat,g_true\n");
        for (rep, est) in estimates.iter().enumerate() {
            if let Some(est) = est {
                for (i, &x) in grid.iter().enumerate() {
                    data.push_str(&format!("{rep},{x},{},{}\n", est[i], truth[i]));
                }
            }
        }
        for (i, &x) in grid.iter().enumerate() {
            data.push_str(&format!("median,{x},{},{}\n", median[i], truth[i]));
        }
        let data_path = dir.join("g_recovery.csv");
        write_file(&data_path, &data)?;
        write_manifest(dir, "exp g-recovery", cfg.seed, &[&data_path])?;
    }
    Ok(GRecoveryOutcome {
        grid,
        truth,
        median,
        estimates: kept,
        failures,
    })
}

// ---------------------------------------------------------------------------
// order-flow session batch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionEntry {
    pub path: PathBuf,
    pub session_length: f64,
    pub close_offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionManifest {
    pub sessions: Vec<SessionEntry>,
}

impl SessionManifest {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            line: 0,
            message: format!("session manifest: {e}"),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone)]
pub struct LobBatchConfig {
    pub seed: u64,
    pub multistart: usize,
    pub level: f64,
    /// Reject on the corrected p-value (conservative) when true.
    pub use_corrected: bool,
}

impl Default for LobBatchConfig {
    fn default() -> Self {
        LobBatchConfig {
            seed: 61_903,
            multistart: 2,
            level: 0.05,
            use_corrected: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub name: String,
    pub rejected: Option<bool>,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct LobBatchSummary {
    pub sessions: Vec<SessionOutcome>,
    pub rejections: usize,
    pub failures: usize,
}

/// Analyze every session of a manifest: parse, fit the tied order-flow model
/// with and without time dependence, test, and emit per-session reports plus
/// the endogeneity profile. Failures are recorded and the batch continues.
pub fn run_lob_analyze(
    manifest: &SessionManifest,
    cfg: &LobBatchConfig,
    out_dir: Option<&Path>,
) -> Result<LobBatchSummary> {
    let outcomes: Vec<SessionOutcome> = replicates::run(manifest.sessions.len(), |idx| {
        let entry = &manifest.sessions[idx];
        let name = entry
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("session{idx}"));
        match analyze_session(entry, cfg, idx, out_dir) {
            Ok((p_raw, p_corrected)) => {
                let p = if cfg.use_corrected { p_corrected } else { p_raw };
                SessionOutcome {
                    name,
                    rejected: Some(p < cfg.level),
                    p_raw,
                    p_corrected,
                    failed: false,
                }
            }
            Err(_) => SessionOutcome {
                name,
                rejected: None,
                p_raw: f64::NAN,
                p_corrected: f64::NAN,
                failed: true,
            },
        }
    });
    let rejections = outcomes
        .iter()
        .filter(|o| o.rejected == Some(true))
        .count();
    let failures = outcomes.iter().filter(|o| o.failed).count();
    if let Some(dir) = out_dir {
        let mut data = String::from("session,rejected,p_raw,p_corrected,failed\n");
        for o in &outcomes {
            data.push_str(&format!(
                "{},{},{},{},{}\n",
                o.name,
                o.rejected.map_or(String::new(), |r| r.to_string()),
                o.p_raw,
                o.p_corrected,
                o.failed
            ));
        }
        let path = dir.join("lob_batch_summary.csv");
        write_file(&path, &data)?;
        write_manifest(dir, "lob analyze", cfg.seed, &[&path])?;
    }
    Ok(LobBatchSummary {
        sessions: outcomes,
        rejections,
        failures,
    })
}

fn analyze_session(
    entry: &SessionEntry,
    cfg: &LobBatchConfig,
    idx: usize,
    out_dir: Option<&Path>,
) -> Result<(f64, f64)> {
    let file = fs::File::open(&entry.path)?;
    let opts = LobParseOptions {
        session_length: entry.session_length,
        close_offset: entry.close_offset,
    };
    let (events, _stats) = parse_lob_csv_buffered(file, &opts)?;
    let of = lob::build_orderflow_model(entry.session_length, 2.0)?;
    let bounds = estimate::default_bounds(&of.model, &events)?;
    let mut fit_opts = FitOptions::new(RngStream::replicate(cfg.seed, idx as u64));
    fit_opts.multistart = cfg.multistart;
    let report = lrt::lrs(&of.model, &events, &bounds, &fit_opts)?;
    if let Some(dir) = out_dir {
        let name = entry
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("session{idx}"));
        write_file(&dir.join(format!("{name}_report.toml")), &report.to_toml())?;
        let grid: Vec<f64> = (0..G_RECOVERY_GRID)
            .map(|i| i as f64 / (G_RECOVERY_GRID - 1) as f64)
            .collect();
        let profile = lob::endogeneity_profile(&report.fit_full, &of.model, &grid)?;
        let mut csv = String::from("x,rho_hat\n");
        for (x, rho) in profile {
            csv.push_str(&format!("{x},{rho}\n"));
        }
        write_file(&dir.join(format!("{name}_profile.csv")), &csv)?;
    }
    Ok((report.p_raw, report.p_corrected))
}

fn parse_lob_csv_buffered(
    file: fs::File,
    opts: &LobParseOptions,
) -> Result<(EventSequence, lob::ParseStats)> {
    lob::parse_lob_csv(BufReader::new(file), opts)
}

/// Simulate a synthetic session batch under the order-flow model and write
/// the CSVs plus a session manifest; returns the manifest.
pub fn generate_synthetic_lob_batch(
    dir: &Path,
    n_sessions: usize,
    constant_g: bool,
    seed: u64,
) -> Result<SessionManifest> {
    fs::create_dir_all(dir)?;
    let (of, theta) = presets::orderflow_truth(constant_g);
    let close_offset = 40.0;
    let mut sessions = Vec::with_capacity(n_sessions);
    let events_per_session: Vec<EventSequence> = replicates::run(n_sessions, |idx| {
        let sim = SimConfig::new(
            of.model.clone(),
            theta.clone(),
            of.session_length - close_offset,
            RngStream::replicate(seed, idx as u64),
        );
        thinning_simulate(&sim).expect("stable truth simulates")
    });
    for (idx, events) in events_per_session.iter().enumerate() {
        let name = format!("session_{idx:02}.csv");
        let mut buf = Vec::new();
        lob::write_lob_csv(events, &mut buf, Some(25))?;
        fs::write(dir.join(&name), &buf)?;
        // manifest paths are relative to the manifest file itself
        sessions.push(SessionEntry {
            path: PathBuf::from(name),
            session_length: of.session_length,
            close_offset,
        });
    }
    let manifest = SessionManifest { sessions };
    write_file(&dir.join("sessions.toml"), &manifest.to_toml())?;
    let resolved = SessionManifest {
        sessions: manifest
            .sessions
            .iter()
            .map(|s| SessionEntry {
                path: dir.join(&s.path),
                ..s.clone()
            })
            .collect(),
    };
    Ok(resolved)
}
