//! Command-line driver: simulation, fitting, testing, Monte Carlo
//! experiments, and order-flow session analysis.

mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use lshawkes::error::Error;
use lshawkes::estimate::{default_bounds, mle_fit, standard_errors, FitOptions};
use lshawkes::events::{EventSequence, SequenceMeta};
use lshawkes::experiments::{
    self, GRecoveryConfig, LobBatchConfig, NullDistConfig, PowerCurveConfig, SessionManifest,
};
use lshawkes::lrt;
use lshawkes::rng::RngStream;
use lshawkes::simulate::{thinning_simulate, SimConfig};

const THREADS_ENV: &str = "LSHAWKES_THREADS";

#[derive(Parser)]
#[command(
    name = "lshawkes",
    about = "Locally stationary Hawkes processes: simulate, fit, and test time invariance of the reproduction rate",
    version
)]
struct Cli {
    /// Worker threads for Monte Carlo layers (default: LSHAWKES_THREADS or
    /// all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory by thinning and write the event CSV.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of the model on an event CSV.
    Fit(FitArgs),
    /// Likelihood-ratio test for a time-constant reproduction rate.
    Test(FitArgs),
    /// Monte Carlo experiment suites.
    #[command(subcommand)]
    Exp(ExpCommand),
    /// Limit-order-book session tooling.
    #[command(subcommand)]
    Lob(LobCommand),
}

#[derive(Subcommand)]
enum ExpCommand {
    /// Distribution of the statistic under the constant-rate null.
    NullDist(ExpArgs),
    /// Rejection rate along a grid of sinusoidal alternatives.
    Power(ExpArgs),
    /// Pointwise recovery of the reproduction rate.
    GRecovery(ExpArgs),
}

#[derive(Subcommand)]
enum LobCommand {
    /// Analyze every session listed in a manifest.
    Analyze(LobAnalyzeArgs),
    /// Generate a synthetic session batch and its manifest.
    Synth(LobSynthArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model/truth configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate stream id.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Event CSV produced by `simulate` (with its `.meta.toml` sidecar).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    multistart: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Exit 0 even when some replicates fail.
    #[arg(long)]
    allow_failures: bool,
}

#[derive(Args)]
struct LobAnalyzeArgs {
    /// Session manifest (TOML listing per-session CSV paths and close
    /// offsets).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    allow_failures: bool,
}

#[derive(Args)]
struct LobSynthArgs {
    #[arg(long, default_value_t = 21)]
    sessions: usize,
    /// Simulate under a constant reproduction rate instead of the
    /// time-varying truth.
    #[arg(long)]
    constant_g: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    init_threads(cli.threads);
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args, false),
        Command::Test(args) => fit(args, true),
        Command::Exp(exp) => match exp {
            ExpCommand::NullDist(args) => exp_null_dist(args),
            ExpCommand::Power(args) => exp_power(args),
            ExpCommand::GRecovery(args) => exp_g_recovery(args),
        },
        Command::Lob(lob) => match lob {
            LobCommand::Analyze(args) => lob_analyze(args),
            LobCommand::Synth(args) => lob_synth(args),
        },
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let (spec, theta) = match (&cfg.model, &cfg.truth) {
        // bare invocation: unit baseline, decay 2, constant unit
        // reproduction rate
        (None, None) => experiments::presets::null_sim(),
        (model, truth) => {
            let section = model.clone().unwrap_or_default();
            let sinusoid = truth.as_ref().and_then(|t| t.sinusoidal);
            let spec = section.build(sinusoid)?;
            let truth = truth
                .as_ref()
                .context("a [truth] section is required to simulate this model")?;
            let theta = truth.theta(&spec)?;
            (spec, theta)
        }
    };
    let horizon = args.horizon.unwrap_or(1000.0);
    let sim = SimConfig::new(
        spec,
        theta,
        horizon,
        RngStream::new(args.seed, args.stream),
    );
    let events = thinning_simulate(&sim).map_err(anyhow_err)?;
    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("events.csv");
    let mut buf = Vec::new();
    events.write_csv(&mut buf).map_err(anyhow_err)?;
    fs::write(&csv_path, buf)?;
    let meta_path = args.out.join("events.meta.toml");
    fs::write(&meta_path, events.meta(Some(args.seed)).to_toml())?;
    experiments::write_manifest(
        &args.out,
        "simulate",
        args.seed,
        &[&csv_path, &meta_path],
    )
    .map_err(anyhow_err)?;
    println!(
        "simulated {} events over horizon {horizon}",
        events.total_events()
    );
    Ok(())
}

fn read_events(path: &Path) -> Result<EventSequence> {
    let meta_path = path.with_extension("meta.toml");
    let meta_text = fs::read_to_string(&meta_path)
        .with_context(|| format!("reading metadata sidecar {}", meta_path.display()))?;
    let meta = SequenceMeta::from_toml(&meta_text).map_err(anyhow_err)?;
    let file = fs::File::open(path)?;
    EventSequence::read_csv(BufReader::new(file), &meta).map_err(anyhow_err)
}

fn fit(args: FitArgs, test: bool) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut model_section = cfg.model.clone().unwrap_or_default();
    if let Some(degree) = args.degree {
        model_section.degree = degree;
    }
    let spec = model_section.build(None)?;
    let events = read_events(&args.events)?;
    let bounds = default_bounds(&spec, &events).map_err(anyhow_err)?;
    let mut opts = FitOptions::new(RngStream::new(args.seed, 0));
    if let Some(ms) = args.multistart {
        opts.multistart = ms;
    }
    fs::create_dir_all(&args.out)?;
    if test {
        let report = lrt::lrs(&spec, &events, &bounds, &opts).map_err(anyhow_err)?;
        let path = args.out.join("test_report.toml");
        fs::write(&path, report.to_toml())?;
        experiments::write_manifest(&args.out, "test", args.seed, &[&path])
            .map_err(anyhow_err)?;
        println!(
            "lambda = {:.4}, k_hat = {}, p_raw = {:.4}, p_corrected = {:.4}",
            report.lambda, report.k_hat, report.p_raw, report.p_corrected
        );
    } else {
        let fit = mle_fit(&spec, &events, &bounds, &opts).map_err(anyhow_err)?;
        let se = standard_errors(&fit, events.horizon()).ok();
        let path = args.out.join("fit.toml");
        fs::write(&path, fit.to_toml(se.as_deref()))?;
        experiments::write_manifest(&args.out, "fit", args.seed, &[&path])
            .map_err(anyhow_err)?;
        println!(
            "loglik = {:.4}, converged = {}, eta = {:?}",
            fit.loglik_value, fit.converged, fit.theta_hat.eta
        );
    }
    Ok(())
}

fn exp_null_dist(args: ExpArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut null_cfg = NullDistConfig::default();
    if let Some(section) = &cfg.null_dist {
        section.apply(&mut null_cfg);
    }
    if let Some(seed) = args.seed {
        null_cfg.seed = seed;
    }
    if let Some(replicates) = args.replicates {
        null_cfg.replicates = replicates;
    }
    if let Some(degree) = args.degree {
        null_cfg.degree = degree;
    }
    if let Some(horizon) = args.horizon {
        null_cfg.horizon = horizon;
    }
    let summary = experiments::run_null_dist(&null_cfg, Some(&args.out)).map_err(anyhow_err)?;
    println!(
        "{} replicates ({} failed): ks = {:.4}, frac(p < 0.05) = {:.4}",
        summary.replicates, summary.failures, summary.ks_distance, summary.fraction_below_005
    );
    if summary.failures > 0 && !args.allow_failures {
        bail!("{} replicates failed", summary.failures);
    }
    Ok(())
}

fn exp_power(args: ExpArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut power_cfg = PowerCurveConfig::default();
    if let Some(section) = &cfg.power {
        section.apply(&mut power_cfg);
    }
    if let Some(seed) = args.seed {
        power_cfg.seed = seed;
    }
    if let Some(replicates) = args.replicates {
        power_cfg.replicates = replicates;
    }
    if let Some(degree) = args.degree {
        power_cfg.degree = degree;
    }
    if let Some(horizon) = args.horizon {
        power_cfg.horizon = horizon;
    }
    let rows = experiments::run_power(&power_cfg, Some(&args.out)).map_err(anyhow_err)?;
    for row in rows {
        println!(
            "alpha0 = {:.2}: power = {:.3} +- {:.3} ({} / {})",
            row.alpha0, row.power, row.se, row.rejections, row.replicates
        );
    }
    Ok(())
}

fn exp_g_recovery(args: ExpArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut g_cfg = GRecoveryConfig::default();
    if let Some(section) = &cfg.g_recovery {
        section.apply(&mut g_cfg);
    }
    if let Some(seed) = args.seed {
        g_cfg.seed = seed;
    }
    if let Some(replicates) = args.replicates {
        g_cfg.replicates = replicates;
    }
    if let Some(degree) = args.degree {
        g_cfg.degree = degree;
    }
    if let Some(horizon) = args.horizon {
        g_cfg.horizon = horizon;
    }
    let outcome = experiments::run_g_recovery(&g_cfg, Some(&args.out)).map_err(anyhow_err)?;
    println!(
        "{} fits ({} failed): max median error on [0.1, 0.9] = {:.4}",
        outcome.estimates.len(),
        outcome.failures,
        outcome.max_median_error(0.1, 0.9)
    );
    if outcome.failures > 0 && !args.allow_failures {
        bail!("{} replicates failed", outcome.failures);
    }
    Ok(())
}

fn lob_analyze(args: LobAnalyzeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut batch_cfg = LobBatchConfig::default();
    if let Some(section) = &cfg.lob {
        section.apply(&mut batch_cfg);
    }
    if let Some(seed) = args.seed {
        batch_cfg.seed = seed;
    }
    let manifest_text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let mut manifest = SessionManifest::from_toml(&manifest_text).map_err(anyhow_err)?;
    // session paths are relative to the manifest location
    if let Some(base) = args.manifest.parent() {
        for session in &mut manifest.sessions {
            if session.path.is_relative() {
                session.path = base.join(&session.path);
            }
        }
    }
    let summary =
        experiments::run_lob_analyze(&manifest, &batch_cfg, Some(&args.out)).map_err(anyhow_err)?;
    println!(
        "{} sessions: {} rejections, {} failures",
        summary.sessions.len(),
        summary.rejections,
        summary.failures
    );
    if summary.failures > 0 && !args.allow_failures {
        bail!("{} sessions failed", summary.failures);
    }
    Ok(())
}

fn lob_synth(args: LobSynthArgs) -> Result<()> {
    let manifest = experiments::generate_synthetic_lob_batch(
        &args.out,
        args.sessions,
        args.constant_g,
        args.seed,
    )
    .map_err(anyhow_err)?;
    println!(
        "wrote {} sessions and manifest under {}",
        manifest.sessions.len(),
        args.out.display()
    );
    Ok(())
}

fn anyhow_err(e: Error) -> anyhow::Error {
    anyhow::anyhow!(e)
}
