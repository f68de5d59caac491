//! `sqvar`: simulate, estimate and analyse simplex quantile VARs from the shell.

mod commands;
mod config;
mod error;

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sqvar::select::LambdaSpec;

use crate::config::{DgpKind, RunConfig};
use crate::error::{io_err, CliError, Result};

#[derive(Parser)]
#[command(name = "sqvar", version, about = "Non-crossing quantile vector autoregression")]
struct Cli {
    /// TOML or JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory receiving config.json, fits/, tables/ and logs/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log filter, e.g. `info` or `sqvar=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a panel from one of the simulation designs.
    Simulate(SimulateArgs),
    /// Fit every equation with BIC-selected SCAD penalty.
    Estimate(EstimateArgs),
    /// Generalized impulse responses to a quantile shock.
    Irf(IrfArgs),
    /// Deterministic forecast under a rank scenario.
    Scenario(ScenarioArgs),
    /// Marginal quantile-regression screening of lagged predictors.
    Screen(ScreenArgs),
    /// Run a Monte-Carlo manifest, or summarize stored records, into tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Panel CSV, one column per series.
    #[arg(long)]
    data: Option<PathBuf>,

    /// The first CSV row holds data, not series names.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    dgp: Option<DgpKind>,
    #[arg(long)]
    b: Option<u32>,
    /// Number of observations kept.
    #[arg(long = "t", visible_alias = "T")]
    t: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, short = 'p')]
    lag_order: Option<usize>,
    /// Inner knots of the cubic I-spline basis.
    #[arg(long)]
    inner_knots: Option<usize>,
    /// Number of quantile levels in the check-loss sum.
    #[arg(long)]
    levels: Option<usize>,
    /// Explicit penalty levels; `--lambda 0` fits without penalty.
    #[arg(long, value_delimiter = ',', conflicts_with = "c_lambda")]
    lambda: Option<Vec<f64>>,
    /// Multipliers c of c ln T / sqrt T.
    #[arg(long, value_delimiter = ',')]
    c_lambda: Option<Vec<f64>>,
    #[arg(long)]
    bound_margin: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Also fit the largest penalty from the empty model.
    #[arg(long)]
    collapsed_candidate: bool,
    /// Levels at which coefficient curves and crossings are reported.
    #[arg(long, value_delimiter = ',')]
    eval_taus: Option<Vec<f64>>,
}

#[derive(Args)]
struct IrfArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON or estimate run directory.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Shocked series (1-based).
    #[arg(long)]
    shocked: Option<usize>,
    #[arg(long)]
    tau_star: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    n_sim: Option<usize>,
    /// Independent draws for the shocked and baseline branches.
    #[arg(long)]
    independent_draws: bool,
    /// Clamp simulated states to the model bounds.
    #[arg(long)]
    clamp: bool,
    /// Fixed copula equicorrelation instead of the rank-based estimate.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Rank path CSV: one row per series, one column per horizon.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Baseline rank path; the median throughout when omitted.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Response series (1-based).
    #[arg(long)]
    equation: Option<usize>,
    #[arg(long, short = 'p')]
    lag_order: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Keep predictors whose statistic reaches this value.
    #[arg(long, conflicts_with = "top_k")]
    nu: Option<f64>,
    /// Keep the k predictors with the largest statistic.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, conflicts_with = "records")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_data(cfg: &mut RunConfig, a: DataArgs) {
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.no_header {
        cfg.has_header = false;
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Simulate,
    Estimate,
    Irf,
    Scenario,
    Screen,
    Report,
}

impl Kind {
    fn of(c: &Command) -> Self {
        match c {
            Command::Simulate(_) => Kind::Simulate,
            Command::Estimate(_) => Kind::Estimate,
            Command::Irf(_) => Kind::Irf,
            Command::Scenario(_) => Kind::Scenario,
            Command::Screen(_) => Kind::Screen,
            Command::Report(_) => Kind::Report,
        }
    }
}

/// Overlay command-line flags on the file configuration.
fn resolve(cli: Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    set(&mut cfg.seed, cli.seed);
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match cli.command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            set(&mut s.dgp, a.dgp);
            set(&mut s.b, a.b);
            set(&mut s.t, a.t);
            set(&mut s.burn_in, a.burn_in);
        }
        Command::Estimate(a) => {
            apply_data(&mut cfg, a.data);
            let e = &mut cfg.estimation;
            set(&mut e.lag_order, a.lag_order);
            set(&mut e.inner_knots, a.inner_knots);
            set(&mut e.levels, a.levels);
            if let Some(g) = a.lambda {
                e.lambda = LambdaSpec::Grid(g);
            }
            if let Some(c) = a.c_lambda {
                e.lambda = LambdaSpec::Multipliers(c);
            }
            set(&mut e.bound_margin, a.bound_margin);
            set(&mut e.solver.tol, a.tol);
            set(&mut e.solver.max_iter, a.max_iter);
            set(&mut e.solver.max_outer, a.max_outer);
            if a.collapsed_candidate {
                e.solver.collapsed_candidate = true;
            }
            set(&mut cfg.eval_taus, a.eval_taus);
        }
        Command::Irf(a) => {
            apply_data(&mut cfg, a.data);
            let c = &mut cfg.irf;
            if a.fit.is_some() {
                c.fit = a.fit;
            }
            set(&mut c.shocked, a.shocked);
            set(&mut c.tau_star, a.tau_star);
            set(&mut c.horizon, a.horizon);
            set(&mut c.n_sim, a.n_sim);
            if a.independent_draws {
                c.common_random_numbers = false;
            }
            if a.clamp {
                c.clamp_to_bounds = true;
            }
            if a.kappa.is_some() {
                c.kappa = a.kappa;
            }
        }
        Command::Scenario(a) => {
            apply_data(&mut cfg, a.data);
            let c = &mut cfg.scenario;
            if a.fit.is_some() {
                c.fit = a.fit;
            }
            if a.scenario.is_some() {
                c.scenario = a.scenario;
            }
            if a.baseline.is_some() {
                c.baseline = a.baseline;
            }
        }
        Command::Screen(a) => {
            apply_data(&mut cfg, a.data);
            let s = &mut cfg.screen;
            set(&mut s.equation, a.equation);
            set(&mut s.lag_order, a.lag_order);
            set(&mut s.taus, a.taus);
            // a flag replaces whichever threshold the file chose
            if a.nu.is_some() || a.top_k.is_some() {
                s.nu = a.nu;
                s.top_k = a.top_k;
            }
        }
        Command::Report(a) => {
            let r = &mut cfg.report;
            if a.manifest.is_some() || a.records.is_some() {
                r.manifest = a.manifest;
                r.records = a.records;
            }
        }
    }
    Ok(cfg)
}

/// Log lines go to stderr and to `logs/run.log`.
struct Tee(File);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stderr().flush()?;
        self.0.flush()
    }
}

fn init_logging(filter: &str, run: &commands::RunDir) -> Result<()> {
    let path = run.root.join("logs").join("run.log");
    let file = File::create(&path).map_err(io_err(&path))?;
    env_logger::Builder::new()
        .parse_filters(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .init();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let kind = Kind::of(&cli.command);
    let log_level = cli.log_level.clone();
    let cfg = resolve(cli)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let run = commands::RunDir::create(cfg.out_dir()?)?;
    init_logging(&log_level, &run)?;
    let cfg_path = run.root.join("config.json");
    let text = serde_json::to_string_pretty(&cfg).map_err(sqvar::SqvarError::from)?;
    std::fs::write(&cfg_path, text + "\n").map_err(io_err(&cfg_path))?;
    log::info!("writing to {}", run.root.display());

    match kind {
        Kind::Simulate => commands::simulate(&cfg, &run),
        Kind::Estimate => commands::estimate(&cfg, &run),
        Kind::Irf => commands::irf(&cfg, &run),
        Kind::Scenario => commands::scenario(&cfg, &run),
        Kind::Screen => commands::screen_cmd(&cfg, &run),
        Kind::Report => commands::report(&cfg, &run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
