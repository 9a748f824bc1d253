//! Command-line front end: `simulate`, `backtest` and `estimate`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crown_core::portfolio::{portfolio_weights, ConstraintSpec, Regime, RiskTolerance};
use crown_core::CrownError;
use nalgebra::DVector;

use crate::backtest::{run_backtest, BacktestConfig};
use crate::error::{Error, Result};
use crate::estimate::estimate_window;
use crate::io::load_panels;
use crate::simulation::{run_monte_carlo, MonteCarloConfig, RegimeSetup};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "crown",
    version,
    about = "Constrained large-portfolio weights from a factor model and residual nodewise regression"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo experiment on the calibrated factor model.
    Simulate(SimulateArgs),
    /// Rolling-window out-of-sample evaluation on CSV panels.
    Backtest(BacktestArgs),
    /// Weights from one estimation on CSV panels, printed as `asset,weight`.
    Estimate(EstimateArgs),
}

/// Constraint overrides shared by all commands.
#[derive(Debug, Args, Clone, Default)]
pub struct RegimeArgs {
    /// te, te-eq, te-ineq, weight, unconstrained or short-sale.
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    /// Bound on the restricted active weight 1_R'w_d.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Zero-based indices of the restricted assets.
    #[arg(long, value_delimiter = ',', value_name = "i,j,k")]
    pub restricted: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON Monte Carlo configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Number of assets.
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of periods.
    #[arg(long)]
    pub t: Option<usize>,
    /// TE targets.
    #[arg(long, value_delimiter = ',', value_name = "TE[,TE...]")]
    pub te: Option<Vec<f64>>,
    #[command(flatten)]
    pub regime: RegimeArgs,
    /// Directory for `report.json` and `report.csv`; the CSV goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// JSON backtest configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub returns: PathBuf,
    #[arg(long)]
    pub factors: PathBuf,
    /// Per-date benchmark weights; equal weights when omitted.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// In-sample window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Annualized TE target.
    #[arg(long, value_name = "TE")]
    pub te: Option<f64>,
    /// Proportional trading cost.
    #[arg(long)]
    pub cost: Option<f64>,
    #[command(flatten)]
    pub regime: RegimeArgs,
    /// Directory for `backtest.json` and `summary.csv`; the summary goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub returns: PathBuf,
    #[arg(long)]
    pub factors: PathBuf,
    /// Per-date benchmark weights; the last date is used. Equal weights when omitted.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Per-period TE target, converted to a risk tolerance with the estimated moments.
    #[arg(long, value_name = "TE", conflicts_with = "kappa")]
    pub te: Option<f64>,
    /// Risk tolerance, used as is.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Risk tolerance for the weight-only and unconstrained regimes.
    #[arg(long)]
    pub kappa_w: Option<f64>,
    /// Target restricted weight for the weight-only regime.
    #[arg(long)]
    pub w_x: Option<f64>,
    /// Short-sale floor.
    #[arg(long)]
    pub floor: Option<f64>,
    #[command(flatten)]
    pub regime: RegimeArgs,
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    Regime::from_key(s).ok_or_else(|| {
        let keys: Vec<_> = Regime::ALL.iter().map(|r| r.key()).collect();
        format!("unknown regime '{s}', expected one of {}", keys.join(", "))
    })
}

/// Exit code for an error: configuration and input problems are 3, the rest 1.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Json(_)
        | Error::Parse { .. }
        | Error::DateMisalignment(_)
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::NonStationary(_)
        | Error::InnovationCovariance(_) => EXIT_CONFIG,
        Error::Core(CrownError::InvalidConstraint(_) | CrownError::InvalidPanel(_)) => EXIT_CONFIG,
        Error::Core(_) => EXIT_RUNTIME,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn apply_regime(setup: &mut RegimeSetup, args: &RegimeArgs, p: usize) {
    if let Some(regime) = args.regime {
        *setup = RegimeSetup::standard(regime, p);
    }
    if let Some(omega) = args.omega {
        setup.omega = Some(omega);
    }
    if let Some(restricted) = &args.restricted {
        setup.restricted = restricted.clone();
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => read_json::<MonteCarloConfig>(path)?,
        None => MonteCarloConfig::tracking_error(80, 100, vec![0.1, 0.2, 0.3], 200, 0),
    };
    if let Some(seed) = args.seed {
        config.dgp.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    let resized = args.p.is_some() || args.t.is_some();
    config.dgp.p = args.p.unwrap_or(config.dgp.p);
    config.dgp.t = args.t.unwrap_or(config.dgp.t);
    if let Some(te) = &args.te {
        config.te_levels = te.clone();
    }
    let p = config.dgp.p;
    if args.regime.regime.is_some() {
        config.regimes = vec![RegimeSetup::standard(Regime::TrackingError, p)];
    } else if resized {
        // restricted sets sized for the old p may now be out of range
        for setup in &mut config.regimes {
            if setup.restricted.iter().any(|&i| i >= p) {
                *setup = RegimeSetup {
                    restricted: RegimeSetup::standard(setup.regime, p).restricted,
                    ..setup.clone()
                };
            }
        }
    }
    for setup in &mut config.regimes {
        apply_regime(setup, &args.regime, p);
    }
    config.validate()?;
    log::info!(
        "simulating p = {}, T = {}, {} replications, seed {}",
        config.dgp.p,
        config.dgp.t,
        config.reps,
        config.dgp.seed
    );
    let report = run_monte_carlo(&config)?;
    let csv = report.to_csv()?;
    match &args.out {
        Some(dir) => {
            prepare_out(dir)?;
            write_file(&dir.join("report.json"), &report.to_json()?)?;
            write_file(&dir.join("report.csv"), &csv)?;
            log::info!("wrote {}", dir.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn backtest(args: &BacktestArgs) -> Result<()> {
    let panels = load_panels(&args.returns, &args.factors, args.benchmark.as_deref())?;
    let p = panels.returns.n_assets();
    let mut config = match &args.config {
        Some(path) => read_json::<BacktestConfig>(path)?,
        None => BacktestConfig::new(RegimeSetup::standard(Regime::TrackingError, p)),
    };
    apply_regime(&mut config.regime, &args.regime, p);
    if let Some(window) = args.window {
        config.window = window;
    }
    if let Some(te) = args.te {
        config.te_target_annualized = te;
        config.kappa = None;
    }
    if let Some(cost) = args.cost {
        config.cost = cost;
    }
    log::info!(
        "backtest over {} periods, window {}, regime {}",
        panels.returns.n_periods(),
        config.window,
        config.regime.regime.key()
    );
    let report = run_backtest(&panels.returns, &panels.factors, &panels.benchmark, &config)?;
    let summary = report.summary_csv()?;
    match &args.out {
        Some(dir) => {
            prepare_out(dir)?;
            write_file(&dir.join("backtest.json"), &report.to_json()?)?;
            write_file(&dir.join("summary.csv"), &summary)?;
            log::info!("wrote {}", dir.display());
        }
        None => print!("{summary}"),
    }
    Ok(())
}

/// Weights from one estimation, with asset names.
pub fn estimate_weights(args: &EstimateArgs) -> Result<Vec<(String, f64)>> {
    let panels = load_panels(&args.returns, &args.factors, args.benchmark.as_deref())?;
    let p = panels.returns.n_assets();
    let regime = args.regime.regime.unwrap_or(Regime::TrackingError);
    let mut setup = RegimeSetup::standard(regime, p);
    apply_regime(
        &mut setup,
        &RegimeArgs {
            regime: None,
            ..args.regime.clone()
        },
        p,
    );
    if let Some(w_x) = args.w_x {
        setup.w_x = w_x;
    }
    if let Some(floor) = args.floor {
        setup.floor = floor;
    }
    setup.kappa_w = args.kappa_w;
    let kappa = match (args.kappa, args.te) {
        (Some(k), _) => RiskTolerance::Given(k),
        (None, Some(te)) => RiskTolerance::TargetTe(te),
        (None, None) if regime.uses_benchmark() => {
            return Err(Error::Config("regime needs --te or --kappa".into()));
        }
        // κ is unused by the weight-only and unconstrained forms when κ_w is given
        (None, None) => RiskTolerance::Given(args.kappa_w.unwrap_or(1.0)),
    };
    let benchmark = DVector::from_iterator(p, panels.benchmark.column(panels.benchmark.ncols() - 1).iter().copied());
    let spec: ConstraintSpec = setup.to_spec(&benchmark, kappa);
    spec.validate(p)?;
    let est = estimate_window(panels.returns.values(), panels.factors.values(), &Default::default())?;
    let spec = spec.resolve_kappa(&est.theta, est.mean(), &est.sigma_y_hat())?;
    let weights = portfolio_weights(&est.theta, est.mean(), &spec)?;
    log::info!(
        "regime {} with kappa {:.6}",
        weights.regime_used.key(),
        weights.kappa_used
    );
    Ok(panels
        .returns
        .assets()
        .iter()
        .cloned()
        .zip(weights.weights.iter().copied())
        .collect())
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let weights = estimate_weights(args)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (asset, w) in weights {
        writeln!(out, "{asset},{w:.12e}").map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Backtest(args) => backtest(args),
        Command::Estimate(args) => estimate(args),
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
