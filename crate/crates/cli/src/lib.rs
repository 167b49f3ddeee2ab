//! Command-line front end: simulate panels, estimate FNIRVAR, run rolling
//! backtests and the eigenvalue growth study.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fnirvar::dgp::{CompanionScaling, Study};
use fnirvar::factor::OrderChoice;
use fnirvar::nirvar::Choice;
use fnirvar::{FactorOptions, Layout, NirvarOptions};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

/// Environment variable holding the worker-pool size.
pub const THREADS_ENV: &str = "FNIRVAR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fnirvar",
    version,
    about = "Factor-adjusted network VAR: simulation, estimation and backtests"
)]
pub struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate replicate panels from one of the built-in designs.
    Simulate(SimulateArgs),
    /// Fit the factor model and NIRVAR to one panel.
    Estimate(EstimateArgs),
    /// Rolling-window forecasting and trading backtest.
    Backtest(BacktestArgs),
    /// Eigenvalues of the simulated common and idiosyncratic covariances
    /// over a grid of cross-section sizes.
    EigengapStudy(EigengapArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::Backtest(_) => "backtest",
            Command::EigengapStudy(_) => "eigengap-study",
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// Design: network_factor, factor_only or eigengap.
    #[arg(long)]
    pub study: Option<Study>,
    /// Number of series.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of periods kept after burn-in.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Number of replicate panels.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Variance of the loading distribution.
    #[arg(long)]
    pub loading_variance: Option<f64>,
    /// Number of factors.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Number of network blocks.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Companion rescaling: proportional or exact.
    #[arg(long, value_parser = parse_scaling)]
    pub companion_scaling: Option<CompanionScaling>,
}

/// Input panel flags shared by `estimate` and `backtest`.
#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Panel CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// rows-are-series (ids in the first column) or rows-are-time.
    #[arg(long)]
    pub layout: Option<Layout>,
    /// Subtract this series from all others and drop it.
    #[arg(long)]
    pub market_id: Option<String>,
    /// Zero out entries with absolute value above this threshold.
    #[arg(long)]
    pub clip_threshold: Option<f64>,
}

/// Model-order flags shared by `estimate` and `backtest`.
#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Number of factors: integer or `auto`.
    #[arg(long)]
    pub r: Option<String>,
    /// Upper bound for automatic factor selection.
    #[arg(long)]
    pub r_max: Option<usize>,
    /// Factor VAR order: integer or `auto`.
    #[arg(long)]
    pub lf: Option<String>,
    /// Upper bound for automatic lag selection.
    #[arg(long)]
    pub lf_max: Option<usize>,
    /// Embedding dimension: integer or `auto`.
    #[arg(long)]
    pub d: Option<Choice>,
    /// Number of clusters: integer or `auto` (equal to d).
    #[arg(long)]
    pub k: Option<Choice>,
    /// GMM restarts.
    #[arg(long)]
    pub gmm_restarts: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Default)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// fnirvar, factors or factors-lasso.
    #[arg(long)]
    pub predictor: Option<fnirvar::backtest::PredictorKind>,
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Refit every this many steps.
    #[arg(long)]
    pub refit_every: Option<usize>,
    /// Re-estimate cluster labels every this many refits.
    #[arg(long)]
    pub relabel_every: Option<usize>,
    /// equal or value.
    #[arg(long)]
    pub portfolio: Option<fnirvar::backtest::PortfolioKind>,
    /// Dollar-volume panel for value weights.
    #[arg(long)]
    pub volumes: Option<PathBuf>,
    /// Value-weight multiplier on median dollar volume.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Value-weight cap.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Percentage of assets traded, by signal magnitude.
    #[arg(long)]
    pub decile: Option<f64>,
    /// Transaction cost per flip in basis points; repeat for several.
    #[arg(long = "cost-bpts")]
    pub cost_bpts: Vec<f64>,
    #[arg(long)]
    pub periods_per_year: Option<f64>,
    /// Steps summed into one period before computing Sharpe ratios.
    #[arg(long)]
    pub periods_per_day: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct EigengapArgs {
    /// Comma-separated cross-section sizes.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Vec<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Variance of the loading mixture.
    #[arg(long)]
    pub loading_variance: Option<f64>,
}

fn parse_scaling(s: &str) -> Result<CompanionScaling, String> {
    match s {
        "proportional" => Ok(CompanionScaling::Proportional),
        "exact" => Ok(CompanionScaling::Exact),
        other => Err(format!("unknown scaling `{other}` (proportional|exact)")),
    }
}

fn order_choice(current: OrderChoice, value: Option<&str>, max: Option<usize>) -> CliResult<OrderChoice> {
    let current_max = match current {
        OrderChoice::Auto { max } => Some(max),
        OrderChoice::Fixed(_) => None,
    };
    match value {
        Some(v) => {
            let bound = max.or(current_max).unwrap_or(8);
            OrderChoice::parse(v, bound).map_err(CliError::Config)
        }
        None => Ok(match (current, max) {
            (OrderChoice::Auto { .. }, Some(m)) => OrderChoice::Auto { max: m },
            _ => current,
        }),
    }
}

impl ModelArgs {
    pub fn apply(&self, factors: &mut FactorOptions, nirvar: &mut NirvarOptions) -> CliResult<()> {
        factors.factors = order_choice(factors.factors, self.r.as_deref(), self.r_max)?;
        factors.lags = order_choice(factors.lags, self.lf.as_deref(), self.lf_max)?;
        if let Some(d) = self.d {
            nirvar.d = d;
        }
        if let Some(k) = self.k {
            nirvar.k = k;
        }
        if let Some(g) = self.gmm_restarts {
            nirvar.gmm.restarts = g;
        }
        Ok(())
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`], if set.
pub fn init_thread_pool() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    if threads == 0 {
        return Err(CliError::Config(format!("{THREADS_ENV} must be at least 1")));
    }
    // A second initialisation (as in tests) keeps the existing pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut config = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(dir) = &cli.out_dir {
        config.output_dir = Some(dir.clone());
    }
    match &cli.command {
        Command::Simulate(args) => commands::simulate(config, args),
        Command::Estimate(args) => commands::estimate(config, args),
        Command::Backtest(args) => commands::backtest(config, args),
        Command::EigengapStudy(args) => commands::eigengap(config, args),
    }
}
