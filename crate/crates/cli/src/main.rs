use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use supertrend_core::app::{
    compare_profits, render_plots, run_backtest, run_optimize, write_backtest_outputs, write_comparison_csv, AppError,
    DataSource, RunConfig, RunSummary,
};
use supertrend_core::backtest::MetricsReport;
use supertrend_core::bayes_opt::{Acquisition, SearchSpace};
use supertrend_core::indicator::IndicatorParams;
use supertrend_core::market_data::{fetch_history, write_csv, FetchConfig, Interval};
use supertrend_core::strategy::PositionMode;

/// Supertrend backtesting and Bayesian parameter tuning.
///
/// `--config <file>` reads `key = value` lines (keys are flag names without the
/// leading dashes) and applies them before the command-line flags, so flags
/// given on the command line win.
#[derive(Debug, Parser)]
#[command(name = "supertrend", version, args_override_self = true)]
struct Cli {
    /// Flat key = value file with default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Backtest one parameter pair and write metrics, signals and an equity plot.
    Backtest(BacktestArgs),
    /// Tune (period, multiplier) on the train slice, then evaluate on the test slice.
    Optimize(OptimizeArgs),
    /// Compare a default-parameter metrics file with an optimization summary.
    Compare(CompareArgs),
    /// Download history into the local cache.
    Fetch(FetchArgs),
    /// Re-render the plots of an optimize run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TradingArgs {
    /// Starting capital.
    #[arg(long, default_value_t = 100.0)]
    capital: f64,
    #[arg(long, default_value_t = 1.0)]
    leverage: f64,
    /// Take short positions on down-trends instead of staying flat.
    #[arg(long)]
    allow_short: bool,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    /// OHLCV CSV file.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = 15, allow_negative_numbers = true)]
    period: i64,
    #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
    multiplier: i64,
    #[command(flatten)]
    trading: TradingArgs,
    /// Output directory [default: supertrend-out/<symbol>/backtest].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Fraction of bars used for training.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 5)]
    n_init: usize,
    #[arg(long, default_value_t = 50)]
    n_iter: usize,
    /// Acquisition function: ei or ucb.
    #[arg(long, default_value = "ei")]
    acq: Acquisition,
    /// Exploration weight for ucb.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "5,30", value_parser = parse_bounds)]
    period_bounds: (f64, f64),
    #[arg(long, default_value = "1,5", value_parser = parse_bounds)]
    mult_bounds: (f64, f64),
    #[command(flatten)]
    trading: TradingArgs,
    /// Output root; files go to <out>/<symbol>/.
    #[arg(long, default_value = "supertrend-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Metrics CSV of the default-parameter backtest.
    #[arg(long = "default")]
    default_metrics: PathBuf,
    /// summary.json of the optimize run.
    #[arg(long)]
    optimized: PathBuf,
    /// Which summary profit to compare against: train or test.
    #[arg(long, default_value = "train", value_parser = ["train", "test"])]
    slice: String,
    /// Write the comparison CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long)]
    symbol: String,
    #[arg(long)]
    start: NaiveDate,
    #[arg(long)]
    end: NaiveDate,
    #[arg(long, default_value = "daily")]
    interval: Interval,
    /// Data endpoint; overrides SUPERTREND_DATA_URL.
    #[arg(long)]
    url: Option<String>,
    /// Cache directory; overrides SUPERTREND_CACHE_DIR.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Also write the fetched range to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(lo)?, num(hi)?))
}

const BOOL_FLAGS: [&str; 1] = ["allow-short"];

/// Turns a config file into flags. Blank lines and `#` comments are skipped.
fn config_args(text: &str) -> Result<Vec<OsString>, String> {
    let mut args = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key == "config" {
            return Err(format!("line {}: config files cannot include other config files", n + 1));
        }
        if BOOL_FLAGS.contains(&key.as_str()) {
            match value {
                "true" | "1" | "yes" => args.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => return Err(format!("line {}: `{other}` is not a boolean", n + 1)),
            }
        } else {
            args.push(format!("--{key}").into());
            args.push(value.into());
        }
    }
    Ok(args)
}

/// Splices the config file's flags in right after the subcommand name, ahead
/// of the user's own flags.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    rest.extend(it.next());
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            config = Some(PathBuf::from(it.next().ok_or("--config needs a file")?));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let extra = config_args(&text)?;
    let at = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map_or(rest.len(), |i| i + 2);
    rest.splice(at..at, extra);
    Ok(rest)
}

struct Failure {
    code: u8,
    message: String,
}

impl From<AppError> for Failure {
    fn from(e: AppError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn data(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn trading_config(config: &mut RunConfig, t: &TradingArgs) -> Result<(), Failure> {
    if !(t.capital.is_finite() && t.capital > 0.0) {
        return Err(usage("--capital must be positive"));
    }
    if !(t.leverage.is_finite() && t.leverage > 0.0) {
        return Err(usage("--leverage must be positive"));
    }
    config.capital = t.capital;
    config.leverage = t.leverage;
    config.mode = if t.allow_short { PositionMode::LongShort } else { PositionMode::LongFlat };
    Ok(())
}

fn backtest(args: BacktestArgs) -> Result<(), Failure> {
    let params = IndicatorParams::new(args.period, args.multiplier).map_err(|e| usage(e.to_string()))?;
    let mut config = RunConfig::new(DataSource::Csv(args.csv));
    trading_config(&mut config, &args.trading)?;
    let series = config.source.load()?;
    let run = run_backtest(&series, params, &config)?;
    let dir = args.out.unwrap_or_else(|| config.output_dir.join(series.symbol()).join("backtest"));
    write_backtest_outputs(&run, &series, &dir)?;
    run.metrics.write_csv(std::io::stdout().lock()).map_err(|e| data(e.to_string()))?;
    log::info!("wrote backtest outputs to {}", dir.display());
    Ok(())
}

fn optimize(args: OptimizeArgs) -> Result<(), Failure> {
    let mut config = RunConfig::new(DataSource::Csv(args.csv));
    trading_config(&mut config, &args.trading)?;
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(usage("--split must lie strictly between 0 and 1"));
    }
    config.split_ratio = args.split;
    config.n_init = args.n_init;
    config.n_iter = args.n_iter;
    config.acquisition = match (args.acq, args.kappa) {
        (Acquisition::UpperConfidenceBound { .. }, Some(kappa)) if kappa.is_finite() && kappa >= 0.0 => {
            Acquisition::UpperConfidenceBound { kappa }
        }
        (_, Some(_)) => return Err(usage("--kappa needs --acq ucb and a non-negative value")),
        (acq, None) => acq,
    };
    config.seed = args.seed;
    config.space = SearchSpace::new(args.period_bounds, args.mult_bounds).map_err(|e| usage(e.to_string()))?;
    config.output_dir = args.out;
    let (outcome, files) = run_optimize(&config)?;
    let summary = fs::read_to_string(files.dir.join("summary.json")).map_err(|e| data(e.to_string()))?;
    print!("{summary}");
    log::info!("best {} on {} evaluations; outputs in {}", outcome.opt.best_params, outcome.opt.history.len(), files.dir.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let read = |p: &Path| fs::read(p).map_err(|e| data(format!("{}: {e}", p.display())));
    let metrics = MetricsReport::read_csv(read(&args.default_metrics)?.as_slice())
        .map_err(|e| data(format!("{}: {e}", args.default_metrics.display())))?;
    let summary: RunSummary = serde_json::from_slice(&read(&args.optimized)?)
        .map_err(|e| data(format!("{}: {e}", args.optimized.display())))?;
    let optimized = if args.slice == "train" { summary.max_profit } else { summary.test_profit };
    let row = compare_profits(&summary.symbol, &args.slice, metrics.max_profit, optimized);
    let mut buf = Vec::new();
    write_comparison_csv(&[row], &mut buf).map_err(|e| data(e.to_string()))?;
    match args.out {
        Some(path) => fs::write(&path, &buf).map_err(|e| data(format!("{}: {e}", path.display())))?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn fetch(args: FetchArgs) -> Result<(), Failure> {
    let mut config = FetchConfig::from_env();
    if let Some(url) = args.url {
        config.base_url = Some(url);
    }
    if let Some(dir) = args.cache_dir {
        config.cache_dir = dir;
    }
    let series = fetch_history(&config, &args.symbol, args.start, args.end, args.interval)
        .map_err(|e| Failure::from(AppError::from(e)))?;
    if let Some(path) = &args.out {
        let file = fs::File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        write_csv(&series, file).map_err(|e| Failure::from(AppError::from(e)))?;
    }
    println!("{}", config.cache_path(&args.symbol, args.interval).display());
    log::info!("{} bars for {}", series.len(), args.symbol);
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    for path in render_plots(&args.run_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Backtest(a) => backtest(a),
        Command::Optimize(a) => optimize(a),
        Command::Compare(a) => compare(a),
        Command::Fetch(a) => fetch(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
