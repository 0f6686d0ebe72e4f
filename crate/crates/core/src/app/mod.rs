//! End-to-end runs: the max-profit objective, optimize-then-backtest on a
//! held-out slice, default-vs-optimized comparison and report files.

mod compare;
mod plot;
mod report;

pub use compare::{compare, compare_profits, write_comparison_csv, ComparisonRow, COMPARISON_HEADER};
pub use report::{emit_reports, render_plots, write_backtest_outputs, ReportFiles, RunSummary};

use std::fmt;
use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::backtest::{
    compute_metrics, simulate, BacktestError, EquityCurve, MetricsReport, DEFAULT_CAPITAL, DEFAULT_LEVERAGE,
};
use crate::bayes_opt::{optimize, Acquisition, BoSettings, IntParams, OptError, OptResult, RawParams, SearchSpace};
use crate::indicator::{supertrend, IndicatorError, IndicatorParams, SupertrendSeries};
use crate::market_data::{
    fetch_history, load_csv, split_train_test, BarSeries, DataError, FetchConfig, Interval, DEFAULT_SPLIT_RATIO,
};
use crate::strategy::{generate_signals, PositionMode, PositionSeries, StrategyError};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{source} (params {params:?})")]
    Indicator { params: Option<IntParams>, source: IndicatorError },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Optimize(#[from] OptError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("nothing to report: {0}")]
    EmptyResults(String),
}

impl AppError {
    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Data(_) | AppError::Io { .. } | AppError::EmptyResults(_) => 2,
            AppError::Indicator { source: IndicatorError::SeriesTooShort { .. }, .. } => 2,
            AppError::Indicator { .. } | AppError::Strategy(_) => 2,
            AppError::Backtest(BacktestError::NonPositiveBalance { .. }) => 3,
            AppError::Backtest(_) => 2,
            AppError::Optimize(OptError::Gp(_)) | AppError::Optimize(OptError::NonFiniteTarget(_)) => 3,
            AppError::Optimize(OptError::Objective { .. }) => 2,
            AppError::Optimize(OptError::InvalidBudget(_) | OptError::InvalidStride) => 1,
            AppError::Optimize(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Fetch { symbol: String, start: NaiveDate, end: NaiveDate, interval: Interval },
}

impl DataSource {
    pub fn load(&self) -> Result<BarSeries, AppError> {
        match self {
            DataSource::Csv(path) => {
                let symbol = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
                Ok(load_csv(path, symbol)?)
            }
            DataSource::Fetch { symbol, start, end, interval } => {
                Ok(fetch_history(&FetchConfig::from_env(), symbol, *start, *end, *interval)?)
            }
        }
    }
}

/// Everything one optimize/backtest run needs. Defaults mirror the reference
/// setup: capital 100, leverage 1, long/flat, default params (15, 3), budget 5 + 50.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub split_ratio: f64,
    pub capital: f64,
    pub leverage: f64,
    pub mode: PositionMode,
    pub default_params: IndicatorParams,
    pub space: SearchSpace,
    pub n_init: usize,
    pub n_iter: usize,
    pub acquisition: Acquisition,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(source: DataSource) -> Self {
        RunConfig {
            source,
            split_ratio: DEFAULT_SPLIT_RATIO,
            capital: DEFAULT_CAPITAL,
            leverage: DEFAULT_LEVERAGE,
            mode: PositionMode::LongFlat,
            default_params: IndicatorParams::default(),
            space: SearchSpace::default(),
            n_init: crate::bayes_opt::DEFAULT_N_INIT,
            n_iter: crate::bayes_opt::DEFAULT_N_ITER,
            acquisition: Acquisition::default(),
            seed: 0,
            output_dir: PathBuf::from("supertrend-out"),
        }
    }

    pub fn bo_settings(&self) -> BoSettings {
        BoSettings { n_init: self.n_init, n_iter: self.n_iter, acquisition: self.acquisition, seed: self.seed }
    }
}

/// One parameter pair pushed through indicator, strategy and accounting.
#[derive(Debug, Clone)]
pub struct BacktestRun {
    pub params: IndicatorParams,
    pub supertrend: SupertrendSeries,
    pub positions: PositionSeries,
    pub curve: EquityCurve,
    pub metrics: MetricsReport,
}

pub fn run_backtest(series: &BarSeries, params: IndicatorParams, config: &RunConfig) -> Result<BacktestRun, AppError> {
    let ip = IntParams::new(params.period() as i64, params.multiplier() as i64);
    let st = supertrend(series, params).map_err(|source| AppError::Indicator { params: Some(ip), source })?;
    let closes = series.closes();
    let positions = generate_signals(&st, &closes, config.mode)?;
    let curve = simulate(&positions, &closes, config.capital, config.leverage)?;
    let metrics = compute_metrics(&curve);
    Ok(BacktestRun { params, supertrend: st, positions, curve, metrics })
}

fn indicator_params(p: IntParams) -> Result<IndicatorParams, AppError> {
    IndicatorParams::new(p.period, p.multiplier).map_err(|source| AppError::Indicator { params: Some(p), source })
}

/// Max profit (running peak of the balance minus capital) for the truncated
/// parameters on `series`; the value the optimizer maximizes.
pub fn max_profit_objective(series: &BarSeries, raw: RawParams, config: &RunConfig) -> Result<f64, AppError> {
    let params = indicator_params(raw.truncate())?;
    Ok(run_backtest(series, params, config)?.metrics.max_profit)
}

/// Result of optimizing on the train slice and backtesting on both slices.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub symbol: String,
    pub opt: OptResult,
    pub best_params: IndicatorParams,
    pub train: BarSeries,
    pub test: BarSeries,
    pub train_default: BacktestRun,
    pub train_best: BacktestRun,
    pub test_default: BacktestRun,
    pub test_best: BacktestRun,
}

impl OptimizeOutcome {
    /// Train-slice and test-slice comparison rows, in that order.
    pub fn comparisons(&self) -> [ComparisonRow; 2] {
        [
            compare_profits(&self.symbol, "train", self.train_default.metrics.max_profit, self.opt.best_target),
            compare_profits(&self.symbol, "test", self.test_default.metrics.max_profit, self.test_best.metrics.max_profit),
        ]
    }
}

/// Optimizes `objective` over the config's space, then backtests the default
/// and best parameters on the train and test slices. The objective only ever
/// sees what the caller captured in it; the test slice is touched only after
/// the optimizer returns.
pub fn run_optimize_with<F, E>(series: &BarSeries, config: &RunConfig, objective: F) -> Result<OptimizeOutcome, AppError>
where
    F: FnMut(IntParams) -> Result<f64, E>,
    E: fmt::Display,
{
    let split = split_train_test(series, config.split_ratio)?;
    let opt = optimize(objective, &config.space, &config.bo_settings())?;
    let best_params = indicator_params(opt.best_params)?;
    let train_default = run_backtest(&split.train, config.default_params, config)?;
    let train_best = run_backtest(&split.train, best_params, config)?;
    let test_default = run_backtest(&split.test, config.default_params, config)?;
    let test_best = run_backtest(&split.test, best_params, config)?;
    Ok(OptimizeOutcome {
        symbol: series.symbol().to_string(),
        opt,
        best_params,
        train: split.train,
        test: split.test,
        train_default,
        train_best,
        test_default,
        test_best,
    })
}

/// Bayesian optimization of max profit on the train slice of `series`.
pub fn run_optimize_series(series: &BarSeries, config: &RunConfig) -> Result<OptimizeOutcome, AppError> {
    let train = split_train_test(series, config.split_ratio)?.train;
    run_optimize_with(series, config, |p: IntParams| max_profit_objective(&train, p.as_raw(), config))
}

/// Loads the configured data, optimizes, and writes every report under
/// `<output_dir>/<symbol>/`.
pub fn run_optimize(config: &RunConfig) -> Result<(OptimizeOutcome, ReportFiles), AppError> {
    let series = config.source.load()?;
    let outcome = run_optimize_series(&series, config)?;
    let files = emit_reports(&outcome, &config.output_dir.join(report::safe_dir_name(&outcome.symbol)))?;
    Ok((outcome, files))
}
