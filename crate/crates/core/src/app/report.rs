//! Report files for one asset's run directory.
//!
//! | file | contents |
//! |---|---|
//! | `iteration_log.csv` | `iter,target,atr_multiplier,atr_period`, one row per evaluation |
//! | `summary.json` | best params, `max_profit`, `seed`, `train_profit`, `test_profit` |
//! | `metrics_default_train.csv`, `metrics_optimized_train.csv` | `Metric,Value` tables on the train slice |
//! | `metrics_default_test.csv`, `metrics_optimized_test.csv` | same on the held-out test slice |
//! | `comparison.csv` | default vs optimized max profit, one row per slice |
//! | `equity.csv` | `date,slice,default,optimized` balances |
//! | `equity_train.svg`, `equity_test.svg`, `convergence.svg`, `search_space.svg` | plots |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot::{line_chart, scatter_chart, Series};
use super::{write_comparison_csv, AppError, BacktestRun, OptimizeOutcome};
use crate::bayes_opt::OptResult;
use crate::market_data::BarSeries;

pub const ITERATION_LOG: &str = "iteration_log.csv";
pub const SUMMARY: &str = "summary.json";
pub const METRICS_DEFAULT_TRAIN: &str = "metrics_default_train.csv";
pub const METRICS_OPTIMIZED_TRAIN: &str = "metrics_optimized_train.csv";
pub const METRICS_DEFAULT_TEST: &str = "metrics_default_test.csv";
pub const METRICS_OPTIMIZED_TEST: &str = "metrics_optimized_test.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const EQUITY: &str = "equity.csv";
pub const EQUITY_TRAIN_PLOT: &str = "equity_train.svg";
pub const EQUITY_TEST_PLOT: &str = "equity_test.svg";
pub const CONVERGENCE_PLOT: &str = "convergence.svg";
pub const SEARCH_SPACE_PLOT: &str = "search_space.svg";

/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub symbol: String,
    pub atr_period: i64,
    pub atr_multiplier: i64,
    /// Best objective value found by the optimizer (train slice).
    pub max_profit: f64,
    pub seed: u64,
    pub train_profit: f64,
    pub test_profit: f64,
    pub default_train_profit: f64,
    pub default_test_profit: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

pub(crate) fn safe_dir_name(symbol: &str) -> String {
    symbol
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '^') { c } else { '_' })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io { path: path.to_path_buf(), source }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<(), AppError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    files.push(path);
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), AppError>) -> Result<Vec<u8>, AppError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn metrics_bytes(run: &BacktestRun) -> Result<Vec<u8>, AppError> {
    csv_bytes(|buf| Ok(run.metrics.write_csv(buf)?))
}

fn equity_rows(wtr: &mut csv::Writer<&mut Vec<u8>>, slice: &str, series: &BarSeries, default: &BacktestRun, best: &BacktestRun) -> csv::Result<()> {
    for (i, bar) in series.bars().iter().enumerate() {
        wtr.write_record([
            bar.date.format("%Y-%m-%d").to_string(),
            slice.to_string(),
            default.curve.balance[i].to_string(),
            best.curve.balance[i].to_string(),
        ])?;
    }
    Ok(())
}

/// Writes every report file for one run into `dir`. Preconditions are checked
/// before anything touches the filesystem.
pub fn emit_reports(outcome: &OptimizeOutcome, dir: &Path) -> Result<ReportFiles, AppError> {
    if outcome.opt.history.is_empty() {
        return Err(AppError::EmptyResults("optimization history is empty".into()));
    }
    let log = csv_bytes(|buf| Ok(outcome.opt.write_iteration_log(buf)?))?;
    let summary = RunSummary {
        symbol: outcome.symbol.clone(),
        atr_period: outcome.opt.best_params.period,
        atr_multiplier: outcome.opt.best_params.multiplier,
        max_profit: outcome.opt.best_target,
        seed: outcome.opt.seed,
        train_profit: outcome.train_best.metrics.max_profit,
        test_profit: outcome.test_best.metrics.max_profit,
        default_train_profit: outcome.train_default.metrics.max_profit,
        default_test_profit: outcome.test_default.metrics.max_profit,
        evaluations: outcome.opt.history.len(),
    };
    let mut summary_json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    summary_json.push(b'\n');
    let comparison = csv_bytes(|buf| Ok(write_comparison_csv(&outcome.comparisons(), buf).map_err(crate::backtest::BacktestError::from)?))?;
    let equity = csv_bytes(|buf| {
        let mut wtr = csv::Writer::from_writer(buf);
        let run = |wtr: &mut csv::Writer<&mut Vec<u8>>| -> csv::Result<()> {
            wtr.write_record(["date", "slice", "default", "optimized"])?;
            equity_rows(wtr, "train", &outcome.train, &outcome.train_default, &outcome.train_best)?;
            equity_rows(wtr, "test", &outcome.test, &outcome.test_default, &outcome.test_best)?;
            wtr.flush()?;
            Ok(())
        };
        run(&mut wtr).map_err(crate::backtest::BacktestError::from)?;
        Ok(())
    })?;
    let outputs = [
        (ITERATION_LOG, log),
        (SUMMARY, summary_json),
        (METRICS_DEFAULT_TRAIN, metrics_bytes(&outcome.train_default)?),
        (METRICS_OPTIMIZED_TRAIN, metrics_bytes(&outcome.train_best)?),
        (METRICS_DEFAULT_TEST, metrics_bytes(&outcome.test_default)?),
        (METRICS_OPTIMIZED_TEST, metrics_bytes(&outcome.test_best)?),
        (COMPARISON, comparison),
        (EQUITY, equity),
    ];

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for (name, bytes) in &outputs {
        write_file(dir, name, bytes, &mut files)?;
    }
    files.extend(render_plots(dir)?);
    Ok(ReportFiles { dir: dir.to_path_buf(), files })
}

struct EquityRow {
    slice: String,
    default: f64,
    optimized: f64,
}

fn read_equity(path: &Path) -> Result<Vec<EquityRow>, AppError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| AppError::EmptyResults(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::EmptyResults(format!("{}: {e}", path.display())))?;
        let num = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok());
        match (rec.get(1), num(2), num(3)) {
            (Some(slice), Some(default), Some(optimized)) => {
                rows.push(EquityRow { slice: slice.to_string(), default, optimized })
            }
            _ => return Err(AppError::EmptyResults(format!("{}: malformed row", path.display()))),
        }
    }
    Ok(rows)
}

/// Renders the SVG plots from the CSVs already in `dir`.
pub fn render_plots(dir: &Path) -> Result<Vec<PathBuf>, AppError> {
    let log_path = dir.join(ITERATION_LOG);
    let log = fs::File::open(&log_path).map_err(io_err(&log_path))?;
    let opt = OptResult::read_iteration_log(log, 0)?;
    let equity = read_equity(&dir.join(EQUITY))?;

    let mut plots: Vec<(String, String)> = Vec::new();
    for (slice, name) in [("train", EQUITY_TRAIN_PLOT), ("test", EQUITY_TEST_PLOT)] {
        let rows: Vec<&EquityRow> = equity.iter().filter(|r| r.slice == slice).collect();
        let pts = |f: fn(&EquityRow) -> f64| rows.iter().enumerate().map(|(i, r)| (i as f64, f(r))).collect();
        plots.push((
            name.to_string(),
            line_chart(
                &format!("Equity curve ({slice} slice)"),
                "bar",
                "balance",
                &[
                    Series { name: "default", color: "#d62728", points: pts(|r| r.default) },
                    Series { name: "optimized", color: "#1f77b4", points: pts(|r| r.optimized) },
                ],
            ),
        ));
    }
    let best: Vec<(f64, f64)> = opt.running_best().iter().enumerate().map(|(i, b)| ((i + 1) as f64, *b)).collect();
    let each: Vec<(f64, f64)> = opt.history.iter().map(|r| (r.iter as f64, r.target)).collect();
    plots.push((
        CONVERGENCE_PLOT.to_string(),
        line_chart(
            "Optimizer convergence",
            "evaluation",
            "max profit",
            &[
                Series { name: "target", color: "#999999", points: each },
                Series { name: "best so far", color: "#1f77b4", points: best },
            ],
        ),
    ));
    let pts: Vec<(f64, f64, f64)> = opt.history.iter().map(|r| (r.raw.period, r.raw.multiplier, r.target)).collect();
    plots.push((
        SEARCH_SPACE_PLOT.to_string(),
        scatter_chart("Evaluated parameters", "atr_period", "atr_multiplier", &pts),
    ));

    let mut files = Vec::new();
    for (name, svg) in plots {
        write_file(dir, &name, svg.as_bytes(), &mut files)?;
    }
    Ok(files)
}

/// Output of the `backtest` command: `metrics.csv`, `metrics.json`,
/// `signals.csv`, `equity.csv` (`date,balance`) and `equity.svg`.
pub fn write_backtest_outputs(run: &BacktestRun, series: &BarSeries, dir: &Path) -> Result<Vec<PathBuf>, AppError> {
    let metrics = metrics_bytes(run)?;
    let mut metrics_json = serde_json::to_vec_pretty(&run.metrics).expect("metrics serialize");
    metrics_json.push(b'\n');
    let signals = csv_bytes(|buf| Ok(run.positions.write_signal_log(series, buf).map_err(crate::backtest::BacktestError::from)?))?;
    let equity = csv_bytes(|buf| {
        let mut wtr = csv::Writer::from_writer(buf);
        let run_rows = |wtr: &mut csv::Writer<&mut Vec<u8>>| -> csv::Result<()> {
            wtr.write_record(["date", "balance"])?;
            for (bar, b) in series.bars().iter().zip(&run.curve.balance) {
                wtr.write_record([bar.date.format("%Y-%m-%d").to_string(), b.to_string()])?;
            }
            wtr.flush()?;
            Ok(())
        };
        run_rows(&mut wtr).map_err(crate::backtest::BacktestError::from)?;
        Ok(())
    })?;
    let points = run.curve.balance.iter().enumerate().map(|(i, b)| (i as f64, *b)).collect();
    let svg = line_chart(
        &format!(
            "{} equity (period {}, multiplier {})",
            series.symbol(),
            run.params.period(),
            run.params.multiplier()
        ),
        "bar",
        "balance",
        &[Series { name: "balance", color: "#1f77b4", points }],
    );

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for (name, bytes) in [
        ("metrics.csv", metrics),
        ("metrics.json", metrics_json),
        ("signals.csv", signals),
        ("equity.csv", equity),
        ("equity.svg", svg.into_bytes()),
    ] {
        write_file(dir, name, &bytes, &mut files)?;
    }
    Ok(files)
}
