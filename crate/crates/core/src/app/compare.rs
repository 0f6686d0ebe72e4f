use std::io::Write;
use std::str::FromStr;

use rust_decimal::prelude::{FromPrimitive, ToPrimitive};
use rust_decimal::{Decimal, RoundingStrategy};

use crate::backtest::MetricsReport;
use crate::bayes_opt::OptResult;

pub const COMPARISON_HEADER: [&str; 6] =
    ["symbol", "slice", "max_profit_default", "max_profit_optimized", "improvement", "improvement_pct"];

/// Default-vs-optimized max profit for one asset and data slice.
///
/// Arithmetic is decimal on the shortest round-trip rendering of each input,
/// so 8.6 - 11.96 is exactly -3.36.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub symbol: String,
    pub slice: String,
    pub max_profit_default: Decimal,
    pub max_profit_optimized: Decimal,
    pub improvement: Decimal,
    /// `None` when the default profit is zero.
    pub improvement_pct: Option<Decimal>,
}

fn to_decimal(v: f64) -> Decimal {
    Decimal::from_str(&v.to_string())
        .ok()
        .or_else(|| Decimal::from_f64(v))
        .unwrap_or_default()
}

fn round2(d: Decimal) -> Decimal {
    let mut r = d.round_dp_with_strategy(2, RoundingStrategy::MidpointNearestEven);
    r.rescale(2);
    r
}

impl ComparisonRow {
    /// Percentage rounded half-to-even at 2 places, or "N/A".
    pub fn improvement_pct_display(&self) -> String {
        self.improvement_pct.map_or_else(|| "N/A".to_string(), |p| round2(p).to_string())
    }

    pub fn improvement_f64(&self) -> f64 {
        self.improvement.to_f64().unwrap_or(f64::NAN)
    }

    /// Human-facing row with every number at 2 decimals (half-to-even).
    pub fn rounded_cells(&self) -> [String; 6] {
        [
            self.symbol.clone(),
            self.slice.clone(),
            round2(self.max_profit_default).to_string(),
            round2(self.max_profit_optimized).to_string(),
            round2(self.improvement).to_string(),
            self.improvement_pct_display(),
        ]
    }

    fn cells(&self) -> [String; 6] {
        [
            self.symbol.clone(),
            self.slice.clone(),
            self.max_profit_default.normalize().to_string(),
            self.max_profit_optimized.normalize().to_string(),
            self.improvement.normalize().to_string(),
            self.improvement_pct_display(),
        ]
    }
}

pub fn compare_profits(symbol: &str, slice: &str, default_profit: f64, optimized_profit: f64) -> ComparisonRow {
    let d = to_decimal(default_profit);
    let o = to_decimal(optimized_profit);
    let improvement = o - d;
    let improvement_pct = (!d.is_zero()).then(|| improvement / d * Decimal::ONE_HUNDRED);
    ComparisonRow {
        symbol: symbol.to_string(),
        slice: slice.to_string(),
        max_profit_default: d,
        max_profit_optimized: o,
        improvement,
        improvement_pct,
    }
}

/// Compares a default-parameter backtest with an optimizer's best target;
/// both must come from the same asset and slice.
pub fn compare(symbol: &str, default_report: &MetricsReport, optimized: &OptResult) -> ComparisonRow {
    compare_profits(symbol, "train", default_report.max_profit, optimized.best_target)
}

/// Exact values for profits and improvement; percentage at 2 decimals.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COMPARISON_HEADER)?;
    for r in rows {
        wtr.write_record(r.cells())?;
    }
    wtr.flush()?;
    Ok(())
}
