//! True range, Wilder ATR and the dual-band Supertrend.
//!
//! Warmup layout for a period `p`: `atr` is defined from index `p - 1` (the
//! seed average), the basic bands wherever `atr` is, and the final bands,
//! line and direction from index `p` onward.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::market_data::BarSeries;

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("invalid parameters: period {period} (need >= 2), multiplier {multiplier} (need >= 1)")]
    InvalidParams { period: i64, multiplier: i64 },
    #[error("series has {len} bars, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },
}

/// Integer (period, multiplier) pair for the indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndicatorParams {
    atr_period: usize,
    atr_multiplier: u32,
}

impl IndicatorParams {
    pub const DEFAULT_PERIOD: usize = 15;
    pub const DEFAULT_MULTIPLIER: u32 = 3;

    pub fn new(atr_period: i64, atr_multiplier: i64) -> Result<Self, IndicatorError> {
        if atr_period < 2 || atr_multiplier < 1 || atr_multiplier > u32::MAX as i64 {
            return Err(IndicatorError::InvalidParams { period: atr_period, multiplier: atr_multiplier });
        }
        Ok(IndicatorParams { atr_period: atr_period as usize, atr_multiplier: atr_multiplier as u32 })
    }

    pub fn period(&self) -> usize {
        self.atr_period
    }

    pub fn multiplier(&self) -> u32 {
        self.atr_multiplier
    }
}

impl Default for IndicatorParams {
    fn default() -> Self {
        IndicatorParams { atr_period: Self::DEFAULT_PERIOD, atr_multiplier: Self::DEFAULT_MULTIPLIER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

pub fn true_range(prev_close: Option<f64>, high: f64, low: f64) -> f64 {
    let range = high - low;
    match prev_close {
        None => range,
        Some(pc) => range.max((high - pc).abs()).max((low - pc).abs()),
    }
}

fn true_ranges(series: &BarSeries) -> Vec<f64> {
    let bars = series.bars();
    bars.iter()
        .enumerate()
        .map(|(i, b)| true_range(i.checked_sub(1).map(|j| bars[j].close), b.high, b.low))
        .collect()
}

fn wilder(tr: &[f64], period: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; tr.len()];
    let seed = tr[..period].iter().sum::<f64>() / period as f64;
    out[period - 1] = Some(seed);
    let mut prev = seed;
    let w = (period - 1) as f64;
    for t in period..tr.len() {
        prev = (prev * w + tr[t]) / period as f64;
        out[t] = Some(prev);
    }
    out
}

/// Wilder-smoothed ATR; `None` before index `period - 1`.
pub fn atr(series: &BarSeries, period: usize) -> Result<Vec<Option<f64>>, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidParams { period: 0, multiplier: 1 });
    }
    if series.len() < period {
        return Err(IndicatorError::SeriesTooShort { len: series.len(), required: period });
    }
    Ok(wilder(&true_ranges(series), period))
}

/// Column-oriented indicator output, aligned with the input bars.
#[derive(Debug, Clone, PartialEq)]
pub struct SupertrendSeries {
    pub params: IndicatorParams,
    pub tr: Vec<f64>,
    pub atr: Vec<Option<f64>>,
    pub basic_upper: Vec<Option<f64>>,
    pub basic_lower: Vec<Option<f64>>,
    pub final_upper: Vec<Option<f64>>,
    pub final_lower: Vec<Option<f64>>,
    pub line: Vec<Option<f64>>,
    pub direction: Vec<Option<Direction>>,
}

impl SupertrendSeries {
    pub fn len(&self) -> usize {
        self.tr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tr.is_empty()
    }

    /// First index carrying a direction (equals the ATR period).
    pub fn first_defined(&self) -> usize {
        self.params.period()
    }

    /// Writes `date,tr,atr,basic_upper,basic_lower,final_upper,final_lower,line,direction`.
    pub fn write_debug_csv<W: Write>(&self, series: &BarSeries, writer: W) -> csv::Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "date", "tr", "atr", "basic_upper", "basic_lower", "final_upper", "final_lower", "line", "direction",
        ])?;
        for (t, bar) in series.bars().iter().enumerate().take(self.len()) {
            wtr.write_record([
                bar.date.format("%Y-%m-%d").to_string(),
                self.tr[t].to_string(),
                opt(self.atr[t]),
                opt(self.basic_upper[t]),
                opt(self.basic_lower[t]),
                opt(self.final_upper[t]),
                opt(self.final_lower[t]),
                opt(self.line[t]),
                self.direction[t].map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn supertrend(series: &BarSeries, params: IndicatorParams) -> Result<SupertrendSeries, IndicatorError> {
    let period = params.period();
    let n = series.len();
    if n <= period {
        return Err(IndicatorError::SeriesTooShort { len: n, required: period + 1 });
    }
    let bars = series.bars();
    let mult = params.multiplier() as f64;
    let tr = true_ranges(series);
    let atr = wilder(&tr, period);

    let mut basic_upper = vec![None; n];
    let mut basic_lower = vec![None; n];
    for t in period - 1..n {
        let a = atr[t].expect("atr defined after seed");
        let mid = bars[t].hl2();
        basic_upper[t] = Some(mid + mult * a);
        basic_lower[t] = Some(mid - mult * a);
    }

    let mut final_upper = vec![None; n];
    let mut final_lower = vec![None; n];
    let mut line = vec![None; n];
    let mut direction = vec![None; n];

    // (final_upper, final_lower, direction) carried from the previous bar.
    let mut state: Option<(f64, f64, Direction)> = None;
    for t in period..n {
        let (bu, bl) = (basic_upper[t].unwrap(), basic_lower[t].unwrap());
        let close = bars[t].close;
        let (fu, fl, dir) = match state {
            None => (bu, bl, if close <= bu { Direction::Down } else { Direction::Up }),
            Some((prev_fu, prev_fl, prev_dir)) => {
                let prev_close = bars[t - 1].close;
                let fu = if bu < prev_fu || prev_close > prev_fu { bu } else { prev_fu };
                let fl = if bl > prev_fl || prev_close < prev_fl { bl } else { prev_fl };
                let dir = match prev_dir {
                    Direction::Down if close > prev_fu => Direction::Up,
                    Direction::Up if close < prev_fl => Direction::Down,
                    d => d,
                };
                (fu, fl, dir)
            }
        };
        final_upper[t] = Some(fu);
        final_lower[t] = Some(fl);
        line[t] = Some(if dir == Direction::Up { fl } else { fu });
        direction[t] = Some(dir);
        state = Some((fu, fl, dir));
    }

    Ok(SupertrendSeries { params, tr, atr, basic_upper, basic_lower, final_upper, final_lower, line, direction })
}
