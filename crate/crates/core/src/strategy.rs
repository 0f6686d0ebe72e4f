//! Position series from Supertrend direction flips: buy when the close crosses
//! above the line (down -> up), exit (or go short) when it crosses below.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::indicator::{Direction, SupertrendSeries};
use crate::market_data::BarSeries;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("no bars remain after the indicator warmup")]
    EmptyAfterWarmup,
    #[error("indicator has {indicator} bars but {closes} closes were given")]
    Misaligned { indicator: usize, closes: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PositionMode {
    #[default]
    LongFlat,
    LongShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Flat,
    Long,
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Buy,
    Sell,
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Buy => "buy",
            SignalKind::Sell => "sell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signal {
    pub bar_index: usize,
    pub kind: SignalKind,
    /// Close of the signal bar; fills happen there.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionSeries {
    /// Position held at the close of each bar.
    pub positions: Vec<Position>,
    pub signals: Vec<Signal>,
    pub mode: PositionMode,
}

impl PositionSeries {
    /// Rebuilds the per-bar positions from a signal list.
    pub fn replay(signals: &[Signal], len: usize, mode: PositionMode) -> Vec<Position> {
        let mut positions = vec![Position::Flat; len];
        let mut pos = Position::Flat;
        let mut next = signals.iter().peekable();
        for (t, slot) in positions.iter_mut().enumerate() {
            while let Some(s) = next.next_if(|s| s.bar_index == t) {
                pos = match (s.kind, mode) {
                    (SignalKind::Buy, _) => Position::Long,
                    (SignalKind::Sell, PositionMode::LongFlat) => Position::Flat,
                    (SignalKind::Sell, PositionMode::LongShort) => Position::Short,
                };
            }
            *slot = pos;
        }
        positions
    }

    /// Closed round trips, counting a position still open at the last bar.
    pub fn round_trips(&self) -> usize {
        let mut trades = 0;
        let mut prev = Position::Flat;
        for &p in &self.positions {
            if prev != Position::Flat && p != prev {
                trades += 1;
            }
            prev = p;
        }
        trades + usize::from(prev != Position::Flat)
    }

    pub fn write_signal_log<W: Write>(&self, series: &BarSeries, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["date", "kind", "price"])?;
        for s in &self.signals {
            wtr.write_record([
                series.bars()[s.bar_index].date.format("%Y-%m-%d").to_string(),
                s.kind.to_string(),
                s.price.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn generate_signals(
    st: &SupertrendSeries,
    closes: &[f64],
    mode: PositionMode,
) -> Result<PositionSeries, StrategyError> {
    if st.len() != closes.len() {
        return Err(StrategyError::Misaligned { indicator: st.len(), closes: closes.len() });
    }
    let first = st.first_defined();
    if first >= closes.len() {
        return Err(StrategyError::EmptyAfterWarmup);
    }

    let mut positions = vec![Position::Flat; closes.len()];
    let mut signals = Vec::new();
    let mut pos = Position::Flat;
    for t in first + 1..closes.len() {
        let (prev, cur) = (st.direction[t - 1], st.direction[t]);
        let kind = match (prev, cur) {
            (Some(Direction::Down), Some(Direction::Up)) => Some(SignalKind::Buy),
            (Some(Direction::Up), Some(Direction::Down)) => Some(SignalKind::Sell),
            _ => None,
        };
        let next = match (kind, pos, mode) {
            (Some(SignalKind::Buy), Position::Flat | Position::Short, _) => Position::Long,
            (Some(SignalKind::Sell), Position::Long, PositionMode::LongFlat) => Position::Flat,
            (Some(SignalKind::Sell), Position::Long | Position::Flat, PositionMode::LongShort) => Position::Short,
            _ => pos,
        };
        if next != pos {
            signals.push(Signal { bar_index: t, kind: kind.unwrap(), price: closes[t] });
            pos = next;
        }
        positions[t] = pos;
    }
    Ok(PositionSeries { positions, signals, mode })
}
