//! Compounded equity simulation and the per-run metric table.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::strategy::{Position, PositionSeries};

pub const DEFAULT_CAPITAL: f64 = 100.0;
pub const DEFAULT_LEVERAGE: f64 = 1.0;
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("balance reached {balance} at bar {bar}")]
    NonPositiveBalance { bar: usize, balance: f64 },
    #[error("capital must be positive, got {0}")]
    InvalidCapital(f64),
    #[error("leverage must be positive, got {0}")]
    InvalidLeverage(f64),
    #[error("{positions} positions but {closes} closes")]
    Misaligned { positions: usize, closes: usize },
    #[error("metrics file: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trade {
    pub side: TradeSide,
    pub entry_index: usize,
    pub exit_index: usize,
    pub entry_price: f64,
    pub exit_price: f64,
    /// Compounded return of the balance over the holding period.
    pub trade_return: f64,
    /// Balance change over the holding period, in currency units.
    pub pnl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TradeSide {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquityCurve {
    pub balance: Vec<f64>,
    pub trades: Vec<Trade>,
    pub capital: f64,
    pub leverage: f64,
}

pub fn simulate(
    positions: &PositionSeries,
    closes: &[f64],
    capital: f64,
    leverage: f64,
) -> Result<EquityCurve, BacktestError> {
    if !(capital > 0.0 && capital.is_finite()) {
        return Err(BacktestError::InvalidCapital(capital));
    }
    if !(leverage > 0.0 && leverage.is_finite()) {
        return Err(BacktestError::InvalidLeverage(leverage));
    }
    let pos = &positions.positions;
    if pos.len() != closes.len() || closes.is_empty() {
        return Err(BacktestError::Misaligned { positions: pos.len(), closes: closes.len() });
    }

    let n = closes.len();
    let mut balance = Vec::with_capacity(n);
    balance.push(capital);
    let mut trades = Vec::new();
    // (side, entry index, balance at entry)
    let mut open: Option<(TradeSide, usize, f64)> = None;
    let close_trade = |open: (TradeSide, usize, f64), exit: usize, exit_balance: f64| Trade {
        side: open.0,
        entry_index: open.1,
        exit_index: exit,
        entry_price: closes[open.1],
        exit_price: closes[exit],
        trade_return: exit_balance / open.2 - 1.0,
        pnl: exit_balance - open.2,
    };

    for t in 0..n {
        if t > 0 {
            let r = closes[t] / closes[t - 1] - 1.0;
            let factor = match pos[t - 1] {
                Position::Flat => 1.0,
                Position::Long => 1.0 + leverage * r,
                Position::Short => 1.0 - leverage * r,
            };
            let b = balance[t - 1] * factor;
            if b <= 0.0 {
                return Err(BacktestError::NonPositiveBalance { bar: t, balance: b });
            }
            balance.push(b);
        }
        let prev = if t == 0 { Position::Flat } else { pos[t - 1] };
        if pos[t] != prev {
            if let Some(o) = open.take() {
                trades.push(close_trade(o, t, balance[t]));
            }
            open = match pos[t] {
                Position::Long => Some((TradeSide::Long, t, balance[t])),
                Position::Short => Some((TradeSide::Short, t, balance[t])),
                Position::Flat => None,
            };
        }
    }
    if let Some(o) = open {
        trades.push(close_trade(o, n - 1, balance[n - 1]));
    }
    Ok(EquityCurve { balance, trades, capital, leverage })
}

/// Gross profit over gross loss of closed trades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfitFactor {
    Finite(f64),
    /// Winners but no losers.
    Infinite,
    /// No trade with a non-zero result.
    Undefined,
}

impl ProfitFactor {
    pub fn from_trades(trades: &[Trade]) -> Self {
        let gross_profit: f64 = trades.iter().map(|t| t.pnl).filter(|p| *p > 0.0).sum();
        let gross_loss: f64 = -trades.iter().map(|t| t.pnl).filter(|p| *p < 0.0).sum::<f64>();
        match (gross_profit > 0.0, gross_loss > 0.0) {
            (_, true) => ProfitFactor::Finite(gross_profit / gross_loss),
            (true, false) => ProfitFactor::Infinite,
            (false, false) => ProfitFactor::Undefined,
        }
    }
}

impl fmt::Display for ProfitFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfitFactor::Finite(v) => write!(f, "{v}"),
            ProfitFactor::Infinite => f.write_str("inf"),
            ProfitFactor::Undefined => Ok(()),
        }
    }
}

impl std::str::FromStr for ProfitFactor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "" => Ok(ProfitFactor::Undefined),
            "inf" => Ok(ProfitFactor::Infinite),
            v => v.parse().map(ProfitFactor::Finite).map_err(|_| format!("bad profit factor `{v}`")),
        }
    }
}

impl Serialize for ProfitFactor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ProfitFactor::Finite(v) => s.serialize_f64(*v),
            ProfitFactor::Infinite => s.serialize_str("inf"),
            ProfitFactor::Undefined => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for ProfitFactor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
            Null(()),
        }
        match Option::<Repr>::deserialize(d)? {
            None | Some(Repr::Null(())) => Ok(ProfitFactor::Undefined),
            Some(Repr::Num(v)) => Ok(ProfitFactor::Finite(v)),
            Some(Repr::Text(t)) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_pl_pct: f64,
    pub overall_pl: f64,
    pub min_balance: f64,
    pub max_balance: f64,
    pub max_drawdown: f64,
    pub max_drawdown_pct: f64,
    pub total_trades: usize,
    pub max_profit: f64,
    pub profit_factor: ProfitFactor,
    pub sharpe: f64,
}

/// Row labels in CSV order.
pub const METRIC_NAMES: [&str; 10] = [
    "Overall P/L %",
    "Overall P/L",
    "Min Balance",
    "Max Balance",
    "Max Drawdown",
    "Max Drawdown %",
    "Total Trades",
    "Max Profit",
    "Profit Factor",
    "Sharpe",
];

impl MetricsReport {
    fn values(&self) -> [String; 10] {
        [
            self.overall_pl_pct.to_string(),
            self.overall_pl.to_string(),
            self.min_balance.to_string(),
            self.max_balance.to_string(),
            self.max_drawdown.to_string(),
            self.max_drawdown_pct.to_string(),
            self.total_trades.to_string(),
            self.max_profit.to_string(),
            self.profit_factor.to_string(),
            self.sharpe.to_string(),
        ]
    }

    /// `Metric,Value` rows, one per metric, values at full precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BacktestError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["Metric", "Value"])?;
        for (name, value) in METRIC_NAMES.iter().zip(self.values()) {
            wtr.write_record([*name, value.as_str()])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, BacktestError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut found: [Option<String>; 10] = Default::default();
        for row in rdr.records() {
            let row = row?;
            let (Some(name), Some(value)) = (row.get(0), row.get(1)) else { continue };
            if let Some(i) = METRIC_NAMES.iter().position(|m| *m == name) {
                found[i] = Some(value.to_string());
            }
        }
        let get = |i: usize| {
            found[i]
                .clone()
                .ok_or_else(|| BacktestError::Parse(format!("missing `{}`", METRIC_NAMES[i])))
        };
        let num = |i: usize| -> Result<f64, BacktestError> {
            let v = get(i)?;
            v.parse().map_err(|_| BacktestError::Parse(format!("bad `{}` value `{v}`", METRIC_NAMES[i])))
        };
        Ok(MetricsReport {
            overall_pl_pct: num(0)?,
            overall_pl: num(1)?,
            min_balance: num(2)?,
            max_balance: num(3)?,
            max_drawdown: num(4)?,
            max_drawdown_pct: num(5)?,
            total_trades: get(6)?.parse().map_err(|_| BacktestError::Parse("bad `Total Trades`".into()))?,
            max_profit: num(7)?,
            profit_factor: get(8)?.parse().map_err(BacktestError::Parse)?,
            sharpe: num(9)?,
        })
    }
}

/// Largest peak-to-later-trough decline: (currency, percent of the peak).
/// Both are <= 0; the percent minimum may come from a different peak than the
/// absolute one.
pub fn max_drawdown(balances: &[f64]) -> (f64, f64) {
    let mut peak = f64::NEG_INFINITY;
    let (mut abs, mut pct) = (0.0f64, 0.0f64);
    for &b in balances {
        peak = peak.max(b);
        abs = abs.min(b - peak);
        pct = pct.min((b - peak) / peak * 100.0);
    }
    (abs, pct)
}

fn sharpe(balance: &[f64]) -> f64 {
    if balance.len() < 3 {
        return 0.0;
    }
    let returns: Vec<f64> = balance.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        0.0
    } else {
        mean / sd * TRADING_DAYS.sqrt()
    }
}

pub fn compute_metrics(curve: &EquityCurve) -> MetricsReport {
    let b = &curve.balance;
    let last = *b.last().expect("equity curve is never empty");
    let min_balance = b.iter().copied().fold(f64::INFINITY, f64::min);
    let max_balance = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (dd, dd_pct) = max_drawdown(b);
    let overall_pl = last - curve.capital;
    MetricsReport {
        overall_pl_pct: overall_pl * (100.0 / curve.capital),
        overall_pl,
        min_balance,
        max_balance,
        max_drawdown: dd,
        max_drawdown_pct: dd_pct,
        total_trades: curve.trades.len(),
        max_profit: max_balance - curve.capital,
        profit_factor: ProfitFactor::from_trades(&curve.trades),
        sharpe: sharpe(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{PositionMode, Signal, SignalKind};
    use proptest::prelude::*;

    fn positions(p: Vec<Position>) -> PositionSeries {
        PositionSeries { positions: p, signals: Vec::<Signal>::new(), mode: PositionMode::LongFlat }
    }

    fn curve(balance: Vec<f64>) -> EquityCurve {
        EquityCurve { balance, trades: vec![], capital: 100.0, leverage: 1.0 }
    }

    #[test]
    fn flat_curve_without_exposure() {
        let c = simulate(&positions(vec![Position::Flat; 5]), &[10.0, 11.0, 9.0, 12.0, 8.0], 100.0, 1.0).unwrap();
        assert_eq!(c.balance, vec![100.0; 5]);
        let m = compute_metrics(&c);
        assert_eq!((m.overall_pl, m.total_trades, m.max_profit), (0.0, 0, 0.0));
        assert_eq!(m.profit_factor, ProfitFactor::Undefined);
        assert_eq!(m.sharpe, 0.0);
    }

    #[test]
    fn single_trade_with_leverage() {
        let p = positions(vec![Position::Long, Position::Flat]);
        let c = simulate(&p, &[100.0, 110.0], 100.0, 1.0).unwrap();
        assert!((c.balance[1] - 110.0).abs() < 1e-12);
        assert_eq!(c.trades.len(), 1);
        assert!((c.trades[0].trade_return - 0.10).abs() < 1e-12);
        let c2 = simulate(&p, &[100.0, 110.0], 100.0, 2.0).unwrap();
        assert!((c2.balance[1] - 120.0).abs() < 1e-12);
    }

    #[test]
    fn open_position_is_force_closed() {
        let p = positions(vec![Position::Flat, Position::Long, Position::Long]);
        let c = simulate(&p, &[10.0, 10.0, 12.0], 100.0, 1.0).unwrap();
        assert_eq!(c.trades.len(), 1);
        assert_eq!((c.trades[0].entry_index, c.trades[0].exit_index), (1, 2));
        assert_eq!(compute_metrics(&c).profit_factor, ProfitFactor::Infinite);
    }

    #[test]
    fn short_side_and_reversal() {
        let p = positions(vec![Position::Short, Position::Long, Position::Flat]);
        let c = simulate(&p, &[100.0, 90.0, 99.0], 100.0, 1.0).unwrap();
        assert!((c.balance[1] - 110.0).abs() < 1e-12);
        assert!((c.balance[2] - 121.0).abs() < 1e-12);
        assert_eq!(c.trades.len(), 2);
        assert_eq!(c.trades[0].side, TradeSide::Short);
        assert_eq!(c.trades[1].side, TradeSide::Long);
    }

    #[test]
    fn leverage_can_wipe_out() {
        let p = positions(vec![Position::Long, Position::Flat]);
        let err = simulate(&p, &[100.0, 40.0], 100.0, 2.0).unwrap_err();
        assert!(matches!(err, BacktestError::NonPositiveBalance { bar: 1, .. }));
        assert!(matches!(simulate(&p, &[1.0, 1.0], 0.0, 1.0), Err(BacktestError::InvalidCapital(_))));
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[100.0]), (0.0, 0.0));
        assert_eq!(max_drawdown(&[100.0, 90.0, 120.0, 60.0]), (-60.0, -50.0));
        let m = compute_metrics(&curve(vec![100.0, 110.0, 99.0, 105.0]));
        assert_eq!(m.max_drawdown, -11.0);
        assert!((m.max_drawdown_pct + 10.0).abs() < 1e-12);
        let m = compute_metrics(&curve(vec![100.0, 101.0, 103.0, 110.0]));
        assert_eq!((m.max_drawdown, m.min_balance), (0.0, 100.0));
    }

    #[test]
    fn profit_factor_cases() {
        let t = |pnl: f64| Trade {
            side: TradeSide::Long,
            entry_index: 0,
            exit_index: 1,
            entry_price: 1.0,
            exit_price: 1.0,
            trade_return: pnl / 100.0,
            pnl,
        };
        assert_eq!(ProfitFactor::from_trades(&[t(6.0), t(-2.0), t(-1.0)]), ProfitFactor::Finite(2.0));
        assert_eq!(ProfitFactor::from_trades(&[t(-2.0)]), ProfitFactor::Finite(0.0));
        assert_eq!(ProfitFactor::from_trades(&[t(2.0)]), ProfitFactor::Infinite);
        assert_eq!(ProfitFactor::from_trades(&[]), ProfitFactor::Undefined);
    }

    #[test]
    fn metrics_csv_layout_and_read_back() {
        let mut m = compute_metrics(&curve(vec![100.0, 110.0, 99.0, 105.0]));
        m.profit_factor = ProfitFactor::Infinite;
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, METRIC_NAMES);
        assert!(text.contains("Profit Factor,inf\n"));
        assert_eq!(MetricsReport::read_csv(buf.as_slice()).unwrap(), m);

        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"profit_factor\":\"inf\""));
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), m);
        m.profit_factor = ProfitFactor::Undefined;
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), m);
    }

    fn brute_drawdown(b: &[f64]) -> (f64, f64) {
        let (mut abs, mut pct) = (0.0f64, 0.0f64);
        for i in 0..b.len() {
            for j in i..b.len() {
                abs = abs.min(b[j] - b[i]);
                pct = pct.min((b[j] - b[i]) / b[i] * 100.0);
            }
        }
        (abs, pct)
    }

    proptest! {
        #[test]
        fn drawdown_matches_quadratic(b in prop::collection::vec(1.0f64..1000.0, 1..40)) {
            prop_assert_eq!(max_drawdown(&b), brute_drawdown(&b));
        }

        #[test]
        fn trades_replay_to_final_balance(
            raw in prop::collection::vec((0.5f64..1.5, 0u8..3), 2..80),
            leverage in prop::sample::select(vec![0.5, 1.0]),
        ) {
            let mut c = 50.0;
            let closes: Vec<f64> = raw.iter().map(|(r, _)| { c *= r; c }).collect();
            let pos: Vec<Position> = raw.iter().map(|(_, p)| match p { 0 => Position::Flat, 1 => Position::Long, _ => Position::Short }).collect();
            let curve = simulate(&positions(pos), &closes, 100.0, leverage).unwrap();
            let replay = curve.trades.iter().fold(100.0, |acc, t| acc * (1.0 + t.trade_return));
            let last = *curve.balance.last().unwrap();
            prop_assert!((replay - last).abs() <= 1e-9 * last);
            let m = compute_metrics(&curve);
            prop_assert_eq!(m.max_profit, m.max_balance - 100.0);
            prop_assert!((m.overall_pl_pct - m.overall_pl).abs() <= 1e-12 * m.overall_pl.abs().max(1.0));
            prop_assert!(m.min_balance <= m.max_balance);
            prop_assert!(m.max_drawdown <= 0.0 && m.max_drawdown_pct <= 0.0);
        }
    }

    #[test]
    fn signal_kinds_do_not_matter_to_simulation() {
        // simulate reads only the per-bar positions.
        let mut p = positions(vec![Position::Flat, Position::Long, Position::Flat]);
        p.signals.push(Signal { bar_index: 1, kind: SignalKind::Buy, price: 1.0 });
        let a = simulate(&p, &[1.0, 1.0, 2.0], 100.0, 1.0).unwrap();
        p.signals.clear();
        assert_eq!(simulate(&p, &[1.0, 1.0, 2.0], 100.0, 1.0).unwrap(), a);
    }
}
