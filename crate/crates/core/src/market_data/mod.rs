//! OHLCV ingestion: CSV parsing in the Yahoo Finance export layout, gap
//! cleaning, optional min-max scaling and the chronological train/test split.

mod fetch;

pub use fetch::{fetch_history, FetchConfig, Interval};

use std::io::{Read, Write};

use chrono::NaiveDate;
use thiserror::Error;

/// Header written by [`write_csv`]; also the column set [`parse_csv`] understands.
pub const CSV_HEADER: [&str; 7] = ["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("dates not strictly ascending at line {line}")]
    NonMonotonicDates { line: u64 },
    #[error("no data rows")]
    EmptySeries,
    #[error("cleaning dropped every row")]
    AllRowsDropped,
    #[error("price range is degenerate (max == min)")]
    DegenerateRange,
    #[error("series has {len} bars, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },
    #[error("split ratio {0} must lie strictly between 0 and 1 and leave both sides non-empty")]
    InvalidRatio(f64),
    #[error("data endpoint not configured (set SUPERTREND_DATA_URL)")]
    EndpointUnconfigured,
    #[error("start date {start} is not before end date {end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("HTTP request failed with status {0}")]
    HttpFailure(u16),
    #[error("HTTP transport error: {0}")]
    Transport(String),
    #[error("empty response body")]
    EmptyResponse,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One validated OHLCV observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: Option<f64>,
    pub volume: Option<u64>,
}

impl Bar {
    fn check(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err("prices must be finite and positive".into());
        }
        if self.low > self.high {
            return Err(format!("low {} above high {}", self.low, self.high));
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err("open/close outside the high-low range".into());
        }
        Ok(())
    }

    /// Midpoint of the bar's range, `(high + low) / 2`.
    pub fn hl2(&self) -> f64 {
        (self.high + self.low) / 2.0
    }
}

/// A row as read from CSV, before gap handling. Price fields may be absent
/// (`null` or empty in Yahoo exports).
#[derive(Debug, Clone, PartialEq)]
pub struct RawBar {
    pub line: u64,
    pub date: NaiveDate,
    pub open: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub close: Option<f64>,
    pub adj_close: Option<f64>,
    pub volume: Option<u64>,
}

impl RawBar {
    fn complete(&self) -> Option<Bar> {
        Some(Bar {
            date: self.date,
            open: self.open?,
            high: self.high?,
            low: self.low?,
            close: self.close?,
            adj_close: self.adj_close,
            volume: self.volume,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub symbol: String,
    pub rows: Vec<RawBar>,
}

impl From<&BarSeries> for RawSeries {
    fn from(series: &BarSeries) -> Self {
        let rows = series
            .bars
            .iter()
            .enumerate()
            .map(|(i, b)| RawBar {
                line: i as u64 + 2,
                date: b.date,
                open: Some(b.open),
                high: Some(b.high),
                low: Some(b.low),
                close: Some(b.close),
                adj_close: b.adj_close,
                volume: b.volume,
            })
            .collect();
        RawSeries { symbol: series.symbol.clone(), rows }
    }
}

/// Date-ascending, gap-free sequence of bars for one symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    symbol: String,
    bars: Vec<Bar>,
}

impl BarSeries {
    /// Validates ordering and per-bar sanity.
    pub fn new(symbol: impl Into<String>, bars: Vec<Bar>) -> Result<Self> {
        if bars.is_empty() {
            return Err(DataError::EmptySeries);
        }
        for (i, bar) in bars.iter().enumerate() {
            bar.check().map_err(|reason| DataError::MalformedRow {
                line: i as u64 + 2,
                reason,
            })?;
            if i > 0 && bars[i - 1].date >= bar.date {
                return Err(DataError::NonMonotonicDates { line: i as u64 + 2 });
            }
        }
        Ok(BarSeries { symbol: symbol.into(), bars })
    }

    // Scaled series may contain zero prices; ordering still holds.
    fn new_unchecked(symbol: String, bars: Vec<Bar>) -> Self {
        BarSeries { symbol, bars }
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Contiguous sub-range `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.bars.len() {
            return Err(DataError::EmptySeries);
        }
        Ok(BarSeries::new_unchecked(self.symbol.clone(), self.bars[start..end].to_vec()))
    }

    /// Bars with `start <= date <= end`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> Option<Self> {
        let bars: Vec<Bar> = self
            .bars
            .iter()
            .filter(|b| b.date >= start && b.date <= end)
            .cloned()
            .collect();
        (!bars.is_empty()).then(|| BarSeries::new_unchecked(self.symbol.clone(), bars))
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "null" | "NULL" | "NaN" | "nan" | "NA" | "-")
}

fn parse_date(field: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(field, "%Y-%m-%d")
        .ok()
        .or_else(|| field.get(..10).and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok()))
}

/// Reads a Yahoo-style OHLCV CSV. `Date, Open, High, Low, Close` are required,
/// `Adj Close` and `Volume` optional. Missing price cells are kept as gaps for
/// [`clean`]; anything present must parse and respect the high/low envelope.
pub fn parse_csv<R: Read>(reader: R, symbol: &str) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
    };
    let require = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let (date_col, open_col, high_col, low_col, close_col) = (
        require("Date")?,
        require("Open")?,
        require("High")?,
        require("Low")?,
        require("Close")?,
    );
    let adj_col = find("Adj Close");
    let vol_col = find("Volume");

    let mut rows: Vec<RawBar> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let malformed = |reason: String| DataError::MalformedRow { line, reason };
        let cell = |col: usize| record.get(col).unwrap_or("");

        let date = parse_date(cell(date_col))
            .ok_or_else(|| malformed(format!("unparseable date `{}`", cell(date_col))))?;
        let price = |col: usize| -> Result<Option<f64>> {
            let raw = cell(col);
            if is_missing(raw) {
                return Ok(None);
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| malformed(format!("unparseable number `{raw}`")))?;
            if !v.is_finite() || v <= 0.0 {
                return Err(malformed(format!("non-positive price {v}")));
            }
            Ok(Some(v))
        };
        let open = price(open_col)?;
        let high = price(high_col)?;
        let low = price(low_col)?;
        let close = price(close_col)?;
        let adj_close = adj_col.map(price).transpose()?.flatten();
        let volume = match vol_col.map(cell) {
            Some(raw) if !is_missing(raw) => Some(
                raw.parse::<u64>()
                    .ok()
                    .or_else(|| raw.parse::<f64>().ok().filter(|v| *v >= 0.0).map(|v| v as u64))
                    .ok_or_else(|| malformed(format!("bad volume `{raw}`")))?,
            ),
            _ => None,
        };

        let row = RawBar { line, date, open, high, low, close, adj_close, volume };
        if let (Some(h), Some(l)) = (high, low) {
            if l > h {
                return Err(malformed(format!("low {l} above high {h}")));
            }
        }
        if let Some(bar) = row.complete() {
            bar.check().map_err(malformed)?;
        }
        if let Some(prev) = rows.last() {
            if prev.date >= date {
                return Err(DataError::NonMonotonicDates { line });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::EmptySeries);
    }
    Ok(RawSeries { symbol: symbol.to_string(), rows })
}

/// Writes a series in the same layout [`parse_csv`] reads.
pub fn write_csv<W: Write>(series: &BarSeries, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for b in &series.bars {
        wtr.write_record([
            b.date.format("%Y-%m-%d").to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.adj_close.map(|v| v.to_string()).unwrap_or_default(),
            b.volume.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FillPolicy {
    #[default]
    ForwardFill,
    DropRow,
}

/// Removes price gaps. Forward fill copies each missing field from the
/// previous cleaned bar and drops leading rows that have nothing to copy
/// from; a filled bar's high/low are widened to cover its open and close.
pub fn clean(raw: &RawSeries, policy: FillPolicy) -> Result<BarSeries> {
    let mut bars: Vec<Bar> = Vec::with_capacity(raw.rows.len());
    for row in &raw.rows {
        if let Some(bar) = row.complete() {
            bars.push(bar);
            continue;
        }
        if policy == FillPolicy::DropRow {
            continue;
        }
        let Some(prev) = bars.last() else { continue };
        let open = row.open.unwrap_or(prev.open);
        let close = row.close.unwrap_or(prev.close);
        let high = row.high.unwrap_or(prev.high).max(open).max(close);
        let low = row.low.unwrap_or(prev.low).min(open).min(close);
        bars.push(Bar {
            date: row.date,
            open,
            high,
            low,
            close,
            adj_close: row.adj_close.or(prev.adj_close),
            volume: row.volume,
        });
    }
    if bars.is_empty() {
        return Err(DataError::AllRowsDropped);
    }
    BarSeries::new(raw.symbol.clone(), bars)
}

/// Parse then forward-fill: the usual way to get a series from a file.
pub fn load_csv(path: &std::path::Path, symbol: &str) -> Result<BarSeries> {
    let file = std::fs::File::open(path)?;
    clean(&parse_csv(std::io::BufReader::new(file), symbol)?, FillPolicy::ForwardFill)
}

/// Global price extremes used by [`normalize_minmax`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRecord {
    pub min: f64,
    pub max: f64,
}

impl ScaleRecord {
    fn map_bars(&self, series: &BarSeries, f: impl Fn(f64) -> f64) -> BarSeries {
        let bars = series
            .bars
            .iter()
            .map(|b| Bar {
                open: f(b.open),
                high: f(b.high),
                low: f(b.low),
                close: f(b.close),
                adj_close: b.adj_close.map(&f),
                ..b.clone()
            })
            .collect();
        BarSeries::new_unchecked(series.symbol.clone(), bars)
    }

    pub fn invert(&self, scaled: &BarSeries) -> BarSeries {
        let span = self.max - self.min;
        self.map_bars(scaled, |x| x * span + self.min)
    }
}

/// Maps every price field into [0, 1] using the min and max over all price
/// fields. Never applied inside the optimization pipeline.
pub fn normalize_minmax(series: &BarSeries) -> Result<(BarSeries, ScaleRecord)> {
    if series.len() < 2 {
        return Err(DataError::SeriesTooShort { len: series.len(), required: 2 });
    }
    let (min, max) = series
        .bars
        .iter()
        .flat_map(|b| [b.open, b.high, b.low, b.close].into_iter().chain(b.adj_close))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if max <= min {
        return Err(DataError::DegenerateRange);
    }
    let record = ScaleRecord { min, max };
    let span = max - min;
    Ok((record.map_bars(series, |x| (x - min) / span), record))
}

pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const MIN_SPLIT_LEN: usize = 10;

/// Chronological prefix/suffix split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: BarSeries,
    pub test: BarSeries,
    pub ratio: f64,
}

pub fn split_train_test(series: &BarSeries, ratio: f64) -> Result<SplitPair> {
    if series.len() < MIN_SPLIT_LEN {
        return Err(DataError::SeriesTooShort { len: series.len(), required: MIN_SPLIT_LEN });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidRatio(ratio));
    }
    let n_train = (ratio * series.len() as f64).round() as usize;
    if n_train == 0 || n_train >= series.len() {
        return Err(DataError::InvalidRatio(ratio));
    }
    Ok(SplitPair {
        train: series.slice(0, n_train)?,
        test: series.slice(n_train, series.len())?,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_ROWS: &str = "Date,Open,High,Low,Close,Adj Close,Volume\n\
        2020-01-02,10,11,9,10.5,10.4,1000\n\
        2020-01-03,10.5,12,10,11.5,11.4,1200\n";

    fn gappy(close_missing_at: usize) -> RawSeries {
        let mut text = String::from("Date,Open,High,Low,Close\n");
        for i in 0..5 {
            let close = if i == close_missing_at { "null".to_string() } else { format!("{}", 100 + i) };
            text.push_str(&format!("2021-03-{:02},{},{},{},{}\n", i + 1, 100 + i, 110 + i, 90 + i, close));
        }
        parse_csv(text.as_bytes(), "GAP").unwrap()
    }

    #[test]
    fn two_valid_rows() {
        let raw = parse_csv(TWO_ROWS.as_bytes(), "X").unwrap();
        let s = clean(&raw, FillPolicy::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.bars()[1].volume, Some(1200));
        assert_eq!(s.bars()[0].adj_close, Some(10.4));
    }

    #[test]
    fn missing_close_column() {
        let err = parse_csv("Date,Open,High,Low\n2020-01-02,1,2,1\n".as_bytes(), "X").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "Close"));
    }

    #[test]
    fn descending_dates_rejected() {
        let text = "Date,Open,High,Low,Close\n2020-01-02,1,2,1,1.5\n2020-01-01,1,2,1,1.5\n";
        assert!(matches!(
            parse_csv(text.as_bytes(), "X").unwrap_err(),
            DataError::NonMonotonicDates { line: 3 }
        ));
    }

    #[test]
    fn bad_date_and_bad_envelope_are_malformed() {
        let text = "Date,Open,High,Low,Close\n2020-01-02,1,2,1,1.5\n2020/13/45,1,2,1,1.5\n";
        assert!(matches!(
            parse_csv(text.as_bytes(), "X").unwrap_err(),
            DataError::MalformedRow { line: 3, .. }
        ));
        let text = "Date,Open,High,Low,Close\n2020-01-02,1,1,2,1.5\n";
        assert!(matches!(
            parse_csv(text.as_bytes(), "X").unwrap_err(),
            DataError::MalformedRow { line: 2, .. }
        ));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(
            parse_csv("Date,Open,High,Low,Close\n".as_bytes(), "X").unwrap_err(),
            DataError::EmptySeries
        ));
    }

    #[test]
    fn clean_without_gaps_is_identity() {
        let raw = parse_csv(TWO_ROWS.as_bytes(), "X").unwrap();
        let once = clean(&raw, FillPolicy::ForwardFill).unwrap();
        assert_eq!(clean(&raw, FillPolicy::DropRow).unwrap(), once);
        assert_eq!(clean(&RawSeries::from(&once), FillPolicy::ForwardFill).unwrap(), once);
    }

    #[test]
    fn forward_fill_copies_previous_close() {
        let s = clean(&gappy(2), FillPolicy::ForwardFill).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.bars()[2].close, s.bars()[1].close);
    }

    #[test]
    fn drop_row_removes_gap() {
        let s = clean(&gappy(2), FillPolicy::DropRow).unwrap();
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn leading_gap_cannot_be_filled() {
        let s = clean(&gappy(0), FillPolicy::ForwardFill).unwrap();
        assert_eq!(s.len(), 4);
        let text = "Date,Open,High,Low,Close\n2020-01-02,,,,\n";
        let raw = parse_csv(text.as_bytes(), "X").unwrap();
        assert!(matches!(clean(&raw, FillPolicy::ForwardFill), Err(DataError::AllRowsDropped)));
    }

    #[test]
    fn filled_bar_keeps_envelope() {
        let text = "Date,Open,High,Low,Close\n2020-01-02,10,11,9,10\n2020-01-03,20,21,19,\n";
        let s = clean(&parse_csv(text.as_bytes(), "X").unwrap(), FillPolicy::ForwardFill).unwrap();
        let b = &s.bars()[1];
        assert_eq!(b.close, 10.0);
        assert_eq!(b.low, 10.0);
    }

    fn series_from(prices: &[(f64, f64, f64, f64)]) -> BarSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let bars = prices
            .iter()
            .enumerate()
            .map(|(i, &(open, high, low, close))| Bar {
                date: start + chrono::Days::new(i as u64),
                open,
                high,
                low,
                close,
                adj_close: None,
                volume: None,
            })
            .collect();
        BarSeries::new("T", bars).unwrap()
    }

    #[test]
    fn minmax_endpoints() {
        let s = series_from(&[(60.0, 150.0, 50.0, 100.0), (100.0, 120.0, 80.0, 90.0)]);
        let (scaled, rec) = normalize_minmax(&s).unwrap();
        assert_eq!(rec, ScaleRecord { min: 50.0, max: 150.0 });
        assert_eq!(scaled.bars()[0].low, 0.0);
        assert_eq!(scaled.bars()[0].high, 1.0);
    }

    #[test]
    fn minmax_degenerate() {
        let s = series_from(&[(5.0, 5.0, 5.0, 5.0), (5.0, 5.0, 5.0, 5.0)]);
        assert!(matches!(normalize_minmax(&s), Err(DataError::DegenerateRange)));
    }

    #[test]
    fn split_counts() {
        let s = series_from(&vec![(10.0, 11.0, 9.0, 10.0); 100]);
        let p = split_train_test(&s, 0.8).unwrap();
        assert_eq!((p.train.len(), p.test.len()), (80, 20));

        let s = series_from(&vec![(10.0, 11.0, 9.0, 10.0); 10]);
        let p = split_train_test(&s, 0.5).unwrap();
        assert_eq!((p.train.len(), p.test.len()), (5, 5));
        assert!(p.train.bars().last().unwrap().date < p.test.bars()[0].date);

        let s = series_from(&vec![(10.0, 11.0, 9.0, 10.0); 9]);
        assert!(matches!(
            split_train_test(&s, 0.8),
            Err(DataError::SeriesTooShort { len: 9, .. })
        ));
    }

    prop_compose! {
        fn arb_bar_prices()(low in 1.0f64..500.0, span in 0.0f64..50.0, o in 0.0f64..=1.0, c in 0.0f64..=1.0)
            -> (f64, f64, f64, f64) {
            let high = low + span;
            (low + o * span, high, low, low + c * span)
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip(prices in prop::collection::vec(arb_bar_prices(), 1..60)) {
            let s = series_from(&prices);
            let mut buf = Vec::new();
            write_csv(&s, &mut buf).unwrap();
            let back = clean(&parse_csv(buf.as_slice(), "T").unwrap(), FillPolicy::ForwardFill).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn cleaned_bars_are_sane(
            prices in prop::collection::vec(arb_bar_prices(), 1..60),
            holes in prop::collection::vec(0usize..4, 0..60),
            drop in any::<bool>(),
        ) {
            let s = series_from(&prices);
            let mut raw = RawSeries::from(&s);
            for (row, &field) in raw.rows.iter_mut().zip(&holes) {
                match field {
                    0 => row.open = None,
                    1 => row.high = None,
                    2 => row.low = None,
                    _ => row.close = None,
                }
            }
            let policy = if drop { FillPolicy::DropRow } else { FillPolicy::ForwardFill };
            if let Ok(cleaned) = clean(&raw, policy) {
                for b in cleaned.bars() {
                    prop_assert!(b.check().is_ok());
                }
                let again = clean(&RawSeries::from(&cleaned), policy).unwrap();
                prop_assert_eq!(again, cleaned);
            }
        }

        #[test]
        fn split_concatenates_back(prices in prop::collection::vec(arb_bar_prices(), 10..80), ratio in 0.1f64..0.9) {
            let s = series_from(&prices);
            let p = split_train_test(&s, ratio).unwrap();
            let mut joined = p.train.bars().to_vec();
            joined.extend_from_slice(p.test.bars());
            prop_assert_eq!(joined.as_slice(), s.bars());
            prop_assert_eq!(p.train.len(), (ratio * s.len() as f64).round() as usize);
        }

        #[test]
        fn minmax_round_trip(prices in prop::collection::vec(arb_bar_prices(), 2..40)) {
            let s = series_from(&prices);
            if let Ok((scaled, rec)) = normalize_minmax(&s) {
                let back = rec.invert(&scaled);
                for (a, b) in back.bars().iter().zip(s.bars()) {
                    for (x, y) in [(a.open, b.open), (a.high, b.high), (a.low, b.low), (a.close, b.close)] {
                        prop_assert!((x - y).abs() <= 1e-9 * y.abs());
                    }
                }
            }
        }
    }
}
