use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use chrono::NaiveDate;

use super::{clean, parse_csv, write_csv, BarSeries, DataError, FillPolicy, Result};

pub const DATA_URL_ENV: &str = "SUPERTREND_DATA_URL";
pub const CACHE_DIR_ENV: &str = "SUPERTREND_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".supertrend-cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interval {
    Daily,
    Weekly,
    Monthly,
}

impl Interval {
    pub fn as_str(&self) -> &'static str {
        match self {
            Interval::Daily => "daily",
            Interval::Weekly => "weekly",
            Interval::Monthly => "monthly",
        }
    }
}

impl FromStr for Interval {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "daily" => Ok(Interval::Daily),
            "weekly" => Ok(Interval::Weekly),
            "monthly" => Ok(Interval::Monthly),
            other => Err(format!("unknown interval `{other}` (expected daily, weekly or monthly)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub base_url: Option<String>,
    pub cache_dir: PathBuf,
}

impl FetchConfig {
    pub fn from_env() -> Self {
        FetchConfig {
            base_url: std::env::var(DATA_URL_ENV).ok().filter(|s| !s.trim().is_empty()),
            cache_dir: std::env::var_os(CACHE_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
        }
    }

    pub fn cache_path(&self, symbol: &str, interval: Interval) -> PathBuf {
        let safe: String = symbol
            .chars()
            .map(|c| if c == '/' || c == '\\' { '_' } else { c })
            .collect();
        self.cache_dir.join(format!("{safe}_{}.csv", interval.as_str()))
    }
}

// Fetches for the same cache file run one at a time.
fn cache_lock(path: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(path.to_path_buf()).or_default().clone()
}

/// Downloads OHLCV history, or replays it from `<cache_dir>/<symbol>_<interval>.csv`.
///
/// A cache hit returns the cached bars restricted to `[start, end]` without
/// touching the network; an empty restriction falls through to a fresh fetch.
pub fn fetch_history(
    config: &FetchConfig,
    symbol: &str,
    start: NaiveDate,
    end: NaiveDate,
    interval: Interval,
) -> Result<BarSeries> {
    if start >= end {
        return Err(DataError::InvalidRange { start, end });
    }
    let path = config.cache_path(symbol, interval);
    let lock = cache_lock(&path);
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());

    if path.exists() {
        let file = std::fs::File::open(&path)?;
        let cached = clean(&parse_csv(std::io::BufReader::new(file), symbol)?, FillPolicy::ForwardFill)?;
        if let Some(hit) = cached.between(start, end) {
            log::debug!("cache hit for {symbol} at {}", path.display());
            return Ok(hit);
        }
    }

    let base = config.base_url.as_deref().ok_or(DataError::EndpointUnconfigured)?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .into();
    let mut response = agent
        .get(base)
        .query("symbol", symbol)
        .query("start", start.format("%Y-%m-%d").to_string())
        .query("end", end.format("%Y-%m-%d").to_string())
        .query("interval", interval.as_str())
        .call()
        .map_err(|e| DataError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(DataError::HttpFailure(status));
    }
    let body = response
        .body_mut()
        .read_to_string()
        .map_err(|e| DataError::Transport(e.to_string()))?;
    if body.trim().is_empty() {
        return Err(DataError::EmptyResponse);
    }
    let series = clean(&parse_csv(body.as_bytes(), symbol)?, FillPolicy::ForwardFill)?;

    std::fs::create_dir_all(&config.cache_dir)?;
    let tmp = path.with_extension("csv.tmp");
    write_csv(&series, std::fs::File::create(&tmp)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(series)
}
