use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid search space: {0}")]
pub struct SpaceError(String);

/// Continuous parameter proposal in search-space coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub period: f64,
    pub multiplier: f64,
}

impl RawParams {
    pub fn new(period: f64, multiplier: f64) -> Self {
        RawParams { period, multiplier }
    }

    /// Truncation toward zero of both coordinates.
    pub fn truncate(&self) -> IntParams {
        IntParams { period: self.period.trunc() as i64, multiplier: self.multiplier.trunc() as i64 }
    }
}

/// Integer parameter pair as actually evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntParams {
    pub period: i64,
    pub multiplier: i64,
}

impl IntParams {
    pub fn new(period: i64, multiplier: i64) -> Self {
        IntParams { period, multiplier }
    }

    pub fn as_raw(&self) -> RawParams {
        RawParams { period: self.period as f64, multiplier: self.multiplier as f64 }
    }
}

impl fmt::Display for IntParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(period {}, multiplier {})", self.period, self.multiplier)
    }
}

/// Closed box over (ATR period, ATR multiplier).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    period: (f64, f64),
    multiplier: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { period: (5.0, 30.0), multiplier: (1.0, 5.0) }
    }
}

impl SearchSpace {
    pub fn new(period: (f64, f64), multiplier: (f64, f64)) -> Result<Self, SpaceError> {
        for (name, (lo, hi)) in [("period", period), ("multiplier", multiplier)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SpaceError(format!("{name} bounds [{lo}, {hi}] need finite lower < upper")));
            }
            if lo < 0.0 {
                return Err(SpaceError(format!("{name} bounds must be non-negative")));
            }
        }
        Ok(SearchSpace { period, multiplier })
    }

    pub fn period_bounds(&self) -> (f64, f64) {
        self.period
    }

    pub fn multiplier_bounds(&self) -> (f64, f64) {
        self.multiplier
    }

    pub fn contains(&self, p: RawParams) -> bool {
        (self.period.0..=self.period.1).contains(&p.period)
            && (self.multiplier.0..=self.multiplier.1).contains(&p.multiplier)
    }

    /// Maps a point to the unit square.
    pub fn to_unit(&self, p: RawParams) -> [f64; 2] {
        [
            (p.period - self.period.0) / (self.period.1 - self.period.0),
            (p.multiplier - self.multiplier.0) / (self.multiplier.1 - self.multiplier.0),
        ]
    }

    pub fn from_unit(&self, u: [f64; 2]) -> RawParams {
        RawParams {
            period: (self.period.0 + u[0] * (self.period.1 - self.period.0)).clamp(self.period.0, self.period.1),
            multiplier: (self.multiplier.0 + u[1] * (self.multiplier.1 - self.multiplier.0))
                .clamp(self.multiplier.0, self.multiplier.1),
        }
    }

    fn axis_ints((lo, hi): (f64, f64)) -> std::ops::RangeInclusive<i64> {
        lo.trunc() as i64..=hi.trunc() as i64
    }

    /// Every integer pair some point of the box truncates to, period-major.
    pub fn lattice(&self) -> Vec<IntParams> {
        self.strided_lattice(1, 1)
    }

    pub fn strided_lattice(&self, period_stride: usize, multiplier_stride: usize) -> Vec<IntParams> {
        let mut out = Vec::new();
        for p in Self::axis_ints(self.period).step_by(period_stride.max(1)) {
            for m in Self::axis_ints(self.multiplier).step_by(multiplier_stride.max(1)) {
                out.push(IntParams::new(p, m));
            }
        }
        out
    }

    /// Representative in-box point that truncates to `p`.
    pub fn lattice_point(&self, p: IntParams) -> RawParams {
        RawParams {
            period: (p.period as f64).max(self.period.0),
            multiplier: (p.multiplier as f64).max(self.multiplier.0),
        }
    }
}
