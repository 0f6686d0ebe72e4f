use std::fmt;
use std::str::FromStr;

use statrs::function::erf::erfc;

pub const DEFAULT_KAPPA: f64 = 2.0;

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gain = mean - best;
    if std <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / std;
    (gain * norm_cdf(z) + std * norm_pdf(z)).max(0.0)
}

/// Upper confidence bound `mean + kappa * std`.
pub fn ucb(mean: f64, std: f64, kappa: f64) -> f64 {
    mean + kappa * std
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acquisition {
    ExpectedImprovement,
    UpperConfidenceBound { kappa: f64 },
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition::ExpectedImprovement
    }
}

impl Acquisition {
    pub fn score(&self, mean: f64, std: f64, best: f64) -> f64 {
        match *self {
            Acquisition::ExpectedImprovement => expected_improvement(mean, std, best),
            Acquisition::UpperConfidenceBound { kappa } => ucb(mean, std, kappa),
        }
    }
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Acquisition::ExpectedImprovement => f.write_str("ei"),
            Acquisition::UpperConfidenceBound { .. } => f.write_str("ucb"),
        }
    }
}

impl FromStr for Acquisition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(Acquisition::ExpectedImprovement),
            "ucb" => Ok(Acquisition::UpperConfidenceBound { kappa: DEFAULT_KAPPA }),
            other => Err(format!("unknown acquisition `{other}` (expected ei or ucb)")),
        }
    }
}
