//! Gaussian-process surrogate with a Matérn-5/2 ARD kernel.
//!
//! Inputs are scaled to the unit square of the search space and targets are
//! standardized before fitting; predictions come back in original units.
//! Hyperparameters maximize the log marginal likelihood by multi-start
//! Nelder-Mead in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::linalg::Cholesky;
use super::space::{RawParams, SearchSpace};

pub const JITTER: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-4;
const RESTARTS: u64 = 8;
const RESTART_SEED: u64 = 0x5eed_6a55;
const MAX_EVALS_PER_RESTART: usize = 120;

// Log-space box for (length scale 1, length scale 2, signal variance, noise variance).
const LOG_BOUNDS: [(f64, f64); 4] = [
    (-4.0, 1.6),   // length scales ~0.018 .. 5 unit-square widths
    (-4.0, 1.6),
    (-3.0, 3.0),   // signal variance ~0.05 .. 20 (standardized targets)
    (-13.82, 0.0), // noise variance 1e-6 .. 1
];

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("need at least 2 observations, got {0}")]
    TooFewPoints(usize),
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("non-finite target at index {0}")]
    NonFinite(usize),
    #[error("kernel matrix is not positive definite even with jitter {MAX_JITTER}")]
    SingularKernel,
}

/// Matérn-5/2 hyperparameters, in standardized-target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// Per-axis length scales on the unit square.
    pub length_scales: [f64; 2],
    pub signal_var: f64,
    pub noise_var: f64,
}

impl KernelParams {
    /// Used when likelihood maximization finds nothing finite.
    pub const FALLBACK: KernelParams = KernelParams { length_scales: [0.3, 0.3], signal_var: 1.0, noise_var: 1e-6 };

    fn from_log(theta: &[f64]) -> Self {
        let t: Vec<f64> = theta.iter().zip(LOG_BOUNDS).map(|(v, (lo, hi))| v.clamp(lo, hi)).collect();
        KernelParams { length_scales: [t[0].exp(), t[1].exp()], signal_var: t[2].exp(), noise_var: t[3].exp() }
    }

    fn to_log(self) -> [f64; 4] {
        [self.length_scales[0].ln(), self.length_scales[1].ln(), self.signal_var.ln(), self.noise_var.ln()]
    }

    /// Covariance between two unit-square points.
    pub fn covariance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let r2 = ((a[0] - b[0]) / self.length_scales[0]).powi(2) + ((a[1] - b[1]) / self.length_scales[1]).powi(2);
        let s5r = (5.0 * r2).sqrt();
        self.signal_var * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    space: SearchSpace,
    inputs: Vec<[f64; 2]>,
    raw_inputs: Vec<RawParams>,
    targets: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: KernelParams,
    jitter: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

struct Prepared {
    raw: Vec<RawParams>,
    unit: Vec<[f64; 2]>,
    targets: Vec<f64>,
    y_std: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn prepare(space: &SearchSpace, x: &[RawParams], y: &[f64]) -> Result<Prepared, GpError> {
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch { inputs: x.len(), targets: y.len() });
    }
    if x.len() < 2 {
        return Err(GpError::TooFewPoints(x.len()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(GpError::NonFinite(i));
    }
    let mut raw: Vec<RawParams> = Vec::with_capacity(x.len());
    let mut targets = Vec::with_capacity(x.len());
    for (p, &t) in x.iter().zip(y) {
        if !raw.contains(p) {
            raw.push(*p);
            targets.push(t);
        }
    }
    let n = targets.len() as f64;
    let y_mean = targets.iter().sum::<f64>() / n;
    let sd = (targets.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let y_scale = if sd > 1e-12 * y_mean.abs().max(1.0) { sd } else { 1.0 };
    let y_std = targets.iter().map(|v| (v - y_mean) / y_scale).collect();
    let unit = raw.iter().map(|p| space.to_unit(*p)).collect();
    Ok(Prepared { raw, unit, targets, y_std, y_mean, y_scale })
}

fn gram(inputs: &[[f64; 2]], k: &KernelParams, diag: f64) -> Vec<f64> {
    let n = inputs.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = k.covariance(inputs[i], inputs[j]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
        a[i * n + i] = k.signal_var + diag;
    }
    a
}

/// Log marginal likelihood of standardized targets; `None` if the factorization fails.
fn log_marginal(inputs: &[[f64; 2]], y: &[f64], k: &KernelParams) -> Option<f64> {
    let n = inputs.len();
    let chol = Cholesky::factor(&gram(inputs, k, k.noise_var + JITTER), n)?;
    let alpha = chol.solve(y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let lml = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some(lml)
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex.
fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: [f64; 4], step: f64, max_evals: usize) -> ([f64; 4], f64) {
    const D: usize = 4;
    let mut simplex: Vec<([f64; D], f64)> = Vec::with_capacity(D + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..D {
        let mut x = x0;
        x[i] += step;
        simplex.push((x, f(&x)));
    }
    let mut evals = D + 1;
    let order = |s: &mut Vec<([f64; D], f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));

    while evals < max_evals {
        order(&mut simplex);
        let (best, worst) = (simplex[0].1, simplex[D].1);
        if (worst - best).abs() <= 1e-8 * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = [0.0; D];
        for (x, _) in &simplex[..D] {
            for i in 0..D {
                centroid[i] += x[i] / D as f64;
            }
        }
        let along = |t: f64| {
            let mut p = [0.0; D];
            for i in 0..D {
                p[i] = centroid[i] + t * (simplex[D].0[i] - centroid[i]);
            }
            p
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[D] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[D - 1].1 {
            simplex[D] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[D].1 {
                let xc = along(-0.5);
                (xc, f(&xc))
            } else {
                let xc = along(0.5);
                (xc, f(&xc))
            };
            evals += 1;
            if fc < fr.min(simplex[D].1) {
                simplex[D] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for i in 0..D {
                        x[i] = x0[i] + 0.5 * (x[i] - x0[i]);
                    }
                    *fx = f(x);
                }
                evals += D;
            }
        }
    }
    order(&mut simplex);
    simplex[0]
}

/// Best kernel by multi-start likelihood maximization, or `None` if every
/// restart failed to produce a finite likelihood.
fn fit_kernel(inputs: &[[f64; 2]], y: &[f64]) -> Option<KernelParams> {
    let mut objective = |theta: &[f64]| {
        log_marginal(inputs, y, &KernelParams::from_log(theta)).map_or(f64::INFINITY, |l| -l)
    };
    let mut best: Option<([f64; 4], f64)> = None;
    for restart in 0..RESTARTS {
        let start = if restart == 0 {
            KernelParams::FALLBACK.to_log()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED + restart);
            let mut x = [0.0; 4];
            for (v, (lo, hi)) in x.iter_mut().zip(LOG_BOUNDS) {
                *v = rng.gen_range(lo..hi);
            }
            x
        };
        let (x, fx) = nelder_mead(&mut objective, start, 0.7, MAX_EVALS_PER_RESTART);
        if fx.is_finite() && best.is_none_or(|(_, b)| fx < b) {
            best = Some((x, fx));
        }
    }
    best.map(|(x, _)| KernelParams::from_log(&x))
}

impl GpModel {
    /// Fits hyperparameters and conditions on `(x, y)`. Exact duplicate inputs
    /// keep their first occurrence.
    pub fn fit(space: &SearchSpace, x: &[RawParams], y: &[f64]) -> Result<Self, GpError> {
        let prep = prepare(space, x, y)?;
        let kernel = fit_kernel(&prep.unit, &prep.y_std).unwrap_or_else(|| {
            log::warn!("GP hyperparameter search failed; using fixed fallback kernel");
            KernelParams::FALLBACK
        });
        Self::condition(space, prep, kernel)
    }

    /// Conditions on `(x, y)` with fixed hyperparameters.
    pub fn with_kernel(space: &SearchSpace, x: &[RawParams], y: &[f64], kernel: KernelParams) -> Result<Self, GpError> {
        Self::condition(space, prepare(space, x, y)?, kernel)
    }

    fn condition(space: &SearchSpace, prep: Prepared, kernel: KernelParams) -> Result<Self, GpError> {
        let n = prep.unit.len();
        let mut jitter = JITTER;
        let chol = loop {
            if let Some(c) = Cholesky::factor(&gram(&prep.unit, &kernel, kernel.noise_var + jitter), n) {
                break c;
            }
            if jitter >= MAX_JITTER {
                return Err(GpError::SingularKernel);
            }
            jitter *= 10.0;
            log::debug!("escalating GP jitter to {jitter:e}");
        };
        let alpha = chol.solve(&prep.y_std);
        Ok(GpModel {
            space: *space,
            inputs: prep.unit,
            raw_inputs: prep.raw,
            targets: prep.targets,
            y_mean: prep.y_mean,
            y_scale: prep.y_scale,
            kernel,
            jitter,
            chol,
            alpha,
        })
    }

    /// Posterior mean and standard deviation of the latent function, in target units.
    pub fn predict(&self, x: RawParams) -> (f64, f64) {
        let u = self.space.to_unit(x);
        let k_star: Vec<f64> = self.inputs.iter().map(|xi| self.kernel.covariance(u, *xi)).collect();
        let mean: f64 = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.solve_lower(&k_star);
        let var = (self.kernel.signal_var - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    /// Diagonal jitter actually used (1e-6 unless escalation was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Deduplicated training inputs in search-space coordinates.
    pub fn training_inputs(&self) -> &[RawParams] {
        &self.raw_inputs
    }

    pub fn training_targets(&self) -> &[f64] {
        &self.targets
    }

    /// Mean and scale used to standardize the targets.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    pub fn best_target(&self) -> f64 {
        self.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let y: Vec<f64> = self.targets.iter().map(|v| (v - self.y_mean) / self.y_scale).collect();
        let fit: f64 = y.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        -0.5 * fit - 0.5 * self.chol.log_det() - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SearchSpace {
        SearchSpace::default()
    }

    #[test]
    fn matern_at_zero_and_decay() {
        let k = KernelParams { length_scales: [0.5, 0.5], signal_var: 2.0, noise_var: 1e-6 };
        assert_eq!(k.covariance([0.3, 0.3], [0.3, 0.3]), 2.0);
        // r = 1: (1 + sqrt5 + 5/3) exp(-sqrt5)
        let r1 = 2.0 * (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert!((k.covariance([0.0, 0.0], [0.5, 0.0]) - r1).abs() < 1e-14);
        assert!(k.covariance([0.0, 0.0], [1.0, 1.0]) < k.covariance([0.0, 0.0], [0.5, 0.5]));
    }

    #[test]
    fn equal_targets_predict_common_value() {
        let x = [RawParams::new(10.0, 2.0), RawParams::new(20.0, 4.0)];
        let m = GpModel::fit(&space(), &x, &[3.5, 3.5]).unwrap();
        let (mean, _) = m.predict(RawParams::new(15.0, 3.0));
        assert!((mean - 3.5).abs() < 1e-6);
    }

    #[test]
    fn duplicates_are_collapsed() {
        let x = [RawParams::new(10.0, 2.0), RawParams::new(10.0, 2.0), RawParams::new(20.0, 4.0)];
        let m = GpModel::fit(&space(), &x, &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.training_inputs().len(), 2);
    }

    #[test]
    fn input_validation() {
        let x = [RawParams::new(10.0, 2.0)];
        assert_eq!(GpModel::fit(&space(), &x, &[1.0]).unwrap_err(), GpError::TooFewPoints(1));
        assert!(matches!(GpModel::fit(&space(), &x, &[1.0, 2.0]), Err(GpError::LengthMismatch { .. })));
        let x2 = [RawParams::new(10.0, 2.0), RawParams::new(11.0, 2.0)];
        assert_eq!(GpModel::fit(&space(), &x2, &[1.0, f64::NAN]).unwrap_err(), GpError::NonFinite(1));
    }

    #[test]
    fn interpolates_and_reverts_to_prior() {
        let x: Vec<RawParams> = [(6.0, 1.5), (12.0, 3.0), (20.0, 2.0), (27.0, 4.5), (9.0, 4.0)]
            .iter()
            .map(|&(p, m)| RawParams::new(p, m))
            .collect();
        let y = [1.0, 4.0, -2.0, 0.5, 3.0];
        let k = KernelParams { length_scales: [0.02, 0.02], signal_var: 1.3, noise_var: 1e-6 };
        let m = GpModel::with_kernel(&space(), &x, &y, k).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            let (mean, sd) = m.predict(*xi);
            assert!((mean - yi).abs() < 1e-4);
            assert!(sd <= 1e-2);
        }
        // Far from every point (many length scales away) the posterior is the prior.
        let (y_mean, y_scale) = m.standardization();
        let (mean, sd) = m.predict(RawParams::new(16.0, 1.0));
        assert!((mean - y_mean).abs() < 1e-6);
        assert!((sd - y_scale * 1.3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn fitted_likelihood_beats_fallback() {
        let x: Vec<RawParams> = (0..12).map(|i| RawParams::new(5.0 + 2.0 * i as f64, 1.0 + (i % 5) as f64)).collect();
        let y: Vec<f64> = x.iter().map(|p| (p.period / 6.0).sin() + 0.3 * p.multiplier).collect();
        let fitted = GpModel::fit(&space(), &x, &y).unwrap();
        let fallback = GpModel::with_kernel(&space(), &x, &y, KernelParams::FALLBACK).unwrap();
        assert!(fitted.log_marginal_likelihood() >= fallback.log_marginal_likelihood() - 1e-9);
        assert_eq!(fitted.jitter(), JITTER);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + x[2].powi(2) + (x[3] - 3.0).powi(2);
        let (x, fx) = nelder_mead(&mut f, [0.0; 4], 0.5, 2000);
        assert!(fx < 1e-8, "{x:?} {fx}");
    }
}
