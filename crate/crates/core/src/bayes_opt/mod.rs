//! Sequential model-based optimization over the 2-D (period, multiplier) box.
//!
//! [`optimize`] evaluates a random initial design, then repeatedly fits a
//! [`GpModel`] to everything seen so far and evaluates the candidate with the
//! best acquisition score whose integer truncation is still unevaluated.
//! [`grid_search`] and [`random_search`] are the baselines.

mod acquisition;
mod gp;
mod linalg;
mod propose;
mod space;

pub use acquisition::{expected_improvement, ucb, Acquisition, DEFAULT_KAPPA};
pub use gp::{GpError, GpModel, KernelParams, JITTER};
pub use propose::{candidate_set, propose_next, HALTON_POINTS};
pub use space::{IntParams, RawParams, SearchSpace, SpaceError};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_N_INIT: usize = 5;
pub const DEFAULT_N_ITER: usize = 50;
pub const ITERATION_LOG_HEADER: [&str; 4] = ["iter", "target", "atr_multiplier", "atr_period"];

// Redraws allowed per initial-design slot before falling back to the lattice.
const MAX_DESIGN_REDRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("need at least 2 initial points, got {0}")]
    InvalidBudget(usize),
    #[error("grid strides must be >= 1")]
    InvalidStride,
    #[error("every integer pair in the search space has been evaluated")]
    SpaceExhausted,
    #[error("objective failed at {params}: {message}")]
    Objective { params: IntParams, message: String },
    #[error("objective returned non-finite value at {0}")]
    NonFiniteTarget(IntParams),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("iteration log: {0}")]
    Log(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 1-based.
    pub iter: usize,
    pub raw: RawParams,
    pub params: IntParams,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub history: Vec<EvalRecord>,
    pub best_params: IntParams,
    pub best_target: f64,
    pub seed: u64,
}

/// Best-result summary written next to the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub atr_period: i64,
    pub atr_multiplier: i64,
    pub max_profit: f64,
    pub seed: u64,
}

impl OptResult {
    /// Builds the result from a non-empty history; the best is the earliest
    /// record attaining the maximum target.
    pub fn from_history(history: Vec<EvalRecord>, seed: u64) -> Option<Self> {
        let mut best: Option<&EvalRecord> = None;
        for r in &history {
            if best.is_none_or(|b| r.target > b.target) {
                best = Some(r);
            }
        }
        let best = *best?;
        Some(OptResult { best_params: best.params, best_target: best.target, history, seed })
    }

    /// Best target seen after each evaluation.
    pub fn running_best(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::NEG_INFINITY, |b, r| {
                *b = b.max(r.target);
                Some(*b)
            })
            .collect()
    }

    /// Number of evaluations until the running best first reaches `target`.
    pub fn evals_to_reach(&self, target: f64) -> Option<usize> {
        self.running_best().iter().position(|&b| b >= target).map(|i| i + 1)
    }

    pub fn summary(&self) -> BestSummary {
        BestSummary {
            atr_period: self.best_params.period,
            atr_multiplier: self.best_params.multiplier,
            max_profit: self.best_target,
            seed: self.seed,
        }
    }

    /// `iter,target,atr_multiplier,atr_period`, raw (pre-truncation) parameters.
    pub fn write_iteration_log<W: Write>(&self, writer: W) -> Result<(), OptError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(ITERATION_LOG_HEADER)?;
        for r in &self.history {
            wtr.write_record([
                r.iter.to_string(),
                r.target.to_string(),
                r.raw.multiplier.to_string(),
                r.raw.period.to_string(),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_iteration_log<R: Read>(reader: R, seed: u64) -> Result<Self, OptError> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().ne(ITERATION_LOG_HEADER) {
            return Err(OptError::Log(format!("header must be `{}`", ITERATION_LOG_HEADER.join(","))));
        }
        let mut history = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64, OptError> {
                row.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| OptError::Log(format!("bad value in column {}", ITERATION_LOG_HEADER[i])))
            };
            let raw = RawParams::new(num(3)?, num(2)?);
            history.push(EvalRecord { iter: num(0)? as usize, raw, params: raw.truncate(), target: num(1)? });
        }
        OptResult::from_history(history, seed).ok_or_else(|| OptError::Log("no rows".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoSettings {
    pub n_init: usize,
    pub n_iter: usize,
    pub acquisition: Acquisition,
    pub seed: u64,
}

impl Default for BoSettings {
    fn default() -> Self {
        BoSettings { n_init: DEFAULT_N_INIT, n_iter: DEFAULT_N_ITER, acquisition: Acquisition::default(), seed: 0 }
    }
}

fn design_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn draw(rng: &mut ChaCha8Rng, space: &SearchSpace) -> RawParams {
    space.from_unit([rng.gen(), rng.gen()])
}

/// `n` uniform points in the box; the same seed always yields the same list.
pub fn initial_design(space: &SearchSpace, n: usize, seed: u64) -> Vec<RawParams> {
    let mut rng = design_stream(seed);
    (0..n).map(|_| draw(&mut rng, space)).collect()
}

/// Evaluates objectives and keeps the log; shared by all three searches.
struct Recorder<F> {
    objective: F,
    history: Vec<EvalRecord>,
    cache: HashMap<IntParams, f64>,
}

impl<F, E> Recorder<F>
where
    F: FnMut(IntParams) -> Result<f64, E>,
    E: fmt::Display,
{
    fn new(objective: F) -> Self {
        Recorder { objective, history: Vec::new(), cache: HashMap::new() }
    }

    fn evaluate(&mut self, raw: RawParams) -> Result<f64, OptError> {
        let params = raw.truncate();
        let target = match self.cache.get(&params) {
            Some(&t) => t,
            None => {
                let t = (self.objective)(params)
                    .map_err(|e| OptError::Objective { params, message: e.to_string() })?;
                if !t.is_finite() {
                    return Err(OptError::NonFiniteTarget(params));
                }
                self.cache.insert(params, t);
                t
            }
        };
        self.history.push(EvalRecord { iter: self.history.len() + 1, raw, params, target });
        Ok(target)
    }

    fn evaluated(&self) -> HashSet<IntParams> {
        self.cache.keys().copied().collect()
    }

    fn finish(self, seed: u64) -> Result<OptResult, OptError> {
        OptResult::from_history(self.history, seed).ok_or(OptError::SpaceExhausted)
    }
}

/// Bayesian optimization: `n_init` distinct random integer pairs, then up to
/// `n_iter` GP-guided proposals. No integer pair is evaluated twice; if the
/// box runs out of unevaluated pairs the run ends early.
pub fn optimize<F, E>(objective: F, space: &SearchSpace, settings: &BoSettings) -> Result<OptResult, OptError>
where
    F: FnMut(IntParams) -> Result<f64, E>,
    E: fmt::Display,
{
    if settings.n_init < 2 {
        return Err(OptError::InvalidBudget(settings.n_init));
    }
    let lattice = space.lattice();
    let mut rec = Recorder::new(objective);
    let mut design = design_stream(settings.seed);

    'design: while rec.history.len() < settings.n_init {
        let seen = rec.evaluated();
        if seen.len() >= lattice.len() {
            log::warn!("search space exhausted during the initial design");
            break;
        }
        for _ in 0..MAX_DESIGN_REDRAWS {
            let p = draw(&mut design, space);
            if !seen.contains(&p.truncate()) {
                rec.evaluate(p)?;
                continue 'design;
            }
        }
        let left = lattice.iter().find(|p| !seen.contains(p)).expect("lattice not exhausted");
        rec.evaluate(space.lattice_point(*left))?;
    }

    let mut proposals = ChaCha8Rng::seed_from_u64(settings.seed);
    proposals.set_stream(1);
    for _ in 0..settings.n_iter {
        let x: Vec<RawParams> = rec.history.iter().map(|r| r.params.as_raw()).collect();
        let y: Vec<f64> = rec.history.iter().map(|r| r.target).collect();
        let model = GpModel::fit(space, &x, &y)?;
        let next = match propose_next(&model, space, settings.acquisition, &rec.evaluated(), proposals.next_u64()) {
            Ok(p) => p,
            Err(OptError::SpaceExhausted) => {
                log::warn!("search space exhausted after {} evaluations", rec.history.len());
                break;
            }
            Err(e) => return Err(e),
        };
        rec.evaluate(next)?;
    }
    rec.finish(settings.seed)
}

/// Exhaustive evaluation of the strided integer lattice, period-major.
pub fn grid_search<F, E>(objective: F, space: &SearchSpace, strides: (usize, usize)) -> Result<OptResult, OptError>
where
    F: FnMut(IntParams) -> Result<f64, E>,
    E: fmt::Display,
{
    if strides.0 == 0 || strides.1 == 0 {
        return Err(OptError::InvalidStride);
    }
    let mut rec = Recorder::new(objective);
    for p in space.strided_lattice(strides.0, strides.1) {
        rec.evaluate(space.lattice_point(p))?;
    }
    rec.finish(0)
}

/// `n` uniform draws (the initial-design stream), truncated; repeated integer
/// pairs reuse the cached value instead of calling the objective again.
pub fn random_search<F, E>(objective: F, space: &SearchSpace, n: usize, seed: u64) -> Result<OptResult, OptError>
where
    F: FnMut(IntParams) -> Result<f64, E>,
    E: fmt::Display,
{
    if n == 0 {
        return Err(OptError::InvalidBudget(0));
    }
    let mut rec = Recorder::new(objective);
    for p in initial_design(space, n, seed) {
        rec.evaluate(p)?;
    }
    rec.finish(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn concave(p: IntParams) -> Result<f64, Infallible> {
        Ok(-(((p.period - 12) as f64).powi(2) + ((p.multiplier - 3) as f64).powi(2)))
    }

    #[test]
    fn design_bounds_and_determinism() {
        let space = SearchSpace::default();
        let a = initial_design(&space, 5, 42);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|p| space.contains(*p)));
        assert_eq!(a, initial_design(&space, 5, 42));
        for s in 0..100u64 {
            assert_ne!(initial_design(&space, 5, 2 * s), initial_design(&space, 5, 2 * s + 1));
        }
    }

    #[test]
    fn grid_counts_and_optimum() {
        let space = SearchSpace::default();
        let mut calls = 0;
        let r = grid_search(|p| { calls += 1; concave(p) }, &space, (1, 1)).unwrap();
        assert_eq!(calls, 130);
        assert_eq!(r.history.len(), 130);
        assert_eq!(r.best_params, IntParams::new(12, 3));
        assert_eq!(r.best_target, 0.0);
        assert!(matches!(grid_search(concave, &space, (0, 1)), Err(OptError::InvalidStride)));
    }

    #[test]
    fn grid_dominates_subsets() {
        let space = SearchSpace::default();
        let f = |p: IntParams| -> Result<f64, Infallible> { Ok(((p.period * 7 + p.multiplier * 13) % 17) as f64) };
        let grid = grid_search(f, &space, (1, 1)).unwrap();
        let coarse = grid_search(f, &space, (3, 2)).unwrap();
        let rand = random_search(f, &space, 40, 5).unwrap();
        assert!(grid.best_target >= coarse.best_target);
        assert!(grid.best_target >= rand.best_target);
    }

    #[test]
    fn random_search_basics() {
        let space = SearchSpace::default();
        let one = random_search(concave, &space, 1, 3).unwrap();
        assert_eq!(one.history.len(), 1);
        assert_eq!(one.best_target, one.history[0].target);
        let mut calls = 0;
        let a = random_search(|p| { calls += 1; concave(p) }, &space, 300, 9).unwrap();
        assert_eq!(a.history.len(), 300);
        assert!(calls <= 130);
        assert_eq!(a, random_search(concave, &space, 300, 9).unwrap());
    }

    #[test]
    fn constant_objective() {
        let space = SearchSpace::default();
        let settings = BoSettings { n_iter: 5, seed: 3, ..Default::default() };
        let r = optimize(|_| Ok::<_, Infallible>(7.0), &space, &settings).unwrap();
        assert_eq!(r.best_target, 7.0);
        assert_eq!(r.history.len(), 10);
        assert_eq!(r.best_params, r.history[0].params);
    }

    #[test]
    fn optimize_invariants() {
        let space = SearchSpace::default();
        let settings = BoSettings { n_iter: 20, seed: 17, ..Default::default() };
        let r = optimize(concave, &space, &settings).unwrap();
        assert_eq!(r.history.len(), 25);
        let distinct: HashSet<_> = r.history.iter().map(|h| h.params).collect();
        assert_eq!(distinct.len(), 25);
        for (i, h) in r.history.iter().enumerate() {
            assert_eq!(h.iter, i + 1);
            assert_eq!(h.params, h.raw.truncate());
            assert!(space.contains(h.raw));
        }
        let rb = r.running_best();
        assert!(rb.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*rb.last().unwrap(), r.best_target);
        assert_eq!(r, optimize(concave, &space, &settings).unwrap());
    }

    #[test]
    fn budget_validation_and_errors() {
        let space = SearchSpace::default();
        let bad = BoSettings { n_init: 1, ..Default::default() };
        assert!(matches!(optimize(concave, &space, &bad), Err(OptError::InvalidBudget(1))));
        let settings = BoSettings { n_iter: 0, ..Default::default() };
        let err = optimize(|p: IntParams| if p.period > 0 { Err("boom") } else { Ok(0.0) }, &space, &settings).unwrap_err();
        assert!(matches!(err, OptError::Objective { ref message, .. } if message == "boom"));
        let err = optimize(|_| Ok::<_, Infallible>(f64::NAN), &space, &settings).unwrap_err();
        assert!(matches!(err, OptError::NonFiniteTarget(_)));
    }

    #[test]
    fn small_box_is_exhausted_early() {
        let space = SearchSpace::new((5.0, 6.0), (1.0, 2.0)).unwrap();
        let settings = BoSettings { n_init: 2, n_iter: 10, ..Default::default() };
        let r = optimize(concave, &space, &settings).unwrap();
        assert_eq!(r.history.len(), 4);
    }

    #[test]
    fn iteration_log_round_trip() {
        let space = SearchSpace::default();
        let r = optimize(concave, &space, &BoSettings { n_iter: 3, seed: 5, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        r.write_iteration_log(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,target,atr_multiplier,atr_period\n"));
        assert_eq!(text.lines().count(), 9);
        assert_eq!(OptResult::read_iteration_log(buf.as_slice(), 5).unwrap(), r);
        let json = serde_json::to_value(r.summary()).unwrap();
        for key in ["atr_period", "atr_multiplier", "max_profit", "seed"] {
            assert!(json.get(key).is_some());
        }
    }

    #[test]
    fn earliest_best_wins_ties() {
        let rec = |iter, p, t| EvalRecord { iter, raw: IntParams::new(p, 1).as_raw(), params: IntParams::new(p, 1), target: t };
        let r = OptResult::from_history(vec![rec(1, 5, 1.0), rec(2, 6, 3.0), rec(3, 7, 3.0)], 0).unwrap();
        assert_eq!(r.best_params, IntParams::new(6, 1));
        assert_eq!(r.evals_to_reach(3.0), Some(2));
        assert_eq!(r.evals_to_reach(4.0), None);
    }
}
