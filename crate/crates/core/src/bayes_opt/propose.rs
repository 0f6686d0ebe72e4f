use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::acquisition::Acquisition;
use super::gp::GpModel;
use super::space::{IntParams, RawParams, SearchSpace};
use super::OptError;

pub const HALTON_POINTS: usize = 2048;
const PERTURBATIONS_PER_POINT: usize = 8;
const PERTURBATION_SD: f64 = 0.05;

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut r) = (inv, 0.0);
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// Candidate set scored by [`propose_next`], in index order: a randomly
/// shifted 2-D Halton sequence, Gaussian perturbations of every training
/// input, then one representative point per integer pair of the box.
pub fn candidate_set(model: &GpModel, space: &SearchSpace, seed: u64) -> Vec<RawParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 2] = [rng.gen(), rng.gen()];
    let mut out: Vec<RawParams> = (1..=HALTON_POINTS as u64)
        .map(|i| {
            let u0 = (radical_inverse(i, 2) + shift[0]).fract();
            let u1 = (radical_inverse(i, 3) + shift[1]).fract();
            space.from_unit([u0, u1])
        })
        .collect();
    let noise = Normal::new(0.0, PERTURBATION_SD).expect("valid sd");
    for x in model.training_inputs() {
        let u = space.to_unit(*x);
        for _ in 0..PERTURBATIONS_PER_POINT {
            let a = (u[0] + noise.sample(&mut rng)).clamp(0.0, 1.0);
            let b = (u[1] + noise.sample(&mut rng)).clamp(0.0, 1.0);
            out.push(space.from_unit([a, b]));
        }
    }
    out.extend(space.lattice().into_iter().map(|p| space.lattice_point(p)));
    out
}

/// Highest-acquisition candidate whose integer truncation has not been
/// evaluated yet; ties go to the lowest candidate index.
pub fn propose_next(
    model: &GpModel,
    space: &SearchSpace,
    acquisition: Acquisition,
    evaluated: &HashSet<IntParams>,
    seed: u64,
) -> Result<RawParams, OptError> {
    let best = model.best_target();
    let mut choice: Option<(RawParams, f64)> = None;
    for c in candidate_set(model, space, seed) {
        if !space.contains(c) || evaluated.contains(&c.truncate()) {
            continue;
        }
        let (mean, std) = model.predict(c);
        let score = acquisition.score(mean, std, best);
        if choice.is_none_or(|(_, s)| score > s) {
            choice = Some((c, score));
        }
    }
    choice.map(|(c, _)| c).ok_or(OptError::SpaceExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(space: &SearchSpace) -> GpModel {
        let pts: Vec<RawParams> = [(6, 1), (12, 3), (25, 4), (18, 2)].iter().map(|&(p, m)| IntParams::new(p, m).as_raw()).collect();
        let y: Vec<f64> = pts.iter().map(|p| -((p.period - 12.0).powi(2) + (p.multiplier - 3.0).powi(2))).collect();
        GpModel::fit(space, &pts, &y).unwrap()
    }

    #[test]
    fn halton_prefix() {
        let b2: Vec<f64> = (1..=4).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(b2, vec![0.5, 0.25, 0.75, 0.125]);
        let b3: Vec<f64> = (1..=3).map(|i| radical_inverse(i, 3)).collect();
        assert!((b3[0] - 1.0 / 3.0).abs() < 1e-15 && (b3[2] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn candidate_count_and_bounds() {
        let space = SearchSpace::default();
        let m = model(&space);
        let c = candidate_set(&m, &space, 3);
        assert_eq!(c.len(), HALTON_POINTS + 4 * PERTURBATIONS_PER_POINT + 130);
        assert!(c.iter().all(|p| space.contains(*p)));
    }

    #[test]
    fn forced_choice_when_one_pair_left() {
        let space = SearchSpace::default();
        let m = model(&space);
        let remaining = IntParams::new(30, 5);
        let evaluated: HashSet<IntParams> = space.lattice().into_iter().filter(|p| *p != remaining).collect();
        let next = propose_next(&m, &space, Acquisition::ExpectedImprovement, &evaluated, 1).unwrap();
        assert_eq!(next.truncate(), remaining);

        let all: HashSet<IntParams> = space.lattice().into_iter().collect();
        assert!(matches!(
            propose_next(&m, &space, Acquisition::ExpectedImprovement, &all, 1),
            Err(OptError::SpaceExhausted)
        ));
    }

    #[test]
    fn proposal_is_deterministic_and_maximal() {
        let space = SearchSpace::default();
        let m = model(&space);
        let evaluated: HashSet<IntParams> = m.training_inputs().iter().map(|p| p.truncate()).collect();
        for acq in [Acquisition::ExpectedImprovement, Acquisition::UpperConfidenceBound { kappa: 2.0 }] {
            let a = propose_next(&m, &space, acq, &evaluated, 99).unwrap();
            assert_eq!(a, propose_next(&m, &space, acq, &evaluated, 99).unwrap());
            let score = |p: RawParams| {
                let (mu, sd) = m.predict(p);
                acq.score(mu, sd, m.best_target())
            };
            let chosen = score(a);
            for c in candidate_set(&m, &space, 99) {
                if !evaluated.contains(&c.truncate()) {
                    assert!(chosen >= score(c));
                }
            }
        }
    }
}
