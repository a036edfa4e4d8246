//! Randomized diagnostics for the GW inequalities, run by the `check` verb.

use lrot::gw::{
    error_cost_check, error_sinkhorn_check, gw_energy_bruteforce, gw_energy_fast, gw_energy_lipschitz_check, GwProblem,
    Plan, Similarity,
};
use lrot::{round_to_polytope, Histogram};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// The error-cost and inexact-Sinkhorn checks tolerate this factor on their right-hand side.
pub const LEMMA_SLACK: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` seen; for the energy identity `rhs` is the tolerance.
    pub worst: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {:>5} trials  {:>3} violations  worst lhs/rhs {:.3e}  {}",
            self.name,
            self.trials,
            self.violations,
            self.worst,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

fn histogram(rng: &mut impl Rng, n: usize) -> Histogram {
    Histogram::normalized(Array1::from_shape_fn(n, |_| rng.random::<f64>() + 0.1)).expect("positive weights")
}

fn similarity(rng: &mut impl Rng, n: usize) -> Similarity {
    let a = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() - 0.5);
    Similarity::factored(a).expect("finite factor")
}

fn problem(rng: &mut impl Rng, n: usize, m: usize) -> GwProblem {
    let (a, b) = (histogram(rng, n), histogram(rng, m));
    GwProblem::new(similarity(rng, n), similarity(rng, m), a, b).expect("consistent shapes")
}

fn feasible(rng: &mut impl Rng, a: &Histogram, b: &Histogram) -> Result<Array2<f64>> {
    let p = Array2::from_shape_fn((a.len(), b.len()), |_| rng.random::<f64>());
    let p = &p / p.sum();
    Ok(round_to_polytope(&p, a, b)?)
}

fn simplex(rng: &mut impl Rng, n: usize, m: usize) -> Array2<f64> {
    let p = Array2::from_shape_fn((n, m), |_| rng.random::<f64>());
    &p / p.sum()
}

fn tally(name: &'static str, pairs: impl IntoIterator<Item = Result<(f64, f64)>>, slack: f64) -> Result<CheckResult> {
    let mut out = CheckResult {
        name,
        trials: 0,
        violations: 0,
        worst: 0.0,
    };
    for pair in pairs {
        let (lhs, rhs) = pair?;
        out.trials += 1;
        out.violations += usize::from(lhs > slack * rhs);
        out.worst = out.worst.max(if rhs > 0.0 { lhs / rhs } else { lhs });
    }
    Ok(out)
}

/// Energy identity, Lipschitz bound, error-cost and inexact-Sinkhorn bounds on random instances.
pub fn run_checks(seed: u64, trials: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let energy = (0..trials)
        .map(|_| {
            let (n, m) = (rng.random_range(2..=8), rng.random_range(2..=8));
            let prob = problem(&mut rng, n, m);
            let p = feasible(&mut rng, &prob.a, &prob.b)?;
            let brute = gw_energy_bruteforce(&prob, p.view())?;
            let fast = gw_energy_fast(&prob, Plan::Dense(p.view()))?;
            Ok(((fast - brute).abs(), 1e-10))
        })
        .collect::<Vec<_>>();
    let lipschitz = (0..trials)
        .map(|_| {
            let prob = problem(&mut rng, 4, 4);
            let (p1, p2) = (simplex(&mut rng, 4, 4), simplex(&mut rng, 4, 4));
            gw_energy_lipschitz_check(&prob.d, &prob.d_prime, p1.view(), p2.view()).map_err(Into::into)
        })
        .collect::<Vec<_>>();
    let cost_trials = trials.min(50);
    let error_cost = (0..cost_trials)
        .map(|_| {
            let prob = problem(&mut rng, 5, 5);
            let p1 = feasible(&mut rng, &prob.a, &prob.b)?;
            let p2 = feasible(&mut rng, &prob.a, &prob.b)?;
            error_cost_check(&prob, 0.05, p1.view(), p2.view()).map_err(Into::into)
        })
        .collect::<Vec<_>>();
    let error_sinkhorn = (0..cost_trials)
        .filter_map(|k| {
            let (a, b) = (histogram(&mut rng, 6), histogram(&mut rng, 5));
            let c = Array2::from_shape_fn((6, 5), |_| rng.random::<f64>());
            match error_sinkhorn_check(&c, &a, &b, 0.1, 1 + k % 10) {
                // The bound assumes a violation of at most 1.
                Ok((_, _, delta)) if delta > 1.0 => None,
                Ok((lhs, rhs, _)) => Some(Ok((lhs, rhs))),
                Err(e) => Some(Err(e.into())),
            }
        })
        .collect::<Vec<_>>();
    Ok(vec![
        tally("energy-identity", energy, 1.0)?,
        tally("energy-lipschitz", lipschitz, 1.0)?,
        tally("error-cost", error_cost, LEMMA_SLACK)?,
        tally("error-sinkhorn", error_sinkhorn, LEMMA_SLACK)?,
    ])
}
