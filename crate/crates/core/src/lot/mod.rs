//! Low-rank optimal transport by mirror descent in KL geometry.
//!
//! The coupling is kept as `P = Q Diag(1/g) R^T`. Each outer step builds the
//! kernel triple `xi` from the gradient of the entropic objective and
//! projects it back onto `C1(a, b, r, alpha) ∩ C2(r)` with Dykstra's algorithm.

mod dykstra;

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

pub use dykstra::{lr_dykstra, project_c1, project_c2, DykstraOptions, InnerOutput};
pub(crate) use dykstra::{assemble, div, finite_positive, stopping_quantity};

use crate::cost::CostOperator;
use crate::error::{shape_err, Error, Result};
use crate::linalg::COST_NORM_POWER_STEPS;
use crate::types::{FactoredCoupling, Histogram, SolverReport};

/// Entries are floored here before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-200;

/// Positive triple `(xi1, xi2, xi3)` of shapes `n x r`, `m x r`, `r` fed to the inner projections.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTriple {
    pub xi1: Array2<f64>,
    pub xi2: Array2<f64>,
    pub xi3: Array1<f64>,
}

impl KernelTriple {
    pub fn new(xi1: Array2<f64>, xi2: Array2<f64>, xi3: Array1<f64>) -> Result<Self> {
        let r = xi3.len();
        if xi1.ncols() != r || xi2.ncols() != r {
            return Err(shape_err(
                format!("xi1, xi2 with {r} columns"),
                format!("{:?}, {:?}", xi1.dim(), xi2.dim()),
            ));
        }
        for (what, it) in [
            ("xi1", Box::new(xi1.iter()) as Box<dyn Iterator<Item = &f64>>),
            ("xi2", Box::new(xi2.iter())),
            ("xi3", Box::new(xi3.iter())),
        ] {
            if let Some((index, &value)) = it.enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::NonPositive { what, index, value });
            }
        }
        Ok(KernelTriple { xi1, xi2, xi3 })
    }

    /// `(n, m, r)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.xi1.nrows(), self.xi2.nrows(), self.xi3.len())
    }

    pub fn rank(&self) -> usize {
        self.xi3.len()
    }
}

impl From<FactoredCoupling> for KernelTriple {
    fn from(fc: FactoredCoupling) -> Self {
        KernelTriple {
            xi1: fc.q,
            xi2: fc.r,
            xi3: fc.g,
        }
    }
}

/// Step-size policy for the outer mirror-descent loop.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    /// `1 / (2 L)` from the smoothness constant, with `||C||_2` from power iteration.
    Theoretical,
    Constant(f64),
    /// Per-iteration steps; the last one is repeated once exhausted.
    Sequence(Vec<f64>),
}

impl StepSchedule {
    fn at(&self, k: usize, theoretical: f64) -> f64 {
        match self {
            StepSchedule::Theoretical => theoretical,
            StepSchedule::Constant(g) => *g,
            StepSchedule::Sequence(s) => s[k.min(s.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |g: f64| !(g > 0.0 && g.is_finite());
        match self {
            StepSchedule::Theoretical => Ok(()),
            StepSchedule::Constant(g) if bad(*g) => {
                Err(Error::InvalidParameter(format!("step size must be positive, got {g}")))
            }
            StepSchedule::Sequence(s) if s.is_empty() || s.iter().any(|g| bad(*g)) => {
                Err(Error::InvalidParameter("step sequence must be nonempty and positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LotConfig {
    pub rank: usize,
    pub epsilon: f64,
    /// Lower bound on the inner marginal `g`; must not exceed `1 / rank`.
    pub alpha: f64,
    pub step: StepSchedule,
    pub max_iter: usize,
    /// Outer loop stops once the Δ criterion falls below this value.
    pub stop_tol: f64,
    pub inner: DykstraOptions,
    pub seed: u64,
    /// Starting point; drawn by [`init_factors`] when absent.
    pub init: Option<FactoredCoupling>,
    /// Keep every outer iterate in the solution (for diagnostics; memory heavy).
    pub record_iterates: bool,
}

impl LotConfig {
    pub fn new(rank: usize, epsilon: f64) -> Self {
        LotConfig {
            rank,
            epsilon,
            alpha: 1e-5,
            step: StepSchedule::Theoretical,
            max_iter: 1000,
            stop_tol: 1e-7,
            inner: DykstraOptions::for_epsilon(epsilon),
            seed: 0,
            init: None,
            record_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0) || self.alpha * self.rank as f64 > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1/r] = (0, {}], got {}",
                1.0 / self.rank as f64,
                self.alpha
            )));
        }
        self.step.validate()
    }
}

/// `L_{eps,alpha} = sqrt(3 (2 c^2 / alpha^4 + ((eps + 2c) / alpha^3)^2))` with `c = ||C||_2`.
pub fn smoothness_constant(eps: f64, alpha: f64, cnorm2: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let t1 = 2.0 * cnorm2 * cnorm2 / alpha.powi(4);
    let t2 = (eps + 2.0 * cnorm2) / alpha.powi(3);
    Ok((3.0 * (t1 + t2 * t2)).sqrt())
}

fn floored_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

fn check_factor_shapes(c: &CostOperator, fc: &FactoredCoupling) -> Result<()> {
    if fc.shape() != c.shape() {
        return Err(shape_err(format!("{:?}", c.shape()), format!("{:?}", fc.shape())));
    }
    Ok(())
}

/// Logarithms of the three kernel blocks.
fn log_kernel_triple(c: &CostOperator, fc: &FactoredCoupling, gamma: f64, eps: f64) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let inv_g = fc.g.mapv(|x| 1.0 / x).insert_axis(Axis(0));
    let cr = c.apply(fc.r.view()) * &inv_g;
    let ctq = c.apply_t(fc.q.view()) * &inv_g;
    let omega = (&fc.q * &(&cr * &fc.g.view().insert_axis(Axis(0)))).sum_axis(Axis(0));
    let coef = gamma * eps - 1.0;
    let l1 = Zip::from(&cr).and(&fc.q).map_collect(|g, q| -gamma * g - coef * floored_ln(*q));
    let l2 = Zip::from(&ctq).and(&fc.r).map_collect(|g, r| -gamma * g - coef * floored_ln(*r));
    let l3 = Zip::from(&omega).and(&fc.g).map_collect(|w, g| gamma * w / (g * g) - coef * floored_ln(*g));
    (l1, l2, l3)
}

fn nonfinite_triple(l3: &Array1<f64>) -> Result<()> {
    if l3.iter().any(|x| !x.is_finite() || x.exp() == f64::INFINITY) {
        return Err(Error::NumericalRange {
            solver: "build_kernel_triple",
            detail: "xi3 overflows; reduce the step size".into(),
        });
    }
    Ok(())
}

/// Mirror-descent kernels at the current iterate:
/// `xi1 = exp(-γ C R/g - (γε-1) log Q)`, `xi2 = exp(-γ C^T Q/g - (γε-1) log R)`,
/// `xi3 = exp(γ ω/g^2 - (γε-1) log g)` with `ω = diag(Q^T C R)`.
pub fn build_kernel_triple(c: &CostOperator, fc: &FactoredCoupling, gamma: f64, eps: f64) -> Result<KernelTriple> {
    check_factor_shapes(c, fc)?;
    let (l1, l2, l3) = log_kernel_triple(c, fc, gamma, eps);
    nonfinite_triple(&l3)?;
    Ok(KernelTriple {
        xi1: l1.mapv(f64::exp),
        xi2: l2.mapv(f64::exp),
        xi3: l3.mapv(f64::exp),
    })
}

/// Same projection problem as [`build_kernel_triple`] with every row of `xi1`, `xi2`
/// divided by its maximum. Row scalings are absorbed by the row scaling vectors of
/// the inner loop, so the projection is unchanged while `exp` stays in range.
pub(crate) fn build_kernel_triple_stabilized(
    c: &CostOperator,
    fc: &FactoredCoupling,
    gamma: f64,
    eps: f64,
) -> Result<KernelTriple> {
    let (l1, l2, l3) = log_kernel_triple(c, fc, gamma, eps);
    nonfinite_triple(&l3)?;
    Ok(KernelTriple {
        xi1: row_max_exp(l1),
        xi2: row_max_exp(l2),
        xi3: l3.mapv(f64::exp),
    })
}

pub(crate) fn row_max_exp(mut l: Array2<f64>) -> Array2<f64> {
    for mut row in l.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
    }
    l
}

fn entropy_term(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        -x * (x.ln() - 1.0)
    }
}

/// `F_ε(Q, R, g) = <C, Q Diag(1/g) R^T> - ε (H(Q) + H(R) + H(g))`.
pub fn objective(c: &CostOperator, fc: &FactoredCoupling, eps: f64) -> Result<f64> {
    let cost = c.factored_inner(fc)?;
    if eps == 0.0 {
        return Ok(cost);
    }
    let h: f64 = fc.q.iter().chain(fc.r.iter()).chain(fc.g.iter()).map(|&x| entropy_term(x)).sum();
    Ok(cost - eps * h)
}

/// Gradient blocks of [`objective`]: `(C R/g + ε log Q, C^T Q/g + ε log R, -ω/g^2 + ε log g)`.
pub fn gradient(c: &CostOperator, fc: &FactoredCoupling, eps: f64) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    check_factor_shapes(c, fc)?;
    let inv_g = fc.g.mapv(|x| 1.0 / x).insert_axis(Axis(0));
    let cr = c.apply(fc.r.view());
    let omega = (&fc.q * &cr).sum_axis(Axis(0));
    let gq = &cr * &inv_g + fc.q.mapv(floored_ln) * eps;
    let gr = c.apply_t(fc.q.view()) * &inv_g + fc.r.mapv(floored_ln) * eps;
    let gg = Zip::from(&omega).and(&fc.g).map_collect(|w, g| -w / (g * g) + eps * floored_ln(*g));
    Ok((gq, gr, gg))
}

fn sym_kl_block<'a>(x: impl Iterator<Item = &'a f64>, z: impl Iterator<Item = &'a f64>) -> f64 {
    x.zip(z).map(|(&x, &z)| (x - z) * (floored_ln(x) - floored_ln(z))).sum()
}

/// `Δ = (KL(x, x⁺) + KL(x⁺, x)) / γ^2` summed over the three blocks, with the
/// Bregman divergence of the negative entropy (nonnegative by construction).
pub fn delta_criterion(current: &FactoredCoupling, next: &FactoredCoupling, gamma: f64) -> Result<f64> {
    if current.q.dim() != next.q.dim() || current.r.dim() != next.r.dim() || current.g.len() != next.g.len() {
        return Err(shape_err(
            format!("{:?}, {:?}, {}", current.q.dim(), current.r.dim(), current.g.len()),
            format!("{:?}, {:?}, {}", next.q.dim(), next.r.dim(), next.g.len()),
        ));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {gamma}")));
    }
    let s = sym_kl_block(current.q.iter(), next.q.iter())
        + sym_kl_block(current.r.iter(), next.r.iter())
        + sym_kl_block(current.g.iter(), next.g.iter());
    Ok(s / (gamma * gamma))
}

fn dirichlet_ones(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let x = Array1::from_shape_fn(n, |_| {
        let e: f64 = Exp1.sample(rng);
        e.max(f64::MIN_POSITIVE)
    });
    let s = x.sum();
    x / s
}

/// Non-trivial feasible starting point with uniform inner marginal `g = 1_r / r`.
pub fn init_factors(a: &Histogram, b: &Histogram, r: usize, seed: u64) -> Result<FactoredCoupling> {
    if r == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    init_factors_with_g(a, b, &Histogram::uniform(r), seed)
}

/// Mixes two product couplings through seeded Dirichlet(1) draws:
/// `Q = λ a1 g1^T + (1-λ) a2 g2^T` with `λ = min(a, b, g) / 2` and `a2 = (a - λ a1)/(1-λ)`.
pub fn init_factors_with_g(a: &Histogram, b: &Histogram, g: &Histogram, seed: u64) -> Result<FactoredCoupling> {
    a.require_positive("a")?;
    b.require_positive("b")?;
    g.require_positive("g")?;
    let col = |v: &Array1<f64>| v.view().insert_axis(Axis(1)).to_owned();
    if g.len() == 1 {
        return Ok(FactoredCoupling {
            q: col(a.weights()),
            r: col(b.weights()),
            g: Array1::ones(1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = dirichlet_ones(&mut rng, a.len());
    let b1 = dirichlet_ones(&mut rng, b.len());
    let g1 = dirichlet_ones(&mut rng, g.len());
    let min = |h: &Histogram| h.weights().fold(f64::INFINITY, |m, &x| m.min(x));
    let lambda = min(a).min(min(b)).min(min(g)) / 2.0;
    let mix = |p: &Array1<f64>, p1: &Array1<f64>| (p - &(p1 * lambda)) / (1.0 - lambda);
    let a2 = mix(a.weights(), &a1);
    let b2 = mix(b.weights(), &b1);
    let g2 = mix(g.weights(), &g1);
    let outer = |x: &Array1<f64>, y: &Array1<f64>| {
        x.view().insert_axis(Axis(1)).dot(&y.view().insert_axis(Axis(0)))
    };
    let q = outer(&a1, &g1) * lambda + outer(&a2, &g2) * (1.0 - lambda);
    let r = outer(&b1, &g1) * lambda + outer(&b2, &g2) * (1.0 - lambda);
    Ok(FactoredCoupling {
        q,
        r,
        g: g.weights().clone(),
    })
}

#[derive(Debug, Clone)]
pub struct LotSolution {
    pub coupling: FactoredCoupling,
    /// `<C, Q Diag(1/g) R^T>` at the returned iterate.
    pub cost: f64,
    pub report: SolverReport,
    /// Transport cost of every outer iterate.
    pub cost_trace: Vec<f64>,
    /// `F_ε` at the starting point.
    pub initial_objective: f64,
    /// Step size used at each outer iteration.
    pub steps: Vec<f64>,
    /// Outer iterates, kept when `record_iterates` is set.
    pub iterates: Vec<FactoredCoupling>,
}

pub(crate) fn rank_one_solution(c: &CostOperator, a: &Histogram, b: &Histogram, eps: f64, start: Instant) -> Result<LotSolution> {
    let fc = FactoredCoupling {
        q: a.weights().view().insert_axis(Axis(1)).to_owned(),
        r: b.weights().view().insert_axis(Axis(1)).to_owned(),
        g: Array1::ones(1),
    };
    let cost = c.matvec(b.view()).dot(a.weights());
    let obj = objective(c, &fc, eps)?;
    let report = SolverReport {
        converged: true,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    Ok(LotSolution {
        coupling: fc,
        cost,
        report,
        cost_trace: Vec::new(),
        initial_objective: obj,
        steps: Vec::new(),
        iterates: Vec::new(),
    })
}

pub(crate) fn check_problem(c: &CostOperator, a: &Histogram, b: &Histogram) -> Result<()> {
    if c.shape() != (a.len(), b.len()) {
        return Err(shape_err(format!("{:?}", c.shape()), format!("({}, {})", a.len(), b.len())));
    }
    a.require_positive("a")?;
    b.require_positive("b")
}

pub(crate) fn init_or_given(
    init: &Option<FactoredCoupling>,
    a: &Histogram,
    b: &Histogram,
    rank: usize,
    seed: u64,
) -> Result<FactoredCoupling> {
    match init {
        Some(fc) => {
            if fc.rank() != rank || fc.shape() != (a.len(), b.len()) {
                return Err(shape_err(
                    format!("initial factors of rank {rank} and shape ({}, {})", a.len(), b.len()),
                    format!("rank {} and shape {:?}", fc.rank(), fc.shape()),
                ));
            }
            Ok(fc.clone())
        }
        None => init_factors(a, b, rank, seed),
    }
}

/// Mirror descent on `LOT_{r,ε,α}` with Dykstra inner projections.
pub fn lot_solve(c: &CostOperator, a: &Histogram, b: &Histogram, cfg: &LotConfig) -> Result<LotSolution> {
    let start = Instant::now();
    cfg.validate()?;
    check_problem(c, a, b)?;
    if cfg.rank == 1 {
        return rank_one_solution(c, a, b, cfg.epsilon, start);
    }
    let theoretical = match cfg.step {
        StepSchedule::Theoretical => {
            0.5 / smoothness_constant(cfg.epsilon, cfg.alpha, c.spectral_norm(COST_NORM_POWER_STEPS))?
        }
        _ => f64::NAN,
    };
    let mut fc = init_or_given(&cfg.init, a, b, cfg.rank, cfg.seed)?;
    let initial_objective = objective(c, &fc, cfg.epsilon)?;
    let mut report = SolverReport::default();
    let mut cost_trace = Vec::new();
    let mut steps = Vec::new();
    let mut iterates = Vec::new();
    for k in 0..cfg.max_iter {
        let gamma = cfg.step.at(k, theoretical);
        let gamma = if gamma.is_finite() && gamma > 0.0 { gamma } else { f64::MIN_POSITIVE };
        let xi = build_kernel_triple_stabilized(c, &fc, gamma, cfg.epsilon)?;
        let inner = lr_dykstra(&xi, a, b, cfg.alpha, &cfg.inner)?;
        let delta = delta_criterion(&fc, &inner.coupling, gamma)?;
        fc = inner.coupling;
        let cost = c.factored_inner(&fc)?;
        report.push(
            objective(c, &fc, cfg.epsilon)?,
            delta,
            fc.constraint_violation(a, b),
            inner.sweeps,
        );
        cost_trace.push(cost);
        steps.push(gamma);
        if cfg.record_iterates {
            iterates.push(fc.clone());
        }
        if delta < cfg.stop_tol {
            report.converged = true;
            break;
        }
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(LotSolution {
        cost: c.factored_inner(&fc)?,
        coupling: fc,
        report,
        cost_trace,
        initial_objective,
        steps,
        iterates,
    })
}

/// `l1` distance between two factor triples.
pub fn triple_l1_distance(x: &FactoredCoupling, y: &FactoredCoupling) -> f64 {
    let d = |p: ArrayView2<f64>, q: ArrayView2<f64>| -> f64 { (&p - &q).mapv(f64::abs).sum() };
    d(x.q.view(), y.q.view()) + d(x.r.view(), y.r.view()) + (&x.g - &y.g).mapv(f64::abs).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (CostOperator, Histogram, Histogram) {
        let c = Array2::from_shape_fn((n, m), |_| rng.random::<f64>());
        let a = Histogram::normalized(Array1::from_shape_fn(n, |_| rng.random::<f64>() + 0.1)).unwrap();
        let b = Histogram::normalized(Array1::from_shape_fn(m, |_| rng.random::<f64>() + 0.1)).unwrap();
        (CostOperator::dense(c).unwrap(), a, b)
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_constant(0.0, 0.5, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(smoothness_constant(1.0, 1.0, 1.0).unwrap(), 33f64.sqrt(), epsilon = 1e-14);
        let l1 = smoothness_constant(0.0, 0.2, 1.0).unwrap();
        let l2 = smoothness_constant(0.0, 0.1, 1.0).unwrap();
        // the alpha^-4 and alpha^-6 terms sit under a square root
        assert!(l2 / l1 >= 4.0 && l2 / l1 <= 8.0);
        assert!(smoothness_constant(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn kernel_triple_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, a, b) = random_problem(&mut rng, 4, 3);
        let fc = init_factors(&a, &b, 2, 7).unwrap();
        // γε = 1 removes the log terms
        let xi = build_kernel_triple(&c, &fc, 2.0, 0.5).unwrap();
        let (gq, _, _) = gradient(&c, &fc, 0.0).unwrap();
        for (x, g) in xi.xi1.iter().zip(gq.iter()) {
            assert_abs_diff_eq!(x.ln(), -2.0 * g, epsilon = 1e-12);
        }
        // zero cost leaves powers of the current factors
        let zero = CostOperator::dense(Array2::zeros((4, 3))).unwrap();
        let xi = build_kernel_triple(&zero, &fc, 0.5, 1.0).unwrap();
        for (x, q) in xi.xi1.iter().zip(fc.q.iter()) {
            assert_abs_diff_eq!(*x, q.powf(0.5), epsilon = 1e-14);
        }
        for (x, g) in xi.xi3.iter().zip(fc.g.iter()) {
            assert_abs_diff_eq!(*x, g.powf(0.5), epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_triple_dense_matches_factored() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fa = Array2::from_shape_fn((5, 2), |_| rng.random::<f64>());
        let fb = Array2::from_shape_fn((4, 2), |_| rng.random::<f64>());
        let dense = CostOperator::dense(fa.dot(&fb.t())).unwrap();
        let fact = CostOperator::factored(fa, fb).unwrap();
        let fc = init_factors(&Histogram::uniform(5), &Histogram::uniform(4), 3, 1).unwrap();
        let x = build_kernel_triple(&dense, &fc, 0.7, 0.3).unwrap();
        let y = build_kernel_triple(&fact, &fc, 0.7, 0.3).unwrap();
        for (p, q) in x.xi1.iter().chain(x.xi2.iter()).chain(x.xi3.iter()).zip(
            y.xi1.iter().chain(y.xi2.iter()).chain(y.xi3.iter()),
        ) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn stabilized_kernels_give_the_same_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (c, a, b) = random_problem(&mut rng, 4, 5);
        let fc = init_factors(&a, &b, 2, 3).unwrap();
        let opts = DykstraOptions::for_epsilon(0.1);
        let exact = lr_dykstra(&build_kernel_triple(&c, &fc, 3.0, 0.1).unwrap(), &a, &b, 0.01, &opts).unwrap();
        let stab = lr_dykstra(&build_kernel_triple_stabilized(&c, &fc, 3.0, 0.1).unwrap(), &a, &b, 0.01, &opts).unwrap();
        assert!(triple_l1_distance(&exact.coupling, &stab.coupling) < 1e-9);
    }

    #[test]
    fn init_factors_properties() {
        let a = Histogram::new(array![0.2, 0.3, 0.5]).unwrap();
        let b = Histogram::new(array![0.6, 0.1, 0.3]).unwrap();
        let one = init_factors(&a, &b, 1, 99).unwrap();
        assert_eq!(one.q.column(0), a.view());
        assert_eq!(one.g, array![1.0]);
        for seed in 0..20 {
            let fc = init_factors(&a, &b, 2, seed).unwrap();
            assert!(fc.constraint_violation(&a, &b) < 1e-12);
            assert_eq!(fc.g, array![0.5, 0.5]);
            assert!(fc.q.iter().chain(fc.r.iter()).all(|&x| x > 0.0));
            let trivial = Zip::from(&fc.q).fold(0.0f64, |m, &x| m.max(x));
            assert!(trivial > 0.0);
            let dist: f64 = fc
                .q
                .indexed_iter()
                .map(|((i, k), x)| (x - a.weights()[i] * fc.g[k]).abs())
                .sum();
            assert!(dist > 1e-6, "seed {seed} produced the trivial point");
        }
        let x = init_factors(&a, &b, 2, 42).unwrap();
        let y = init_factors(&a, &b, 2, 42).unwrap();
        assert_eq!(x, y);
    }

    /// Recorded from the first implementation; guards against silent changes of
    /// the seeded initialization.
    #[test]
    fn init_factors_golden() {
        let u = Histogram::uniform(3);
        let fc = init_factors(&u, &u, 2, 42).unwrap();
        let golden = include_str!("../../tests/data/init_seed42.json");
        let expect: serde_json::Value = serde_json::from_str(golden).unwrap();
        let q: Vec<f64> = serde_json::from_value(expect["q"].clone()).unwrap();
        let r: Vec<f64> = serde_json::from_value(expect["r"].clone()).unwrap();
        assert_eq!(fc.q.iter().copied().collect::<Vec<_>>(), q);
        assert_eq!(fc.r.iter().copied().collect::<Vec<_>>(), r);
    }

    #[test]
    fn delta_examples() {
        let fc = init_factors(&Histogram::uniform(3), &Histogram::uniform(3), 2, 5).unwrap();
        assert_eq!(delta_criterion(&fc, &fc, 0.3).unwrap(), 0.0);
        let other = init_factors(&Histogram::uniform(3), &Histogram::uniform(3), 2, 6).unwrap();
        assert!(delta_criterion(&fc, &other, 0.3).unwrap() > 0.0);
    }

    /// Central differences of the objective along each coordinate.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (c, a, b) = random_problem(&mut rng, 3, 4);
        let fc = init_factors(&a, &b, 2, 1).unwrap();
        let eps = 0.3;
        let (gq, gr, gg) = gradient(&c, &fc, eps).unwrap();
        let h = 1e-6;
        let check = |fd: f64, an: f64| assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
        for ((i, k), an) in gq.indexed_iter() {
            let (mut p, mut m) = (fc.clone(), fc.clone());
            p.q[[i, k]] += h;
            m.q[[i, k]] -= h;
            let fd = (objective(&c, &p, eps).unwrap() - objective(&c, &m, eps).unwrap()) / (2.0 * h);
            check(fd, *an);
        }
        for ((j, k), an) in gr.indexed_iter() {
            let (mut p, mut m) = (fc.clone(), fc.clone());
            p.r[[j, k]] += h;
            m.r[[j, k]] -= h;
            let fd = (objective(&c, &p, eps).unwrap() - objective(&c, &m, eps).unwrap()) / (2.0 * h);
            check(fd, *an);
        }
        for idx in 0..fc.g.len() {
            let (mut p, mut m) = (fc.clone(), fc.clone());
            p.g[idx] += h;
            m.g[idx] -= h;
            let fd = (objective(&c, &p, eps).unwrap() - objective(&c, &m, eps).unwrap()) / (2.0 * h);
            check(fd, gg[idx]);
        }
    }

    #[test]
    fn rank_one_and_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (c, a, b) = random_problem(&mut rng, 5, 4);
        let sol = lot_solve(&c, &a, &b, &LotConfig::new(1, 0.1)).unwrap();
        let dense = c.to_dense();
        let exact: f64 = a.weights().dot(&dense.dot(b.weights()));
        assert_abs_diff_eq!(sol.cost, exact, epsilon = 1e-14);

        let zero = CostOperator::dense(Array2::zeros((5, 4))).unwrap();
        let cfg = LotConfig {
            max_iter: 5,
            step: StepSchedule::Constant(1.0),
            ..LotConfig::new(2, 0.0)
        };
        let sol = lot_solve(&zero, &a, &b, &cfg).unwrap();
        assert!(sol.cost_trace.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn iterates_stay_feasible_and_traces_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (c, a, b) = random_problem(&mut rng, 6, 5);
        let cfg = LotConfig {
            max_iter: 30,
            alpha: 0.01,
            step: StepSchedule::Constant(5.0),
            ..LotConfig::new(3, 0.05)
        };
        let sol = lot_solve(&c, &a, &b, &cfg).unwrap();
        let n = sol.report.iterations();
        assert!(n > 0);
        assert_eq!(sol.report.delta.len(), n);
        assert_eq!(sol.report.marginal_violation.len(), n);
        assert_eq!(sol.report.inner_iterations.len(), n);
        assert_eq!(sol.cost_trace.len(), n);
        assert!(sol.report.marginal_violation.iter().all(|&v| v < 1e-8));
        assert!(sol.coupling.g.iter().all(|&g| g >= 0.01 - 1e-9));
    }

    #[test]
    fn config_validation() {
        let a = Histogram::uniform(3);
        let c = CostOperator::dense(Array2::ones((3, 3))).unwrap();
        let bad_alpha = LotConfig { alpha: 0.6, ..LotConfig::new(2, 0.1) };
        assert!(lot_solve(&c, &a, &a, &bad_alpha).is_err());
        assert!(lot_solve(&c, &a, &a, &LotConfig::new(0, 0.1)).is_err());
        let bad_step = LotConfig { step: StepSchedule::Constant(-1.0), ..LotConfig::new(2, 0.1) };
        assert!(lot_solve(&c, &a, &a, &bad_step).is_err());
    }
}
