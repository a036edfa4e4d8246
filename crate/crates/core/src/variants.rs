//! Low-rank OT variants: fixed inner marginal (two Sinkhorn solves per step)
//! and free inner marginal without a lower bound (iterative Bregman projections).

use std::time::Instant;

use ndarray::{Array1, Array2, Axis, Zip};

use crate::cost::CostOperator;
use crate::error::{Error, Result};
use crate::linalg::COST_NORM_POWER_STEPS;
use crate::lot::{
    assemble, build_kernel_triple_stabilized, check_problem, delta_criterion, div, finite_positive, init_factors_with_g,
    init_or_given, objective, rank_one_solution, smoothness_constant, stopping_quantity, DykstraOptions, InnerOutput,
    KernelTriple, LotConfig, LotSolution, StepSchedule, LOG_FLOOR,
};
use crate::sinkhorn::{round_to_polytope, sinkhorn_capped, sinkhorn_log, KernelOp, SinkhornOptions};
use crate::types::{FactoredCoupling, Histogram, SolverReport};

/// `L_ε = sqrt(2 (||C||_2^2 ||Diag(1/g)||_2^2 + ε^2))`; the default step is `1 / L_ε`.
pub fn fixed_marginal_smoothness(eps: f64, g: &Array1<f64>, cnorm2: f64) -> Result<f64> {
    crate::types::require_positive(g.iter().copied(), "g")?;
    let inv = g.iter().fold(0.0f64, |m, &x| m.max(1.0 / x));
    Ok((2.0 * (cnorm2 * cnorm2 * inv * inv + eps * eps)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedMarginalConfig {
    /// Inner marginal, kept fixed throughout.
    pub g: Histogram,
    pub epsilon: f64,
    pub step: StepSchedule,
    pub max_iter: usize,
    /// Outer loop stops once Δ falls below this value.
    pub stop_tol: f64,
    pub sinkhorn: SinkhornOptions,
    pub seed: u64,
    pub init: Option<FactoredCoupling>,
    pub record_iterates: bool,
}

impl FixedMarginalConfig {
    pub fn new(g: Histogram, epsilon: f64) -> Self {
        FixedMarginalConfig {
            g,
            epsilon,
            step: StepSchedule::Theoretical,
            max_iter: 1000,
            stop_tol: 1e-7,
            sinkhorn: SinkhornOptions {
                max_iter: 100_000,
                ..SinkhornOptions::with_tol(1e-9)
            },
            seed: 0,
            init: None,
            record_iterates: false,
        }
    }

    pub fn uniform(rank: usize, epsilon: f64) -> Self {
        Self::new(Histogram::uniform(rank.max(1)), epsilon)
    }
}

/// Entropic OT sub-step on a kernel given by its logarithm, falling back to the
/// log domain when the plain scaling vectors leave the floating-point range.
///
/// Kernels of nearly deterministic sub-couplings are close to block-decomposable and
/// Sinkhorn can stall short of `opts.tol`; the last iterate is then rounded onto `Π(p, g)`.
pub(crate) fn solve_block(log_k: Array2<f64>, p: &Histogram, g: &Histogram, opts: &SinkhornOptions) -> Result<(Array2<f64>, usize)> {
    let mut stab = log_k.clone();
    for mut row in stab.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
    }
    let k = KernelOp::Dense(stab);
    let (plan, iterations, violation) = match sinkhorn_capped(&k, p, g, None, opts) {
        Ok(out) => (out.scaling.coupling(&k), out.iterations, out.violation),
        Err(Error::NumericalRange { .. }) => {
            let (s, out) = sinkhorn_log(&log_k, p, g, opts)?;
            (s.coupling(&log_k), out.iterations, out.violation)
        }
        Err(e) => return Err(e),
    };
    if violation < opts.tol {
        return Ok((plan, iterations));
    }
    log::warn!("Sinkhorn sub-step stopped at violation {violation:e} > {:e}; rounding", opts.tol);
    Ok((round_to_polytope(&plan, p, g)?, iterations))
}

pub(crate) fn is_trivial(fc: &FactoredCoupling, a: &Histogram, b: &Histogram) -> bool {
    let off = |m: &Array2<f64>, p: &Array1<f64>| {
        m.indexed_iter().all(|((i, k), x)| (x - p[i] * fc.g[k]).abs() <= 1e-12)
    };
    off(&fc.q, a.weights()) && off(&fc.r, b.weights())
}

fn fixed_objective(c: &CostOperator, fc: &FactoredCoupling, eps: f64) -> Result<f64> {
    // the g-entropy is constant here, so drop it from the reported value
    let full = objective(c, fc, eps)?;
    let hg: f64 = fc.g.iter().map(|&x| -x * (x.ln() - 1.0)).sum();
    Ok(full + eps * hg)
}

/// Mirror descent over `(Q, R) ∈ Π(a, g) × Π(b, g)` with `g` fixed; every step
/// solves two entropic OT problems with costs `C R/g + (ε - 1/γ) log Q` and `C^T Q/g + (ε - 1/γ) log R`.
pub fn lot_fixed_marginal(c: &CostOperator, a: &Histogram, b: &Histogram, cfg: &FixedMarginalConfig) -> Result<LotSolution> {
    let start = Instant::now();
    check_problem(c, a, b)?;
    cfg.g.require_positive("g")?;
    if !(cfg.epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", cfg.epsilon)));
    }
    if cfg.g.len() == 1 {
        return rank_one_solution(c, a, b, 0.0, start).map(|mut s| {
            s.initial_objective = s.cost;
            s
        });
    }
    let theoretical = match cfg.step {
        StepSchedule::Theoretical => {
            1.0 / fixed_marginal_smoothness(cfg.epsilon, cfg.g.weights(), c.spectral_norm(COST_NORM_POWER_STEPS))?
        }
        _ => f64::NAN,
    };
    let g = &cfg.g;
    let mut fc = match &cfg.init {
        Some(_) => init_or_given(&cfg.init, a, b, g.len(), cfg.seed)?,
        None => init_factors_with_g(a, b, g, cfg.seed)?,
    };
    if (&fc.g - g.weights()).iter().any(|x| x.abs() > 1e-12) {
        return Err(Error::InvalidParameter("initial factors do not carry the fixed inner marginal".into()));
    }
    if is_trivial(&fc, a, b) {
        return Err(Error::TrivialFixedPoint);
    }
    let initial_objective = fixed_objective(c, &fc, cfg.epsilon)?;
    let mut report = SolverReport::default();
    let (mut cost_trace, mut steps, mut iterates) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..cfg.max_iter {
        let gamma = match cfg.step {
            StepSchedule::Theoretical => theoretical,
            StepSchedule::Constant(s) => s,
            StepSchedule::Sequence(ref s) => s[k.min(s.len() - 1)],
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {gamma}")));
        }
        let inv_g = fc.g.mapv(|x| 1.0 / x).insert_axis(Axis(0));
        let coef = gamma * cfg.epsilon - 1.0;
        let grad_q = c.apply(fc.r.view()) * &inv_g;
        let grad_r = c.apply_t(fc.q.view()) * &inv_g;
        let log_k1 = Zip::from(&grad_q).and(&fc.q).map_collect(|gq, q| -gamma * gq - coef * q.max(LOG_FLOOR).ln());
        let log_k2 = Zip::from(&grad_r).and(&fc.r).map_collect(|gr, r| -gamma * gr - coef * r.max(LOG_FLOOR).ln());
        let (q, it1) = solve_block(log_k1, a, g, &cfg.sinkhorn)?;
        let (r, it2) = solve_block(log_k2, b, g, &cfg.sinkhorn)?;
        let next = FactoredCoupling { q, r, g: fc.g.clone() };
        let delta = delta_criterion(&fc, &next, gamma)?;
        fc = next;
        report.push(
            fixed_objective(c, &fc, cfg.epsilon)?,
            delta,
            fc.constraint_violation(a, b),
            it1 + it2,
        );
        cost_trace.push(c.factored_inner(&fc)?);
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

/// Iterative Bregman projections onto `closure(C1(a, b, r)) ∩ C2(r)`; Dykstra
/// without correction terms, valid because both sets are affine.
pub fn lr_ibp(xi: &KernelTriple, a: &Histogram, b: &Histogram, opts: &DykstraOptions) -> Result<InnerOutput> {
    const SOLVER: &str = "lr_ibp";
    let (n, m, r) = xi.dims();
    if a.len() != n || b.len() != m {
        return Err(crate::error::shape_err(format!("({n}, {m})"), format!("({}, {})", a.len(), b.len())));
    }
    let p = [a.view(), b.view()];
    let ks = [&xi.xi1, &xi.xi2];
    let mut v = [Array1::<f64>::ones(r), Array1::<f64>::ones(r)];
    let mut g = xi.xi3.clone();
    let mut violation = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let u = [div(p[0], &ks[0].dot(&v[0])), div(p[1], &ks[1].dot(&v[1]))];
        for ui in &u {
            finite_positive(ui, SOLVER, "row scaling")?;
        }
        let ktu = [ks[0].t().dot(&u[0]), ks[1].t().dot(&u[1])];
        let mut next = g.mapv(f64::cbrt);
        for i in 0..2 {
            next = next * Zip::from(&v[i]).and(&ktu[i]).map_collect(|v, k| (v * k).cbrt());
        }
        finite_positive(&next, SOLVER, "inner marginal")?;
        g = next;
        v = [&g / &ktu[0], &g / &ktu[1]];
        for vi in &v {
            finite_positive(vi, SOLVER, "column scaling")?;
        }
        violation = stopping_quantity(xi, [&u[0], &u[1]], [&v[0], &v[1]], p);
        if violation < opts.tol {
            return Ok(InnerOutput {
                coupling: assemble(xi, [&u[0], &u[1]], [&v[0], &v[1]], g),
                sweeps: sweep,
                violation,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: SOLVER,
        iterations: opts.max_sweeps,
        violation,
    })
}

/// Mirror descent on `LOT_{r,ε}` with the IBP inner loop and no lower bound on `g`.
///
/// `cfg.alpha` is only used to size the theoretical step when `cfg.step` is
/// [`StepSchedule::Theoretical`]; it never constrains the iterates.
pub fn lot_ibp_solve(c: &CostOperator, a: &Histogram, b: &Histogram, cfg: &LotConfig) -> Result<LotSolution> {
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
    let (mut cost_trace, mut steps, mut iterates) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..cfg.max_iter {
        let gamma = match cfg.step {
            StepSchedule::Theoretical => theoretical,
            StepSchedule::Constant(s) => s,
            StepSchedule::Sequence(ref s) => s[k.min(s.len() - 1)],
        };
        let xi = build_kernel_triple_stabilized(c, &fc, gamma, cfg.epsilon)?;
        let inner = lr_ibp(&xi, a, b, &cfg.inner)?;
        let delta = delta_criterion(&fc, &inner.coupling, gamma)?;
        fc = inner.coupling;
        report.push(objective(c, &fc, cfg.epsilon)?, delta, fc.constraint_violation(a, b), inner.sweeps);
        cost_trace.push(c.factored_inner(&fc)?);
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
