//! Gromov-Wasserstein energies and solvers.
//!
//! The energy of a plan `P` between similarity matrices `D` (n x n) and `D'` (m x m) is
//! `E(P) = Σ |D_ii' − D'_jj'|² P_ij P_i'j' = <f(D)p, p> + <f(D')q, q> − 2 <D P D', P>`
//! with `f(x) = x²` entrywise and `p = P1`, `q = Pᵀ1`. The decomposition holds for every
//! nonnegative `P`, so all fast paths below use the plan's own marginals.

use std::borrow::Cow;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{power_iteration, SIMILARITY_NORM_POWER_STEPS};
use crate::lot::{init_factors_with_g, StepSchedule, LOG_FLOOR};
use crate::sinkhorn::{round_to_polytope, sinkhorn_capped, sinkhorn_log, KernelOp, SinkhornOptions};
use crate::types::{FactoredCoupling, Histogram, SolverReport};
use crate::variants::{is_trivial, solve_block};

/// Largest `n · m` accepted by the quartic energy loop.
pub const BRUTEFORCE_LIMIT: usize = 10_000;
/// Marginal violation tolerated by [`gw_energy_fast`].
pub const ENERGY_FEASIBILITY_TOL: f64 = 1e-6;
/// Sinkhorn iteration cap per outer GW step unless [`GwOptions::sinkhorn_max_iter`] is set.
pub const DEFAULT_SINKHORN_CAP: usize = 100_000;

/// Square symmetric similarity matrix, dense or as `A Aᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Similarity {
    Dense(Array2<f64>),
    Factored(Array2<f64>),
}

impl Similarity {
    pub fn dense(d: Array2<f64>) -> Result<Self> {
        let (n, m) = d.dim();
        if n != m {
            return Err(shape_err("square matrix", format!("{n} x {m}")));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("similarity matrix has non-finite entries".into()));
        }
        let scale = d.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        let asym = d.indexed_iter().fold(0.0f64, |s, ((i, j), x)| s.max((x - d[[j, i]]).abs()));
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::InvalidParameter(format!("similarity matrix is not symmetric (max gap {asym:e})")));
        }
        Ok(Similarity::Dense(d))
    }

    pub fn factored(a: Array2<f64>) -> Result<Self> {
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("similarity factor has non-finite entries".into()));
        }
        Ok(Similarity::Factored(a))
    }

    pub fn size(&self) -> usize {
        match self {
            Similarity::Dense(d) => d.nrows(),
            Similarity::Factored(a) => a.nrows(),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Similarity::Factored(_))
    }

    pub fn to_dense(&self) -> Cow<'_, Array2<f64>> {
        match self {
            Similarity::Dense(d) => Cow::Borrowed(d),
            Similarity::Factored(a) => Cow::Owned(a.dot(&a.t())),
        }
    }

    /// `D X`.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Similarity::Dense(d) => d.dot(&x),
            Similarity::Factored(a) => a.dot(&a.t().dot(&x)),
        }
    }

    /// `Xᵀ D X`.
    pub fn quad(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Similarity::Dense(d) => x.t().dot(&d.dot(&x)),
            Similarity::Factored(a) => {
                let ax = a.t().dot(&x);
                ax.t().dot(&ax)
            }
        }
    }

    /// `f(D) p` with `f(x) = x²` entrywise; `O(n r²)` when factored.
    pub fn squared_apply(&self, p: ArrayView1<f64>) -> Array1<f64> {
        match self {
            Similarity::Dense(d) => d.mapv(|x| x * x).dot(&p),
            Similarity::Factored(a) => {
                let m = weighted_gram(a, p);
                a.rows().into_iter().map(|row| row.dot(&m.dot(&row))).collect()
            }
        }
    }

    /// `<f(D) p, p>`; for factored `D` this is `‖Ãᵀ p‖²`, evaluated as `‖Aᵀ Diag(p) A‖_F²`.
    pub fn squared_form(&self, p: ArrayView1<f64>) -> f64 {
        match self {
            Similarity::Dense(_) => self.squared_apply(p).dot(&p),
            Similarity::Factored(a) => weighted_gram(a, p).iter().map(|x| x * x).sum(),
        }
    }

    /// `‖D‖_op` by power iteration.
    pub fn op_norm(&self) -> f64 {
        let n = self.size();
        power_iteration(n, SIMILARITY_NORM_POWER_STEPS, |v| {
            self.apply(v.view().insert_axis(Axis(1))).remove_axis(Axis(1))
        })
    }

    fn extremes(&self) -> (f64, f64) {
        self.to_dense()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }
}

fn weighted_gram(a: &Array2<f64>, p: ArrayView1<f64>) -> Array2<f64> {
    let scaled = a * &p.insert_axis(Axis(1));
    a.t().dot(&scaled)
}

/// Rows `ψ(a_i) = vec(a_i a_iᵀ)`, so that `f(A Aᵀ) = Ã Ãᵀ`.
pub fn psi_lift(a: &Array2<f64>) -> Array2<f64> {
    let (n, r) = a.dim();
    Array2::from_shape_fn((n, r * r), |(i, kl)| a[[i, kl / r]] * a[[i, kl % r]])
}

/// `L = max |D_ii' − D'_jj'|²`.
pub fn sup_diff(d: &Similarity, d_prime: &Similarity) -> f64 {
    let (lo, hi) = d.extremes();
    let (lo2, hi2) = d_prime.extremes();
    let gap = (hi - lo2).max(hi2 - lo);
    gap * gap
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwProblem {
    pub d: Similarity,
    pub d_prime: Similarity,
    pub a: Histogram,
    pub b: Histogram,
}

impl GwProblem {
    pub fn new(d: Similarity, d_prime: Similarity, a: Histogram, b: Histogram) -> Result<Self> {
        if d.size() != a.len() || d_prime.size() != b.len() {
            return Err(shape_err(
                format!("histograms of lengths ({}, {})", d.size(), d_prime.size()),
                format!("({}, {})", a.len(), b.len()),
            ));
        }
        Ok(GwProblem { d, d_prime, a, b })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.a.len(), self.b.len())
    }

    pub fn is_factored(&self) -> bool {
        self.d.is_factored() && self.d_prime.is_factored()
    }

    /// `L = max |D_ii' − D'_jj'|²`.
    pub fn sup_diff(&self) -> f64 {
        sup_diff(&self.d, &self.d_prime)
    }

    /// `R = 4 ‖D‖_op ‖D'‖_op`.
    pub fn op_constant(&self) -> f64 {
        4.0 * self.d.op_norm() * self.d_prime.op_norm()
    }

    /// Same problem with both similarities stored densely.
    pub fn densified(&self) -> Self {
        GwProblem {
            d: Similarity::Dense(self.d.to_dense().into_owned()),
            d_prime: Similarity::Dense(self.d_prime.to_dense().into_owned()),
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    fn product(&self) -> Array2<f64> {
        self.a.view().insert_axis(Axis(1)).dot(&self.b.view().insert_axis(Axis(0)))
    }
}

/// A transport plan in either representation.
#[derive(Debug, Clone, Copy)]
pub enum Plan<'a> {
    Dense(ArrayView2<'a, f64>),
    Factored(&'a FactoredCoupling),
}

impl Plan<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            Plan::Dense(p) => p.dim(),
            Plan::Factored(fc) => fc.shape(),
        }
    }

    fn marginals(&self) -> (Array1<f64>, Array1<f64>) {
        match self {
            Plan::Dense(p) => (p.sum_axis(Axis(1)), p.sum_axis(Axis(0))),
            Plan::Factored(fc) => (fc.row_marginal(), fc.col_marginal()),
        }
    }
}

/// `<D P D', P>`; `‖Aᵀ P B‖_F²` when both similarities are factored.
pub fn cross_term(d: &Similarity, d_prime: &Similarity, plan: Plan) -> f64 {
    match plan {
        Plan::Dense(p) => match (d, d_prime) {
            (Similarity::Factored(a), Similarity::Factored(b)) => a.t().dot(&p).dot(b).iter().map(|x| x * x).sum(),
            _ => {
                let dp = d.apply(p);
                let dpd = d_prime.apply(dp.t()).reversed_axes();
                (&dpd * &p).sum()
            }
        },
        Plan::Factored(fc) => {
            // Tr(Γ QᵀDQ Γ RᵀD'R) with Γ = Diag(1/g)
            let inv_g = fc.g.mapv(|x| 1.0 / x);
            let left = d.quad(fc.q.view()) * inv_g.view().insert_axis(Axis(0)) * inv_g.view().insert_axis(Axis(1));
            (&left * &d_prime.quad(fc.r.view())).sum()
        }
    }
}

fn energy_parts(d: &Similarity, d_prime: &Similarity, plan: Plan) -> f64 {
    let (p, q) = plan.marginals();
    d.squared_form(p.view()) + d_prime.squared_form(q.view()) - 2.0 * cross_term(d, d_prime, plan)
}

fn check_plan(prob: &GwProblem, shape: (usize, usize)) -> Result<()> {
    if shape != prob.shape() {
        return Err(shape_err(format!("{:?}", prob.shape()), format!("{shape:?}")));
    }
    Ok(())
}

/// Exact quadruple sum; refuses `n · m > BRUTEFORCE_LIMIT`.
pub fn gw_energy_bruteforce(prob: &GwProblem, p: ArrayView2<f64>) -> Result<f64> {
    check_plan(prob, p.dim())?;
    let (n, m) = p.dim();
    if n * m > BRUTEFORCE_LIMIT {
        return Err(Error::SizeGuard {
            what: "brute-force GW energy",
            size: n * m,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let d = prob.d.to_dense();
    let dp = prob.d_prime.to_dense();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let pij = p[[i, j]];
            if pij == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for k in 0..n {
                for l in 0..m {
                    let diff = d[[i, k]] - dp[[j, l]];
                    inner += diff * diff * p[[k, l]];
                }
            }
            total += pij * inner;
        }
    }
    Ok(total)
}

/// Energy through the `f(D)`/cross-term decomposition; the plan must be feasible to
/// [`ENERGY_FEASIBILITY_TOL`].
pub fn gw_energy_fast(prob: &GwProblem, plan: Plan) -> Result<f64> {
    check_plan(prob, plan.shape())?;
    let (p, q) = plan.marginals();
    let violation = p.iter().zip(prob.a.weights()).map(|(x, y)| (x - y).abs()).sum::<f64>()
        + q.iter().zip(prob.b.weights()).map(|(x, y)| (x - y).abs()).sum::<f64>();
    if violation > ENERGY_FEASIBILITY_TOL {
        return Err(Error::InvalidParameter(format!(
            "plan marginals are off by {violation:e}; the energy decomposition needs a feasible plan"
        )));
    }
    Ok(energy_parts(&prob.d, &prob.d_prime, plan))
}

/// `(|E(P1) − E(P2)|, 2 L ‖P1 − P2‖_1)` for two plans in the simplex.
pub fn gw_energy_lipschitz_check(
    d: &Similarity,
    d_prime: &Similarity,
    p1: ArrayView2<f64>,
    p2: ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let shape = (d.size(), d_prime.size());
    if p1.dim() != shape || p2.dim() != shape {
        return Err(shape_err(format!("{shape:?}"), format!("{:?} and {:?}", p1.dim(), p2.dim())));
    }
    let lhs = (energy_parts(d, d_prime, Plan::Dense(p1)) - energy_parts(d, d_prime, Plan::Dense(p2))).abs();
    let dist: f64 = Zip::from(&p1).and(&p2).fold(0.0, |s, x, y| s + (x - y).abs());
    Ok((lhs, 2.0 * sup_diff(d, d_prime) * dist))
}

/// How each outer step turns the gradient `−4 D P D'` into a kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum GwStep {
    /// Mirror descent with steps `γ_ℓ`: kernel `P ⊙ exp(4 γ_ℓ D P D')`.
    Mirror(Vec<f64>),
    /// Entropic fixed-point map `P ← Π(C(P))`: kernel `exp(4 D P D' / ε)`.
    Entropic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwSchedule {
    pub iterations: usize,
    /// Sinkhorn precision `μ_ℓ` of each outer iteration.
    pub precisions: Vec<f64>,
    pub step: GwStep,
    /// Per-iteration error targets `δ_ℓ` when built by [`gw_schedule_from_target`].
    pub targets: Vec<f64>,
}

impl GwSchedule {
    pub fn mirror(gamma: f64, iterations: usize, precision: f64) -> Self {
        GwSchedule {
            iterations,
            precisions: vec![precision; iterations],
            step: GwStep::Mirror(vec![gamma; iterations]),
            targets: Vec::new(),
        }
    }

    pub fn entropic(eps: f64, iterations: usize, precision: f64) -> Self {
        GwSchedule {
            iterations,
            precisions: vec![precision; iterations],
            step: GwStep::Entropic(eps),
            targets: Vec::new(),
        }
    }

    /// Constant step `γ = 1 / (2L)`.
    pub fn default_for(prob: &GwProblem, iterations: usize, precision: f64) -> Self {
        let l = prob.sup_diff();
        Self::mirror(if l > 0.0 { 0.5 / l } else { 1.0 }, iterations, precision)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("GW schedule needs at least one iteration".into()));
        }
        if self.precisions.len() != self.iterations {
            return Err(shape_err(format!("{} precisions", self.iterations), format!("{}", self.precisions.len())));
        }
        if let Some(mu) = self.precisions.iter().find(|&&mu| !(mu > 0.0 && mu < 1.0)) {
            return Err(Error::InvalidParameter(format!("Sinkhorn precisions must lie in (0, 1), got {mu}")));
        }
        match &self.step {
            GwStep::Mirror(g) if g.len() != self.iterations => {
                Err(shape_err(format!("{} step sizes", self.iterations), format!("{}", g.len())))
            }
            GwStep::Mirror(g) if g.iter().any(|&x| !(x > 0.0 && x.is_finite())) => {
                Err(Error::InvalidParameter("step sizes must be positive and finite".into()))
            }
            GwStep::Entropic(eps) if !(*eps > 0.0) => {
                Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")))
            }
            _ => Ok(()),
        }
    }
}

/// `δ_ℓ = min(δ/(2LI), δ/(2LI α^{I−(ℓ+1)}))` with `α = R/ε`, and
/// `μ_ℓ = ε δ_ℓ² / (200 [R + 1 + log(2 max(n, m) / δ_ℓ²)])`.
pub fn gw_schedule_from_target(
    delta: f64,
    iterations: usize,
    l: f64,
    r: f64,
    eps: f64,
    n: usize,
    m: usize,
) -> Result<GwSchedule> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta <= 1.0) || iterations == 0 {
        return Err(Error::InvalidParameter(format!(
            "need delta in (0, 1] and at least one iteration, got delta = {delta}, I = {iterations}"
        )));
    }
    let alpha = r / eps;
    let base = delta / (2.0 * l * iterations as f64);
    let size = 2.0 * n.max(m) as f64;
    let targets: Vec<f64> = (0..iterations)
        .map(|k| base.min(base / alpha.powi((iterations - (k + 1)) as i32)))
        .collect();
    let precisions = targets
        .iter()
        .map(|&d| eps * d * d / (200.0 * (r + 1.0 + (size / (d * d)).ln())))
        .collect();
    Ok(GwSchedule {
        iterations,
        precisions,
        step: GwStep::Entropic(eps),
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GwOptions {
    /// Starting plan; `a bᵀ` when absent.
    pub init: Option<Array2<f64>>,
    /// Sinkhorn iteration cap; a step that hits it is rounded onto `Π(a, b)` and the
    /// run is reported as not converged.
    pub sinkhorn_max_iter: Option<usize>,
    pub record_couplings: bool,
}

#[derive(Debug, Clone)]
pub struct GwOutput {
    pub coupling: Array2<f64>,
    pub energy: f64,
    pub initial_energy: f64,
    /// Energy after each outer iteration.
    pub energy_trace: Vec<f64>,
    pub couplings: Vec<Array2<f64>>,
    pub report: SolverReport,
}

fn row_max(l: &Array2<f64>) -> Array1<f64> {
    l.map_axis(Axis(1), |r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
}

fn gw_loop(
    prob: &GwProblem,
    schedule: &GwSchedule,
    opts: &GwOptions,
    dpd: impl Fn(&Array2<f64>) -> Array2<f64>,
    energy: impl Fn(&Array2<f64>) -> f64,
) -> Result<GwOutput> {
    let start = Instant::now();
    schedule.validate()?;
    let mut p = match &opts.init {
        Some(p0) => {
            check_plan(prob, p0.dim())?;
            p0.clone()
        }
        None => prob.product(),
    };
    let initial_energy = energy(&p);
    let mut report = SolverReport::default();
    let mut energy_trace = Vec::with_capacity(schedule.iterations);
    let mut couplings = Vec::new();
    // warm start of the entropic map: scaling and row shift of the previous kernel
    let mut warm: Option<(Array1<f64>, Array1<f64>)> = None;
    let mut stalled = false;
    for l in 0..schedule.iterations {
        let grad = dpd(&p);
        let log_k = match &schedule.step {
            GwStep::Mirror(gammas) => {
                let g4 = 4.0 * gammas[l];
                Zip::from(&p).and(&grad).map_collect(|p, c| p.max(LOG_FLOOR).ln() + g4 * c)
            }
            GwStep::Entropic(eps) => grad.mapv(|c| 4.0 * c / eps),
        };
        let shift = row_max(&log_k);
        let k = KernelOp::Dense(&log_k - &shift.view().insert_axis(Axis(1)));
        let k = match k {
            KernelOp::Dense(m) => KernelOp::Dense(m.mapv(f64::exp)),
            other => other,
        };
        let mut sopts = SinkhornOptions::with_tol(schedule.precisions[l]);
        sopts.max_iter = opts.sinkhorn_max_iter.unwrap_or(DEFAULT_SINKHORN_CAP);
        let u0 = match (&schedule.step, &warm) {
            (GwStep::Entropic(_), Some((u, prev))) => {
                let u0 = u * &(&shift - prev).mapv(f64::exp);
                u0.iter().all(|x| x.is_finite() && *x > 0.0).then_some(u0)
            }
            _ => None,
        };
        let (mut next, inner, violation) =
            match sinkhorn_capped(&k, &prob.a, &prob.b, u0.as_ref().map(|u| u.view()), &sopts) {
                Ok(out) => {
                    let next = out.scaling.coupling(&k);
                    warm = Some((out.scaling.u, shift));
                    (next, out.iterations, out.violation)
                }
                Err(Error::NumericalRange { .. }) => {
                    let (s, out) = sinkhorn_log(&log_k, &prob.a, &prob.b, &sopts)?;
                    warm = None;
                    (s.coupling(&log_k), out.iterations, out.violation)
                }
                Err(e) => return Err(e),
            };
        if violation >= sopts.tol {
            // near-decomposable kernels stall Sinkhorn; continue from the rounded plan
            log::warn!("GW step {l}: Sinkhorn stopped at violation {violation:e} > {:e}; rounding", sopts.tol);
            next = round_to_polytope(&next, &prob.a, &prob.b)?;
            stalled = true;
        }
        let change: f64 = Zip::from(&next).and(&p).fold(0.0, |s, x, y| s + (x - y).abs());
        p = next;
        let e = energy(&p);
        report.push(e, change, violation, inner);
        energy_trace.push(e);
        if opts.record_couplings {
            couplings.push(p.clone());
        }
    }
    report.converged = !stalled;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(GwOutput {
        energy: energy(&p),
        coupling: p,
        initial_energy,
        energy_trace,
        couplings,
        report,
    })
}

/// Mirror descent on the GW energy with a dense `D P D'` at every step.
pub fn gw_mirror_descent(prob: &GwProblem, schedule: &GwSchedule, opts: &GwOptions) -> Result<GwOutput> {
    let d = prob.d.to_dense().into_owned();
    let dp = prob.d_prime.to_dense().into_owned();
    gw_loop(
        prob,
        schedule,
        opts,
        |p| d.dot(p).dot(&dp),
        |p| energy_parts(&prob.d, &prob.d_prime, Plan::Dense(p.view())),
    )
}

/// Same iteration with `D = A Aᵀ`, `D' = B Bᵀ`: the gradient is formed as `A G Bᵀ` with
/// `G = Aᵀ P B`, and the energy through `‖G‖_F²`.
pub fn gw_quadratic(prob: &GwProblem, schedule: &GwSchedule, opts: &GwOptions) -> Result<GwOutput> {
    let (a, b) = match (&prob.d, &prob.d_prime) {
        (Similarity::Factored(a), Similarity::Factored(b)) => (a, b),
        _ => {
            return Err(Error::InvalidParameter(
                "the quadratic GW solver needs factored similarities D = A Aᵀ and D' = B Bᵀ".into(),
            ))
        }
    };
    gw_loop(
        prob,
        schedule,
        opts,
        |p| a.dot(&a.t().dot(p).dot(b)).dot(&b.t()),
        |p| energy_parts(&prob.d, &prob.d_prime, Plan::Dense(p.view())),
    )
}

/// `L_LR = 8 ‖1/g‖_∞ L (r + 1)`.
pub fn gw_fixed_smoothness(g: &Array1<f64>, l: f64, r: usize) -> Result<f64> {
    crate::types::require_positive(g.iter().copied(), "g")?;
    let inv = g.iter().fold(0.0f64, |m, &x| m.max(1.0 / x));
    Ok(8.0 * inv * l * (r as f64 + 1.0))
}

/// Gradient blocks `(2 𝓛(P) R Diag(1/g), 2 𝓛(P)ᵀ Q Diag(1/g))` of `(Q, R) ↦ E(Q Diag(1/g) Rᵀ)`,
/// where `𝓛(P)_ij = Σ |D_ii' − D'_jj'|² P_i'j'`.
pub fn gw_fixed_gradient(prob: &GwProblem, fc: &FactoredCoupling) -> Result<(Array2<f64>, Array2<f64>)> {
    check_plan(prob, fc.shape())?;
    let (p, q) = (fc.row_marginal(), fc.col_marginal());
    let fp = prob.d.squared_apply(p.view());
    let fq = prob.d_prime.squared_apply(q.view());
    let inv_g = fc.g.mapv(|x| 1.0 / x).insert_axis(Axis(0));
    let (dq_term, dr_term) = descent_blocks(prob, fc);
    // 𝓛(P) R = f(D)p (1ᵀR) + 1 (f(D')q)ᵀR − 2 D P D' R
    let ones_r = fc.r.sum_axis(Axis(0));
    let ones_q = fc.q.sum_axis(Axis(0));
    let lr = outer(&fp, &ones_r) + &fq.dot(&fc.r).insert_axis(Axis(0)) - &(&dq_term * 2.0);
    let lq = outer(&fq, &ones_q) + &fp.dot(&fc.q).insert_axis(Axis(0)) - &(&dr_term * 2.0);
    Ok((lr * 2.0 * &inv_g, lq * 2.0 * &inv_g))
}

fn outer(x: &Array1<f64>, y: &Array1<f64>) -> Array2<f64> {
    x.view().insert_axis(Axis(1)).dot(&y.view().insert_axis(Axis(0)))
}

/// `(D P D' R, D' Pᵀ D Q)` for `P = Q Diag(1/g) Rᵀ`, in `O((n + m) r²)` when factored.
fn descent_blocks(prob: &GwProblem, fc: &FactoredCoupling) -> (Array2<f64>, Array2<f64>) {
    let inv_g = fc.g.mapv(|x| 1.0 / x).insert_axis(Axis(0));
    let qg = &fc.q * &inv_g;
    let rg = &fc.r * &inv_g;
    let dq = prob.d.apply(qg.view()).dot(&prob.d_prime.quad(fc.r.view()));
    let dr = prob.d_prime.apply(rg.view()).dot(&prob.d.quad(fc.q.view()));
    (dq, dr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwLowRankConfig {
    pub g: Histogram,
    /// `Theoretical` means `γ = 1 / (2 L_LR)`.
    pub step: StepSchedule,
    pub iterations: usize,
    pub sinkhorn: SinkhornOptions,
    pub seed: u64,
    pub init: Option<FactoredCoupling>,
    pub record_iterates: bool,
}

impl GwLowRankConfig {
    pub fn new(g: Histogram, iterations: usize) -> Self {
        GwLowRankConfig {
            g,
            step: StepSchedule::Theoretical,
            iterations,
            sinkhorn: SinkhornOptions {
                max_iter: DEFAULT_SINKHORN_CAP,
                ..SinkhornOptions::with_tol(1e-9)
            },
            seed: 0,
            init: None,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GwLowRankOutput {
    pub coupling: FactoredCoupling,
    pub energy: f64,
    pub initial_energy: f64,
    pub energy_trace: Vec<f64>,
    pub iterates: Vec<FactoredCoupling>,
    pub report: SolverReport,
}

/// Mirror descent on `(Q, R) ∈ Π(a, g) × Π(b, g)` for the GW energy of `Q Diag(1/g) Rᵀ`;
/// each step solves two entropic OT problems with costs `C̃ R Diag(1/g) − (1/γ) log Q` and
/// `C̃ᵀ Q Diag(1/g) − (1/γ) log R`, `C̃ = −4 D P D'`. The plan is never assembled.
pub fn gw_lowrank_fixed_marginal(prob: &GwProblem, cfg: &GwLowRankConfig) -> Result<GwLowRankOutput> {
    let start = Instant::now();
    cfg.g.require_positive("g")?;
    let (a, b, g) = (&prob.a, &prob.b, &cfg.g);
    let energy = |fc: &FactoredCoupling| energy_parts(&prob.d, &prob.d_prime, Plan::Factored(fc));
    if g.len() == 1 {
        let fc = FactoredCoupling {
            q: a.weights().clone().insert_axis(Axis(1)),
            r: b.weights().clone().insert_axis(Axis(1)),
            g: Array1::ones(1),
        };
        let e = energy(&fc);
        let report = SolverReport {
            converged: true,
            ..Default::default()
        };
        return Ok(GwLowRankOutput {
            coupling: fc,
            energy: e,
            initial_energy: e,
            energy_trace: vec![e],
            iterates: Vec::new(),
            report,
        });
    }
    let theoretical = 0.5 / gw_fixed_smoothness(g.weights(), prob.sup_diff(), g.len())?;
    let mut fc = match &cfg.init {
        Some(fc) => {
            check_plan(prob, fc.shape())?;
            fc.clone()
        }
        None => init_factors_with_g(a, b, g, cfg.seed)?,
    };
    if is_trivial(&fc, a, b) {
        return Err(Error::TrivialFixedPoint);
    }
    let initial_energy = energy(&fc);
    let mut report = SolverReport::default();
    let (mut energy_trace, mut iterates) = (Vec::new(), Vec::new());
    for k in 0..cfg.iterations {
        let gamma = match cfg.step {
            StepSchedule::Theoretical => theoretical,
            StepSchedule::Constant(s) => s,
            StepSchedule::Sequence(ref s) => s[k.min(s.len() - 1)],
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {gamma}")));
        }
        let inv_g = fc.g.mapv(|x| 1.0 / x).insert_axis(Axis(0));
        let (dq, dr) = descent_blocks(prob, &fc);
        let g4 = 4.0 * gamma;
        let log_k1 = Zip::from(&fc.q).and(&(dq * &inv_g)).map_collect(|q, c| q.max(LOG_FLOOR).ln() + g4 * c);
        let log_k2 = Zip::from(&fc.r).and(&(dr * &inv_g)).map_collect(|r, c| r.max(LOG_FLOOR).ln() + g4 * c);
        let (q, it1) = solve_block(log_k1, a, g, &cfg.sinkhorn)?;
        let (r, it2) = solve_block(log_k2, b, g, &cfg.sinkhorn)?;
        let next = FactoredCoupling { q, r, g: fc.g.clone() };
        let change = crate::lot::triple_l1_distance(&fc, &next);
        fc = next;
        let e = energy(&fc);
        report.push(e, change, fc.constraint_violation(a, b), it1 + it2);
        energy_trace.push(e);
        if cfg.record_iterates {
            iterates.push(fc.clone());
        }
    }
    report.converged = true;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(GwLowRankOutput {
        energy: energy(&fc),
        coupling: fc,
        initial_energy,
        energy_trace,
        iterates,
        report,
    })
}

/// `Π(C) = argmin_{P ∈ Π(a, b)} <P, C> − ε H(P)`, solved in the log domain to `tol`.
pub fn entropic_projection(c: &Array2<f64>, a: &Histogram, b: &Histogram, eps: f64, tol: f64) -> Result<Array2<f64>> {
    let op = crate::cost::CostOperator::dense(c.clone())?;
    Ok(crate::sinkhorn::entropic_ot(&op, a, b, eps, &SinkhornOptions::with_tol(tol), true)?.coupling)
}

/// `C(P) = −4 D P D'`.
pub fn gw_cost(prob: &GwProblem, p: ArrayView2<f64>) -> Array2<f64> {
    let dp = prob.d.apply(p);
    prob.d_prime.apply(dp.t()).reversed_axes() * -4.0
}

fn l1(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    Zip::from(x).and(y).fold(0.0, |s, p, q| s + (p - q).abs())
}

/// `(‖Π(C(P1)) − Π(C(P2))‖_1, 4 ‖P1 − P2‖_1 ‖D‖_op ‖D'‖_op / ε)` for feasible `P1, P2`;
/// projections are solved to `1e-12`.
pub fn error_cost_check(prob: &GwProblem, eps: f64, p1: ArrayView2<f64>, p2: ArrayView2<f64>) -> Result<(f64, f64)> {
    check_plan(prob, p1.dim())?;
    check_plan(prob, p2.dim())?;
    let x = entropic_projection(&gw_cost(prob, p1), &prob.a, &prob.b, eps, 1e-12)?;
    let y = entropic_projection(&gw_cost(prob, p2), &prob.a, &prob.b, eps, 1e-12)?;
    let delta = l1(&p1.to_owned(), &p2.to_owned());
    // op_constant() is already 4 ‖D‖_op ‖D'‖_op
    Ok((l1(&x, &y), delta * prob.op_constant() / eps))
}

/// Inexact Sinkhorn bound: after `sweeps` scaling sweeps on `exp(−C/ε)` the iterate `P`
/// with violation `δ ≤ 1` satisfies
/// `‖P − Π(C)‖_1 ≤ δ + sqrt(4/ε [δ ‖C‖_∞ + ε δ log(2 max(n, m) / δ)])`.
/// Returns `(lhs, rhs, δ)`.
pub fn error_sinkhorn_check(c: &Array2<f64>, a: &Histogram, b: &Histogram, eps: f64, sweeps: usize) -> Result<(f64, f64, f64)> {
    let log_k = c.mapv(|x| -x / eps);
    let shift = row_max(&log_k);
    let k = KernelOp::Dense((&log_k - &shift.insert_axis(Axis(1))).mapv(f64::exp));
    let opts = SinkhornOptions {
        max_iter: sweeps.max(1),
        check_every: 1,
        ..SinkhornOptions::with_tol(1e-300)
    };
    let out = sinkhorn_capped(&k, a, b, None, &opts)?;
    let p = out.scaling.coupling(&k);
    let delta = out.violation;
    let exact = entropic_projection(c, a, b, eps, 1e-12)?;
    let cinf = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let size = 2.0 * a.len().max(b.len()) as f64;
    let rhs = delta + (4.0 / eps * (delta * cinf + eps * delta * (size / delta).ln())).sqrt();
    Ok((l1(&p, &exact), rhs, delta))
}
