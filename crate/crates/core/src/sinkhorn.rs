//! Entropic optimal transport by Sinkhorn scaling.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use crate::cost::CostOperator;
use crate::divergence::{entropy, marginal_violation};
use crate::error::{shape_err, Error, Result};
use crate::types::{DenseCoupling, Histogram, SolverReport};

/// Positive Gibbs kernel, held densely or as `K = Phi Psi^T` with nonnegative factors.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelOp {
    Dense(Array2<f64>),
    Factored { phi: Array2<f64>, psi: Array2<f64> },
}

fn check_kernel_entries(m: &Array2<f64>, what: &'static str) -> Result<()> {
    match m.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
        Some((index, &value)) => Err(Error::Negative { what, index, value }),
        None => Ok(()),
    }
}

impl KernelOp {
    pub fn dense(k: Array2<f64>) -> Result<Self> {
        check_kernel_entries(&k, "kernel")?;
        Ok(KernelOp::Dense(k))
    }

    pub fn factored(phi: Array2<f64>, psi: Array2<f64>) -> Result<Self> {
        if phi.ncols() != psi.ncols() {
            return Err(shape_err(
                format!("kernel factors with {} columns", phi.ncols()),
                format!("{}", psi.ncols()),
            ));
        }
        check_kernel_entries(&phi, "kernel factor")?;
        check_kernel_entries(&psi, "kernel factor")?;
        Ok(KernelOp::Factored { phi, psi })
    }

    /// `exp(-C / eps)` for a dense cost.
    pub fn gibbs(c: &Array2<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
        }
        KernelOp::dense(c.mapv(|x| (-x / eps).exp()))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            KernelOp::Dense(k) => k.dim(),
            KernelOp::Factored { phi, psi } => (phi.nrows(), psi.nrows()),
        }
    }

    pub fn matvec(&self, v: ArrayView1<f64>) -> Array1<f64> {
        match self {
            KernelOp::Dense(k) => k.dot(&v),
            KernelOp::Factored { phi, psi } => phi.dot(&psi.t().dot(&v)),
        }
    }

    pub fn rmatvec(&self, u: ArrayView1<f64>) -> Array1<f64> {
        match self {
            KernelOp::Dense(k) => k.t().dot(&u),
            KernelOp::Factored { phi, psi } => psi.dot(&phi.t().dot(&u)),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            KernelOp::Dense(k) => k.clone(),
            KernelOp::Factored { phi, psi } => phi.dot(&psi.t()),
        }
    }

    /// `c K`
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            KernelOp::Dense(k) => KernelOp::Dense(k * c),
            KernelOp::Factored { phi, psi } => KernelOp::Factored {
                phi: phi * c,
                psi: psi.clone(),
            },
        }
    }
}

/// Scaling vectors `(u, v)` of the coupling `Diag(u) K Diag(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPair {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

impl ScalingPair {
    pub fn coupling(&self, k: &KernelOp) -> DenseCoupling {
        let mut p = k.to_dense();
        Zip::from(p.rows_mut()).and(&self.u).for_each(|mut row, &ui| {
            row *= ui;
            row *= &self.v;
        });
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOptions {
    /// Target value of `||u . Kv - a||_1 + ||v . K^T u - b||_1`.
    pub tol: f64,
    pub max_iter: usize,
    /// The stopping quantity costs a pass over `K`, so it is evaluated every few sweeps.
    pub check_every: usize,
    /// Keep the stopping quantity at every check in [`SinkhornOutput::trace`].
    pub record_trace: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-9,
            max_iter: 1_000_000,
            check_every: 10,
            record_trace: false,
        }
    }
}

impl SinkhornOptions {
    pub fn with_tol(tol: f64) -> Self {
        SinkhornOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    pub scaling: ScalingPair,
    pub iterations: usize,
    pub violation: f64,
    pub trace: Vec<f64>,
}

fn check_marginals(a: &Histogram, b: &Histogram, shape: (usize, usize)) -> Result<()> {
    if (a.len(), b.len()) != shape {
        return Err(shape_err(format!("{shape:?}"), format!("({}, {})", a.len(), b.len())));
    }
    a.require_positive("a")?;
    b.require_positive("b")
}

fn check_options(opts: &SinkhornOptions) -> Result<()> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("Sinkhorn tolerance must be positive, got {}", opts.tol)));
    }
    if opts.check_every == 0 || opts.max_iter == 0 {
        return Err(Error::InvalidParameter("check_every and max_iter must be at least 1".into()));
    }
    Ok(())
}

fn l1_dist(x: &Array1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()).sum()
}

fn safe_ratio(num: ArrayView1<f64>, den: &Array1<f64>, side: &str) -> Result<Array1<f64>> {
    let out = Array1::from_iter(num.iter().zip(den.iter()).map(|(n, d)| n / d));
    if let Some(x) = out.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::NumericalRange {
            solver: "sinkhorn",
            detail: format!("scaling vector {side} left the floating-point range ({x:e})"),
        });
    }
    Ok(out)
}

/// Alternating scaling `v <- b / K^T u`, `u <- a / K v` started from `u0` (default `1_n`).
pub fn sinkhorn(
    k: &KernelOp,
    a: &Histogram,
    b: &Histogram,
    u0: Option<ArrayView1<f64>>,
    opts: &SinkhornOptions,
) -> Result<SinkhornOutput> {
    let out = sinkhorn_capped(k, a, b, u0, opts)?;
    if out.violation < opts.tol {
        Ok(out)
    } else {
        Err(Error::NonConvergence {
            solver: "sinkhorn",
            iterations: out.iterations,
            violation: out.violation,
        })
    }
}

/// Like [`sinkhorn`], but returns the last iterate when the iteration cap is hit;
/// callers compare `violation` against `opts.tol` themselves.
pub fn sinkhorn_capped(
    k: &KernelOp,
    a: &Histogram,
    b: &Histogram,
    u0: Option<ArrayView1<f64>>,
    opts: &SinkhornOptions,
) -> Result<SinkhornOutput> {
    check_marginals(a, b, k.shape())?;
    check_options(opts)?;
    let mut u = match u0 {
        Some(u0) => {
            if u0.len() != a.len() {
                return Err(shape_err(format!("u0 of length {}", a.len()), format!("{}", u0.len())));
            }
            crate::types::require_positive(u0.iter().copied(), "u0")?;
            u0.to_owned()
        }
        None => Array1::ones(a.len()),
    };
    let mut trace = Vec::new();
    for it in 1..=opts.max_iter {
        let v = safe_ratio(b.view(), &k.rmatvec(u.view()), "v")?;
        let kv = k.matvec(v.view());
        u = safe_ratio(a.view(), &kv, "u")?;
        if it % opts.check_every == 0 || it == opts.max_iter {
            let row = &u * &kv;
            let col = &v * &k.rmatvec(u.view());
            let violation = l1_dist(&row, a.view()) + l1_dist(&col, b.view());
            if opts.record_trace {
                trace.push(violation);
            }
            if violation < opts.tol || it == opts.max_iter {
                return Ok(SinkhornOutput {
                    scaling: ScalingPair { u, v },
                    iterations: it,
                    violation,
                    trace,
                });
            }
        }
    }
    unreachable!("the final sweep always reports")
}

/// Dual potentials of the log-domain solver: `P_ij = exp(log K_ij + f_i + h_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScaling {
    pub f: Array1<f64>,
    pub h: Array1<f64>,
}

impl LogScaling {
    pub fn coupling(&self, log_k: &Array2<f64>) -> DenseCoupling {
        let mut p = log_k.clone();
        Zip::indexed(&mut p).for_each(|(i, j), x| *x = (*x + self.f[i] + self.h[j]).exp());
        p
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sinkhorn in the log domain on a kernel given by its logarithm; robust for tiny `epsilon`.
pub fn sinkhorn_log(
    log_k: &Array2<f64>,
    a: &Histogram,
    b: &Histogram,
    opts: &SinkhornOptions,
) -> Result<(LogScaling, SinkhornOutput)> {
    let (scal, out) = sinkhorn_log_warm(log_k, a, b, opts, None)?;
    if out.violation < opts.tol {
        Ok((scal, out))
    } else {
        Err(Error::NonConvergence {
            solver: "sinkhorn_log",
            iterations: out.iterations,
            violation: out.violation,
        })
    }
}

/// [`sinkhorn_log`] started from given potentials instead of zeros.
///
/// Running out of iterations is not an error here: the last iterate is returned and
/// `violation` tells whether `tol` was met.
pub fn sinkhorn_log_warm(
    log_k: &Array2<f64>,
    a: &Histogram,
    b: &Histogram,
    opts: &SinkhornOptions,
    init: Option<&LogScaling>,
) -> Result<(LogScaling, SinkhornOutput)> {
    check_marginals(a, b, log_k.dim())?;
    check_options(opts)?;
    if log_k.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::InvalidParameter("log-kernel has NaN or +inf entries".into()));
    }
    let (n, m) = log_k.dim();
    let log_a = a.weights().mapv(f64::ln);
    let log_b = b.weights().mapv(f64::ln);
    let (mut f, mut h) = match init {
        Some(s) if s.f.len() == n && s.h.len() == m => (s.f.clone(), s.h.clone()),
        Some(s) => return Err(shape_err(format!("({n}, {m})"), format!("({}, {})", s.f.len(), s.h.len()))),
        None => (Array1::<f64>::zeros(n), Array1::<f64>::zeros(m)),
    };
    let mut trace = Vec::new();
    let mut violation = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for j in 0..m {
            let col = log_k.column(j);
            h[j] = log_b[j] - log_sum_exp(col.iter().zip(f.iter()).map(|(k, fi)| k + fi));
        }
        for i in 0..n {
            let row = log_k.row(i);
            f[i] = log_a[i] - log_sum_exp(row.iter().zip(h.iter()).map(|(k, hj)| k + hj));
        }
        if f.iter().chain(h.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalRange {
                solver: "sinkhorn_log",
                detail: "dual potentials are not finite".into(),
            });
        }
        if it % opts.check_every == 0 || it == opts.max_iter {
            let scal = LogScaling { f: f.clone(), h: h.clone() };
            let p = scal.coupling(log_k);
            violation = marginal_violation(&p, a.view(), b.view());
            if opts.record_trace {
                trace.push(violation);
            }
            if violation < opts.tol {
                let out = SinkhornOutput {
                    scaling: ScalingPair {
                        u: f.mapv(f64::exp),
                        v: h.mapv(f64::exp),
                    },
                    iterations: it,
                    violation,
                    trace,
                };
                return Ok((scal, out));
            }
        }
    }
    let out = SinkhornOutput {
        scaling: ScalingPair {
            u: f.mapv(f64::exp),
            v: h.mapv(f64::exp),
        },
        iterations: opts.max_iter,
        violation,
        trace,
    };
    Ok((LogScaling { f, h }, out))
}

/// Projects a nonnegative near-feasible plan onto the transport polytope `Pi(a, b)`.
///
/// Rows are scaled down to at most `a`, columns down to at most `b`, and the
/// remaining deficits are filled with the rank-one term `err_a err_b^T / ||err_a||_1`.
pub fn round_to_polytope(p: &DenseCoupling, a: &Histogram, b: &Histogram) -> Result<DenseCoupling> {
    if p.dim() != (a.len(), b.len()) {
        return Err(shape_err(format!("({}, {})", a.len(), b.len()), format!("{:?}", p.dim())));
    }
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(Error::Negative { what: "P", index, value });
    }
    let mut out = p.clone();
    let rows = out.sum_axis(Axis(1));
    for (mut row, (&s, &ai)) in out.rows_mut().into_iter().zip(rows.iter().zip(a.weights())) {
        if s > ai {
            row *= ai / s;
        }
    }
    let cols = out.sum_axis(Axis(0));
    for (mut col, (&s, &bj)) in out.columns_mut().into_iter().zip(cols.iter().zip(b.weights())) {
        if s > bj {
            col *= bj / s;
        }
    }
    let err_a = (a.weights() - &out.sum_axis(Axis(1))).mapv(|x| x.max(0.0));
    let err_b = (b.weights() - &out.sum_axis(Axis(0))).mapv(|x| x.max(0.0));
    let mass = err_a.sum();
    if mass > 0.0 {
        Zip::indexed(&mut out).for_each(|(i, j), x| *x += err_a[i] * err_b[j] / mass);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EntropicOt {
    /// Feasible plan after rounding.
    pub coupling: DenseCoupling,
    /// `<C, P>`
    pub cost: f64,
    /// `<C, P> - eps H(P)`
    pub objective: f64,
    pub scaling: ScalingPair,
    pub report: SolverReport,
}

/// Solves `min <C,P> - eps H(P)` over `Pi(a, b)` and rounds the result onto the polytope.
///
/// With `log_domain` the scaling runs on potentials, which survives much smaller `eps`.
pub fn entropic_ot(
    c: &CostOperator,
    a: &Histogram,
    b: &Histogram,
    eps: f64,
    opts: &SinkhornOptions,
    log_domain: bool,
) -> Result<EntropicOt> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let start = Instant::now();
    let cd = c.to_dense();
    let (raw, out) = if log_domain {
        let log_k = cd.mapv(|x| -x / eps);
        let (scal, out) = sinkhorn_log(&log_k, a, b, opts)?;
        (scal.coupling(&log_k), out)
    } else {
        let k = KernelOp::gibbs(&cd, eps)?;
        let out = sinkhorn(&k, a, b, None, opts)?;
        (out.scaling.coupling(&k), out)
    };
    let coupling = round_to_polytope(&raw, a, b)?;
    let cost = c.inner(coupling.view())?;
    let objective = cost - eps * entropy(&coupling)?;
    let mut report = SolverReport::default();
    report.push(objective, out.violation, marginal_violation(&coupling, a.view(), b.view()), out.iterations);
    report.converged = true;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(EntropicOt {
        coupling,
        cost,
        objective,
        scaling: out.scaling,
        report,
    })
}
