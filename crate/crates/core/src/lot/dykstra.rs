//! KL projections onto `C1(a, b, r, alpha)` and `C2(r)`, and their Dykstra combination.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use super::KernelTriple;
use crate::error::{shape_err, Error, Result};
use crate::types::{FactoredCoupling, Histogram};

fn zero_sum(what: &'static str, sums: &Array1<f64>) -> Result<()> {
    match sums.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
        Some((index, &value)) => Err(Error::NonPositive { what, index, value }),
        None => Ok(()),
    }
}

fn scale_rows(m: &Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    let mut out = m.clone();
    Zip::from(out.rows_mut()).and(s).for_each(|mut row, &x| row *= x);
    out
}

fn scale_cols(m: &Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    m * &s.view().insert_axis(Axis(0))
}

fn check_marginals(xi: &KernelTriple, a: &Histogram, b: &Histogram) -> Result<()> {
    let (n, m, _) = xi.dims();
    if a.len() != n || b.len() != m {
        return Err(shape_err(format!("marginals of lengths ({n}, {m})"), format!("({}, {})", a.len(), b.len())));
    }
    Ok(())
}

/// KL projection onto `{Q 1 = a, R 1 = b, g >= alpha}`: row rescaling and a clamp on `g`.
pub fn project_c1(xi: &KernelTriple, a: &Histogram, b: &Histogram, alpha: f64) -> Result<FactoredCoupling> {
    check_marginals(xi, a, b)?;
    let rq = xi.xi1.sum_axis(Axis(1));
    let rr = xi.xi2.sum_axis(Axis(1));
    zero_sum("row sum of Q", &rq)?;
    zero_sum("row sum of R", &rr)?;
    Ok(FactoredCoupling {
        q: scale_rows(&xi.xi1, &(a.weights() / &rq)),
        r: scale_rows(&xi.xi2, &(b.weights() / &rr)),
        g: xi.xi3.mapv(|x| x.max(alpha)),
    })
}

/// KL projection onto `{Q^T 1 = R^T 1 = g}`: `g` is the geometric mean of the three current marginals.
pub fn project_c2(xi: &KernelTriple) -> Result<FactoredCoupling> {
    let cq = xi.xi1.sum_axis(Axis(0));
    let cr = xi.xi2.sum_axis(Axis(0));
    zero_sum("column sum of Q", &cq)?;
    zero_sum("column sum of R", &cr)?;
    let g = Zip::from(&xi.xi3).and(&cq).and(&cr).map_collect(|g, q, r| (g * q * r).cbrt());
    Ok(FactoredCoupling {
        q: scale_cols(&xi.xi1, &(&g / &cq)),
        r: scale_cols(&xi.xi2, &(&g / &cr)),
        g,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DykstraOptions {
    /// Target for `sum_i ||u_i . xi_i v_i - p_i||_1`.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl DykstraOptions {
    /// `1e-9` for `eps > 0`; `1e-7` without entropy, where the inner problem is slower to resolve.
    pub fn for_epsilon(eps: f64) -> Self {
        DykstraOptions {
            tol: if eps > 0.0 { 1e-9 } else { 1e-7 },
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutput {
    pub coupling: FactoredCoupling,
    pub sweeps: usize,
    pub violation: f64,
}

pub(crate) fn finite_positive(v: &Array1<f64>, solver: &'static str, what: &str) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::NumericalRange {
            solver,
            detail: format!("{what} left the floating-point range ({x:e})"),
        });
    }
    Ok(())
}

pub(crate) fn div(num: ArrayView1<f64>, den: &Array1<f64>) -> Array1<f64> {
    Zip::from(num).and(den).map_collect(|n, d| n / d)
}

pub(crate) fn stopping_quantity(
    xi: &KernelTriple,
    u: [&Array1<f64>; 2],
    v: [&Array1<f64>; 2],
    p: [ArrayView1<f64>; 2],
) -> f64 {
    let mut total = 0.0;
    for (i, k) in [&xi.xi1, &xi.xi2].into_iter().enumerate() {
        let kv = k.dot(v[i]);
        total += Zip::from(u[i]).and(&kv).and(p[i]).fold(0.0, |acc, u, kv, p| acc + (u * kv - p).abs());
    }
    total
}

pub(crate) fn assemble(xi: &KernelTriple, u: [&Array1<f64>; 2], v: [&Array1<f64>; 2], g: Array1<f64>) -> FactoredCoupling {
    let q = scale_cols(&scale_rows(&xi.xi1, u[0]), v[0]);
    let r = scale_cols(&scale_rows(&xi.xi2, u[1]), v[1]);
    FactoredCoupling { q, r, g }
}

/// Dykstra's alternating corrected KL projections onto `C1(a, b, r, alpha) ∩ C2(r)`,
/// carried out on scaling vectors so that each sweep costs `O((n + m) r)`.
pub fn lr_dykstra(
    xi: &KernelTriple,
    a: &Histogram,
    b: &Histogram,
    alpha: f64,
    opts: &DykstraOptions,
) -> Result<InnerOutput> {
    const SOLVER: &str = "lr_dykstra";
    check_marginals(xi, a, b)?;
    let r = xi.rank();
    if !(alpha >= 0.0) || alpha * r as f64 > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1/r], got {alpha}")));
    }
    let ones = Array1::<f64>::ones(r);
    let (mut q3_1, mut q3_2) = (ones.clone(), ones.clone());
    let mut v_t = [ones.clone(), ones.clone()];
    let mut q = [ones.clone(), ones];
    let mut g_t = xi.xi3.clone();
    let p = [a.view(), b.view()];
    let ks = [&xi.xi1, &xi.xi2];
    let mut violation = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let u: [Array1<f64>; 2] = [div(p[0], &ks[0].dot(&v_t[0])), div(p[1], &ks[1].dot(&v_t[1]))];
        for ui in &u {
            finite_positive(ui, SOLVER, "row scaling")?;
        }

        let gq = &g_t * &q3_1;
        let g = gq.mapv(|x| x.max(alpha));
        q3_1 = &gq / &g;
        g_t = g;

        let ktu = [ks[0].t().dot(&u[0]), ks[1].t().dot(&u[1])];
        let mut g = (&g_t * &q3_2).mapv(f64::cbrt);
        for i in 0..2 {
            g = g * Zip::from(&v_t[i]).and(&q[i]).and(&ktu[i]).map_collect(|v, q, k| (v * q * k).cbrt());
        }
        finite_positive(&g, SOLVER, "inner marginal")?;
        let v = [&g / &ktu[0], &g / &ktu[1]];
        for vi in &v {
            finite_positive(vi, SOLVER, "column scaling")?;
        }
        for i in 0..2 {
            q[i] = &v_t[i] * &q[i] / &v[i];
        }
        q3_2 = &g_t * &q3_2 / &g;
        for x in q.iter().chain([&q3_1, &q3_2]) {
            finite_positive(x, SOLVER, "correction vector")?;
        }

        violation = stopping_quantity(xi, [&u[0], &u[1]], [&v[0], &v[1]], p);
        if violation < opts.tol {
            return Ok(InnerOutput {
                coupling: assemble(xi, [&u[0], &u[1]], [&v[0], &v[1]], g),
                sweeps: sweep,
                violation,
            });
        }
        let [v0, v1] = v;
        v_t = [v0, v1];
        g_t = g;
    }
    Err(Error::NonConvergence {
        solver: SOLVER,
        iterations: opts.max_sweeps,
        violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn triple(q: Array2<f64>, r: Array2<f64>, g: Array1<f64>) -> KernelTriple {
        KernelTriple::new(q, r, g).unwrap()
    }

    #[test]
    fn c1_examples() {
        let a = Histogram::new(array![0.4, 0.6]).unwrap();
        let b = Histogram::new(array![0.5, 0.5]).unwrap();
        let q = array![[0.1, 0.3], [0.2, 0.4]];
        let r = array![[0.25, 0.25], [0.1, 0.4]];
        let out = project_c1(&triple(q.clone(), r.clone(), array![0.3, 0.7]), &a, &b, 0.1).unwrap();
        for (x, y) in out.q.iter().chain(out.r.iter()).zip(q.iter().chain(r.iter())) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        assert_eq!(out.g, array![0.3, 0.7]);
        let out = project_c1(&triple(q, r, array![0.05, 1.0]), &a, &b, 0.1).unwrap();
        assert_eq!(out.g, array![0.1, 1.0]);
        let one = Histogram::new(array![1.0]).unwrap();
        let out = project_c1(&triple(array![[2.0]], array![[3.0]], array![1.0]), &one, &one, 0.5).unwrap();
        assert_eq!(out.q, array![[1.0]]);
    }

    #[test]
    fn c2_examples() {
        let q = array![[0.1, 0.3], [0.2, 0.4]];
        let r = array![[0.2, 0.5], [0.1, 0.2]];
        let g = array![0.3, 0.7];
        let out = project_c2(&triple(q.clone(), r.clone(), g.clone())).unwrap();
        for (x, y) in out.q.iter().zip(q.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        for (x, y) in out.g.iter().zip(g.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let out = project_c2(&triple(array![[2.0]], array![[2.0]], array![1.0])).unwrap();
        let c = 4f64.cbrt();
        assert_abs_diff_eq!(out.g[0], c, epsilon = 1e-15);
        assert_abs_diff_eq!(out.q[[0, 0]], c, epsilon = 1e-15);
        assert_abs_diff_eq!(out.r[[0, 0]], c, epsilon = 1e-15);
    }

    /// 1-D KL projection onto `{q = r = g}`: minimize `sum_k x log(x / t_k) - x + t_k`,
    /// located by bisection on the derivative `3 log x - log(q r g)`.
    #[test]
    fn c2_scalar_matches_direct_minimization() {
        let (q0, r0, g0): (f64, f64, f64) = (2.0, 2.0, 1.0);
        let df = |x: f64| (x / q0).ln() + (x / r0).ln() + (x / g0).ln();
        let (mut lo, mut hi): (f64, f64) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if df(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let out = project_c2(&triple(array![[q0]], array![[r0]], array![g0])).unwrap();
        assert_abs_diff_eq!(out.g[0], 0.5 * (lo + hi), epsilon = 1e-12);
    }

    #[test]
    fn zero_sums_rejected() {
        let a = Histogram::uniform(2);
        let raw = |q, r, g| KernelTriple { xi1: q, xi2: r, xi3: g };
        let xi = raw(array![[0.0, 0.0], [1.0, 1.0]], array![[1.0, 1.0], [1.0, 1.0]], array![0.5, 0.5]);
        assert!(project_c1(&xi, &a, &a, 0.0).is_err());
        let xi = raw(array![[0.0, 1.0], [0.0, 1.0]], array![[1.0, 1.0], [1.0, 1.0]], array![0.5, 0.5]);
        assert!(project_c2(&xi).is_err());
    }

    #[test]
    fn dykstra_fixed_point_in_one_sweep() {
        let a = Histogram::new(array![0.3, 0.7]).unwrap();
        let b = Histogram::new(array![0.6, 0.4]).unwrap();
        let g = array![0.5, 0.5];
        let q = array![[0.1, 0.2], [0.4, 0.3]];
        let r = array![[0.35, 0.25], [0.15, 0.25]];
        let xi = triple(q.clone(), r.clone(), g.clone());
        let out = lr_dykstra(&xi, &a, &b, 0.01, &DykstraOptions::for_epsilon(1.0)).unwrap();
        assert_eq!(out.sweeps, 1);
        for (x, y) in out.coupling.q.iter().zip(q.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        for (x, y) in out.coupling.g.iter().zip(g.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn dykstra_rank_one_is_singleton() {
        let a = Histogram::new(array![0.2, 0.3, 0.5]).unwrap();
        let b = Histogram::new(array![0.6, 0.4]).unwrap();
        let xi = triple(array![[0.4], [0.6], [1.0]], array![[3.0], [0.5]], array![1.0]);
        let out = lr_dykstra(&xi, &a, &b, 0.5, &DykstraOptions::for_epsilon(1.0)).unwrap();
        for (x, y) in out.coupling.q.column(0).iter().zip(a.weights()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        for (x, y) in out.coupling.r.column(0).iter().zip(b.weights()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(out.coupling.g[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn dykstra_output_is_feasible() {
        let a = Histogram::new(array![0.2, 0.3, 0.5]).unwrap();
        let b = Histogram::new(array![0.1, 0.6, 0.3]).unwrap();
        let xi = triple(
            array![[0.5, 1.2], [0.3, 0.2], [2.0, 0.1]],
            array![[0.7, 0.7], [1.5, 0.05], [0.2, 0.9]],
            array![5.0, 0.001],
        );
        let alpha = 0.2;
        let out = lr_dykstra(&xi, &a, &b, alpha, &DykstraOptions::for_epsilon(1.0)).unwrap();
        assert!(out.violation < 1e-9);
        let fc = &out.coupling;
        assert!(fc.g.iter().all(|&g| g >= alpha - 1e-9));
        let l1 = |x: Array1<f64>, y: &Array1<f64>| -> f64 { (&x - y).mapv(f64::abs).sum() };
        assert!(l1(fc.q.sum_axis(Axis(0)), &fc.g) < 1e-12);
        assert!(l1(fc.r.sum_axis(Axis(0)), &fc.g) < 1e-12);
        assert!(fc.constraint_violation(&a, &b) < 1e-9);
    }

    #[test]
    fn dykstra_rejects_infeasible_alpha() {
        let a = Histogram::uniform(2);
        let xi = triple(Array2::ones((2, 2)), Array2::ones((2, 2)), Array1::ones(2));
        assert!(lr_dykstra(&xi, &a, &a, 0.6, &DykstraOptions::for_epsilon(1.0)).is_err());
    }
}
