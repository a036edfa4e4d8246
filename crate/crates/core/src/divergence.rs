//! Entropies and Kullback-Leibler divergences.
//!
//! All functions use the mass-unnormalized convention
//! `KL(P, Q) = sum P (log(P/Q) - 1)` and `H(P) = -sum P (log P - 1)`,
//! with `0 log 0 = 0` enforced by an explicit branch.

use ndarray::{ArrayBase, ArrayView1, Axis, Data, Dimension, Ix2};

use crate::error::{shape_err, Error, Result};
use crate::types::Histogram;

fn check_same_shape<S1, S2, D>(p: &ArrayBase<S1, D>, q: &ArrayBase<S2, D>) -> Result<()>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if p.shape() != q.shape() {
        return Err(shape_err(format!("{:?}", p.shape()), format!("{:?}", q.shape())));
    }
    Ok(())
}

fn check_nonnegative<S, D>(p: &ArrayBase<S, D>, what: &'static str) -> Result<()>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    match p.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        Some((index, &value)) => Err(Error::Negative { what, index, value }),
        None => Ok(()),
    }
}

#[inline]
fn xlogx_over(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `sum P_ij (log(P_ij / Q_ij) - 1)`.
pub fn kl_divergence<S1, S2, D>(p: &ArrayBase<S1, D>, q: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    check_same_shape(p, q)?;
    check_nonnegative(p, "P")?;
    if let Some((index, &value)) = q.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { what: "Q", index, value });
    }
    Ok(p.iter().zip(q.iter()).map(|(&x, &y)| xlogx_over(x, y) - x).sum())
}

/// Bregman divergence of the negative entropy: `sum P log(P/Q) - P + Q`.
///
/// Nonnegative for all inputs and equal to `KL(P, Q) + sum Q`.
pub fn generalized_kl<S1, S2, D>(p: &ArrayBase<S1, D>, q: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    Ok(kl_divergence(p, q)? + q.sum())
}

/// Shannon entropy `-sum P (log P - 1)`.
pub fn entropy<S, D>(p: &ArrayBase<S, D>) -> Result<f64>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    check_nonnegative(p, "P")?;
    Ok(p
        .iter()
        .map(|&x| if x == 0.0 { 0.0 } else { -x * (x.ln() - 1.0) })
        .sum())
}

/// Outcome of a marginal feasibility check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalReport {
    /// `||P 1 - a||_1 + ||P^T 1 - b||_1`
    pub violation: f64,
    pub feasible: bool,
}

pub fn validate_coupling<S>(
    p: &ArrayBase<S, Ix2>,
    a: &Histogram,
    b: &Histogram,
    tol: f64,
) -> Result<MarginalReport>
where
    S: Data<Elem = f64>,
{
    if p.dim() != (a.len(), b.len()) {
        return Err(shape_err(
            format!("({}, {})", a.len(), b.len()),
            format!("{:?}", p.dim()),
        ));
    }
    let violation = marginal_violation(p, a.view(), b.view());
    Ok(MarginalReport {
        violation,
        feasible: violation <= tol,
    })
}

pub(crate) fn marginal_violation<S>(
    p: &ArrayBase<S, Ix2>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> f64
where
    S: Data<Elem = f64>,
{
    let rows = p.sum_axis(Axis(1));
    let cols = p.sum_axis(Axis(0));
    rows.iter().zip(a.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
        + cols.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
