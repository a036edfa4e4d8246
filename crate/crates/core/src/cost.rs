use std::borrow::Cow;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};
use crate::linalg::power_iteration;
use crate::types::FactoredCoupling;

/// Ground cost, either held densely or as a factorization `C = A B^T`.
///
/// Every solver touches the cost only through the products below, so a
/// factored cost of inner dimension `d` costs `O((n + m) d)` per column.
#[derive(Debug, Clone, PartialEq)]
pub enum CostOperator {
    Dense(Array2<f64>),
    Factored { a: Array2<f64>, b: Array2<f64> },
}

fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} has non-finite entries")))
    }
}

impl CostOperator {
    pub fn dense(c: Array2<f64>) -> Result<Self> {
        check_finite(&c, "cost matrix")?;
        Ok(CostOperator::Dense(c))
    }

    pub fn factored(a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(shape_err(
                format!("factors with equal inner dimension ({})", a.ncols()),
                format!("{}", b.ncols()),
            ));
        }
        check_finite(&a, "left cost factor")?;
        check_finite(&b, "right cost factor")?;
        Ok(CostOperator::Factored { a, b })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            CostOperator::Dense(c) => c.dim(),
            CostOperator::Factored { a, b } => (a.nrows(), b.nrows()),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, CostOperator::Factored { .. })
    }

    /// `C v`
    pub fn matvec(&self, v: ArrayView1<f64>) -> Array1<f64> {
        match self {
            CostOperator::Dense(c) => c.dot(&v),
            CostOperator::Factored { a, b } => a.dot(&b.t().dot(&v)),
        }
    }

    /// `C^T u`
    pub fn rmatvec(&self, u: ArrayView1<f64>) -> Array1<f64> {
        match self {
            CostOperator::Dense(c) => c.t().dot(&u),
            CostOperator::Factored { a, b } => b.dot(&a.t().dot(&u)),
        }
    }

    /// `C M` for an `m x k` matrix `M`.
    pub fn apply(&self, m: ArrayView2<f64>) -> Array2<f64> {
        match self {
            CostOperator::Dense(c) => c.dot(&m),
            CostOperator::Factored { a, b } => a.dot(&b.t().dot(&m)),
        }
    }

    /// `C^T M` for an `n x k` matrix `M`.
    pub fn apply_t(&self, m: ArrayView2<f64>) -> Array2<f64> {
        match self {
            CostOperator::Dense(c) => c.t().dot(&m),
            CostOperator::Factored { a, b } => b.dot(&a.t().dot(&m)),
        }
    }

    pub fn to_dense(&self) -> Cow<'_, Array2<f64>> {
        match self {
            CostOperator::Dense(c) => Cow::Borrowed(c),
            CostOperator::Factored { a, b } => Cow::Owned(a.dot(&b.t())),
        }
    }

    /// `<C, P>` for a dense plan.
    pub fn inner(&self, p: ArrayView2<f64>) -> Result<f64> {
        if p.dim() != self.shape() {
            return Err(shape_err(format!("{:?}", self.shape()), format!("{:?}", p.dim())));
        }
        Ok(match self {
            CostOperator::Dense(c) => c.iter().zip(p.iter()).map(|(x, y)| x * y).sum(),
            CostOperator::Factored { a, b } => (&p.dot(b) * a).sum(),
        })
    }

    /// `diag(Q^T C R)`, i.e. the per-component transport cost `omega`.
    pub fn diag_qtcr(&self, q: ArrayView2<f64>, r: ArrayView2<f64>) -> Array1<f64> {
        let cr = self.apply(r);
        (&q * &cr).sum_axis(Axis(0))
    }

    /// `<C, Q Diag(1/g) R^T>` without assembling the plan.
    pub fn factored_inner(&self, fc: &FactoredCoupling) -> Result<f64> {
        let (n, m) = self.shape();
        if fc.shape() != (n, m) {
            return Err(shape_err(format!("({n}, {m})"), format!("{:?}", fc.shape())));
        }
        let omega = self.diag_qtcr(fc.q.view(), fc.r.view());
        Ok(omega.iter().zip(fc.g.iter()).map(|(w, g)| w / g).sum())
    }

    /// `||C||_2` by power iteration on `C^T C`.
    pub fn spectral_norm(&self, steps: usize) -> f64 {
        let (_, m) = self.shape();
        power_iteration(m, steps, |v| self.rmatvec(self.matvec(v.view()).view())).sqrt()
    }

    /// Mean entry of `C`.
    pub fn mean(&self) -> f64 {
        let (n, m) = self.shape();
        match self {
            CostOperator::Dense(c) => c.mean().unwrap_or(0.0),
            CostOperator::Factored { a, b } => {
                a.sum_axis(Axis(0)).dot(&b.sum_axis(Axis(0))) / (n * m) as f64
            }
        }
    }
}
