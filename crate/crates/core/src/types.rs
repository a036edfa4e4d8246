use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Absolute tolerance on the total mass of a histogram.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Entries at or below this value count as zero when strict positivity is required.
pub const POSITIVITY_FLOOR: f64 = 1e-300;
/// Default marginal feasibility tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Dense `n x m` transport plan.
pub type DenseCoupling = Array2<f64>;

/// Probability vector on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram(Array1<f64>);

impl Histogram {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "histogram entry {index} is not finite"
                )));
            }
            if value < 0.0 {
                return Err(Error::Negative {
                    what: "histogram",
                    index,
                    value,
                });
            }
        }
        if weights.is_empty() {
            return Err(Error::InvalidParameter("empty histogram".into()));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotOnSimplex { sum });
        }
        Ok(Histogram(weights))
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(weights: Array1<f64>) -> Result<Self> {
        let sum = weights.sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::NotOnSimplex { sum });
        }
        Histogram::new(weights / sum)
    }

    pub fn uniform(n: usize) -> Self {
        Histogram(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// Solver entry points require `a > 0`; entries below the floor are rejected, never clamped.
    pub fn require_positive(&self, what: &'static str) -> Result<()> {
        require_positive(self.0.iter().copied(), what)
    }
}

pub(crate) fn require_positive(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<()> {
    for (index, value) in values.into_iter().enumerate() {
        if !(value > POSITIVITY_FLOOR) {
            return Err(Error::NonPositive { what, index, value });
        }
    }
    Ok(())
}

/// Low-rank coupling `P = Q Diag(1/g) R^T` with sub-couplings sharing the inner marginal `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredCoupling {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub g: Array1<f64>,
}

impl FactoredCoupling {
    pub fn new(q: Array2<f64>, r: Array2<f64>, g: Array1<f64>) -> Result<Self> {
        let rank = g.len();
        if q.ncols() != rank || r.ncols() != rank {
            return Err(shape_err(
                format!("Q and R with {rank} columns"),
                format!("Q {:?}, R {:?}", q.dim(), r.dim()),
            ));
        }
        for (what, m) in [("Q", &q), ("R", &r)] {
            if let Some((index, &value)) = m.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(Error::Negative { what, index, value });
            }
        }
        require_positive(g.iter().copied(), "g")?;
        Ok(FactoredCoupling { q, r, g })
    }

    pub fn rank(&self) -> usize {
        self.g.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.q.nrows(), self.r.nrows())
    }

    /// `Q Diag(1/g)`, the left factor of the assembled plan.
    pub fn scaled_q(&self) -> Array2<f64> {
        let inv_g = self.g.mapv(|x| 1.0 / x);
        &self.q * &inv_g.broadcast(self.q.raw_dim()).unwrap()
    }

    /// Row marginal `P 1_m` computed without assembling `P`.
    pub fn row_marginal(&self) -> Array1<f64> {
        let col = self.r.sum_axis(Axis(0)) / &self.g;
        self.q.dot(&col)
    }

    /// Column marginal `P^T 1_n` computed without assembling `P`.
    pub fn col_marginal(&self) -> Array1<f64> {
        let col = self.q.sum_axis(Axis(0)) / &self.g;
        self.r.dot(&col)
    }

    /// Total l1 violation of `Q 1 = a`, `R 1 = b`, `Q^T 1 = R^T 1 = g`.
    pub fn constraint_violation(&self, a: &Histogram, b: &Histogram) -> f64 {
        let l1 = |x: Array1<f64>, y: ArrayView1<f64>| -> f64 {
            x.iter().zip(y.iter()).map(|(u, v)| (u - v).abs()).sum()
        };
        l1(self.q.sum_axis(Axis(1)), a.view())
            + l1(self.r.sum_axis(Axis(1)), b.view())
            + l1(self.q.sum_axis(Axis(0)), self.g.view())
            + l1(self.r.sum_axis(Axis(0)), self.g.view())
    }
}

/// Materializes `Q Diag(1/g) R^T`.
pub fn assemble_coupling(fc: &FactoredCoupling) -> Result<DenseCoupling> {
    require_positive(fc.g.iter().copied(), "g")?;
    Ok(fc.scaled_q().dot(&fc.r.t()))
}

/// Per-iteration diagnostics shared by the iterative solvers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// Objective value after each outer iteration.
    pub objective: Vec<f64>,
    /// Stationarity criterion (or change measure) after each outer iteration.
    pub delta: Vec<f64>,
    /// Marginal violation of each outer iterate.
    pub marginal_violation: Vec<f64>,
    /// Inner-loop iteration count spent in each outer iteration.
    pub inner_iterations: Vec<usize>,
    pub elapsed_seconds: f64,
    pub converged: bool,
}

impl SolverReport {
    pub fn push(&mut self, objective: f64, delta: f64, violation: f64, inner: usize) {
        self.objective.push(objective);
        self.delta.push(delta);
        self.marginal_violation.push(violation);
        self.inner_iterations.push(inner);
    }

    pub fn iterations(&self) -> usize {
        self.objective.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
