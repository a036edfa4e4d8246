//! Cost matrices from point clouds: the exact `d + 2` factorization of squared
//! Euclidean distances, dense p-norm costs, and a sampling-based low-rank
//! approximation of general distance matrices.

use std::cell::Cell;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::CostOperator;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{best_rank_error_sq, ridge_inverse, svd};

/// Sampling probabilities below this value are floored before dividing by them.
pub const PROBABILITY_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Euclidean,
    SqEuclidean,
    /// `‖x − y‖_p` with `p ≥ 1`.
    PNorm(f64),
}

impl Metric {
    pub fn eval(&self, x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>) -> f64 {
        let diff = x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs());
        match *self {
            Metric::SqEuclidean => diff.map(|d| d * d).sum(),
            Metric::Euclidean => diff.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::PNorm(1.0) => diff.sum(),
            Metric::PNorm(p) => diff.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

/// Points stored one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f64>,
    pub metric: Metric,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, metric: Metric) -> Result<Self> {
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("point cloud has non-finite coordinates".into()));
        }
        if let Metric::PNorm(p) = metric {
            if !(p >= 1.0) {
                return Err(Error::InvalidParameter(format!("p-norm exponent must be >= 1, got {p}")));
            }
        }
        Ok(PointCloud { points, metric })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Pointwise access to a distance matrix `D_ij = d(x_i, y_j)` that need not be stored.
pub trait DistanceOracle {
    fn shape(&self) -> (usize, usize);
    fn dist(&self, i: usize, j: usize) -> f64;
}

/// Distances between two clouds under the first cloud's metric.
pub struct CloudPair<'a> {
    pub x: &'a PointCloud,
    pub y: &'a PointCloud,
}

impl DistanceOracle for CloudPair<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.x.metric.eval(self.x.points.row(i), self.y.points.row(j))
    }
}

/// A precomputed matrix, e.g. shortest-path distances on a graph.
impl DistanceOracle for Array2<f64> {
    fn shape(&self) -> (usize, usize) {
        self.dim()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self[[i, j]]
    }
}

fn same_dim(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(shape_err(format!("dimension {}", x.dim()), format!("dimension {}", y.dim())));
    }
    Ok(())
}

/// `A = [p, 1, −2X]`, `B = [1, q, Y]` with `p_i = ‖x_i‖²`, `q_j = ‖y_j‖²`, so that `A Bᵀ` is
/// the squared Euclidean distance matrix.
pub fn sqeuclid_factorization(x: &PointCloud, y: &PointCloud) -> Result<CostOperator> {
    same_dim(x, y)?;
    let d = x.dim();
    let mut a = Array2::zeros((x.len(), d + 2));
    let mut b = Array2::zeros((y.len(), d + 2));
    a.column_mut(0).assign(&x.points.map_axis(Axis(1), |r| r.dot(&r)));
    a.column_mut(1).fill(1.0);
    a.slice_mut(s![.., 2..]).assign(&(&x.points * -2.0));
    b.column_mut(0).fill(1.0);
    b.column_mut(1).assign(&y.points.map_axis(Axis(1), |r| r.dot(&r)));
    b.slice_mut(s![.., 2..]).assign(&y.points);
    CostOperator::factored(a, b)
}

/// Dense cost `C_ij = ‖x_i − y_j‖_p`.
pub fn pnorm_cost(x: &PointCloud, y: &PointCloud, p: f64) -> Result<CostOperator> {
    same_dim(x, y)?;
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p-norm exponent must be >= 1, got {p}")));
    }
    let metric = Metric::PNorm(p);
    CostOperator::dense(Array2::from_shape_fn((x.len(), y.len()), |(i, j)| {
        metric.eval(x.points.row(i), y.points.row(j))
    }))
}

/// Dense pairwise matrix under an arbitrary oracle.
pub fn dense_distances(oracle: &impl DistanceOracle) -> Array2<f64> {
    Array2::from_shape_fn(oracle.shape(), |(i, j)| oracle.dist(i, j))
}

/// `(‖D − M Nᵀ‖²_F, ‖D − D_r‖²_F)` with `r` the number of columns of `M`.
pub fn factorization_error(d: ArrayView2<f64>, m: ArrayView2<f64>, n: ArrayView2<f64>) -> Result<(f64, f64)> {
    let (rows, cols) = d.dim();
    if m.nrows() != rows || n.nrows() != cols || m.ncols() != n.ncols() {
        return Err(shape_err(
            format!("M: {rows} x r, N: {cols} x r"),
            format!("M: {:?}, N: {:?}", m.dim(), n.dim()),
        ));
    }
    let err = (&d - &m.dot(&n.t())).mapv(|x| x * x).sum();
    Ok((err, best_rank_error_sq(d, m.ncols())))
}

#[derive(Debug, Clone)]
pub struct LowRankDistance {
    pub m: Array2<f64>,
    pub n: Array2<f64>,
    /// Number of pointwise distance evaluations performed.
    pub evaluations: usize,
}

struct Counting<'a, O: DistanceOracle> {
    inner: &'a O,
    count: Cell<usize>,
}

impl<O: DistanceOracle> Counting<'_, O> {
    fn d(&self, i: usize, j: usize) -> f64 {
        self.count.set(self.count.get() + 1);
        self.inner.dist(i, j)
    }
}

fn sample(rng: &mut ChaCha8Rng, weights: &Array1<f64>, t: usize, what: &str) -> Vec<usize> {
    match WeightedIndex::new(weights.iter().copied()) {
        Ok(dist) => (0..t).map(|_| dist.sample(rng)).collect(),
        Err(_) => {
            log::warn!("degenerate {what} sampling probabilities; falling back to uniform sampling");
            (0..t).map(|_| rng.random_range(0..weights.len())).collect()
        }
    }
}

/// [`lr_distance_with`] on the distances between two point clouds.
pub fn lr_distance(x: &PointCloud, y: &PointCloud, r: usize, gamma: f64, seed: u64) -> Result<LowRankDistance> {
    same_dim(x, y)?;
    lr_distance_with(&CloudPair { x, y }, r, gamma, seed)
}

/// Randomized rank-`r` factorization `D ≈ M Nᵀ` from `O((n + m) t)` distance evaluations,
/// `t = ⌊r/γ⌋`: importance-sampled row and column sketches, SVD of the `t × t` core,
/// then a least-squares fit of `M` on `t` uniformly sampled columns.
pub fn lr_distance_with(oracle: &impl DistanceOracle, r: usize, gamma: f64, seed: u64) -> Result<LowRankDistance> {
    let (n, m) = oracle.shape();
    if r == 0 || !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("need r >= 1 and gamma > 0, got r = {r}, gamma = {gamma}")));
    }
    let t = (r as f64 / gamma).floor() as usize;
    if t > n.min(m) || t < r {
        return Err(Error::InvalidParameter(format!(
            "sample size t = floor(r / gamma) = {t} must lie in [r, min(n, m)] = [{r}, {}]",
            n.min(m)
        )));
    }
    let d = Counting { inner: oracle, count: Cell::new(0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tf = t as f64;

    // row sketch
    let (i_star, j_star) = (rng.random_range(0..n), rng.random_range(0..m));
    let anchor = d.d(i_star, j_star).powi(2);
    let spread = (0..m).map(|j| d.d(i_star, j).powi(2)).sum::<f64>() / m as f64;
    let p = Array1::from_shape_fn(n, |i| d.d(i, j_star).powi(2) + anchor + spread);
    let p = &p / p.sum().max(PROBABILITY_FLOOR);
    let rows = sample(&mut rng, &p, t, "row");
    let mut sketch = Array2::from_shape_fn((t, m), |(k, j)| d.d(rows[k], j));
    for (k, mut row) in sketch.rows_mut().into_iter().enumerate() {
        row /= (tf * p[rows[k]]).sqrt().max(PROBABILITY_FLOOR);
    }

    // column sketch
    let col_sq = sketch.map_axis(Axis(0), |c| c.dot(&c));
    let total = col_sq.sum();
    let q = if total > 0.0 { &col_sq / total } else { Array1::zeros(m) };
    let cols = sample(&mut rng, &q, t, "column");
    let w = Array2::from_shape_fn((t, t), |(k, l)| {
        sketch[[k, cols[l]]] / (tf * q[cols[l]]).sqrt().max(PROBABILITY_FLOOR)
    });

    let top = svd(w.view()).u.slice_move(s![.., ..r]);
    let scale = w.t().dot(&top).mapv(|x| x * x).sum().sqrt();
    let mut nf = sketch.t().dot(&top);
    if scale > 0.0 {
        nf /= scale;
    }

    // regression on uniformly sampled columns
    let picked: Vec<usize> = (0..t).map(|_| rng.random_range(0..m)).collect();
    let sqrt_t = tf.sqrt();
    let d_t = Array2::from_shape_fn((n, t), |(i, k)| d.d(i, picked[k]) / sqrt_t);
    let gram = svd(nf.t().dot(&nf).view());
    let smax = gram.s.iter().copied().fold(0.0, f64::max);
    let floor = if smax > 0.0 { 1e-12 * smax } else { 1.0 };
    let u2 = &gram.u / &gram.s.mapv(|x| x.max(floor)).insert_axis(Axis(0));
    let n_t = Array2::from_shape_fn((r, t), |(c, k)| nf[[picked[k], c]]);
    let b = u2.t().dot(&n_t) / sqrt_t;
    let bbt = b.dot(&b.t());
    let tr = bbt.diag().sum();
    let ridge = if tr > 0.0 { 1e-12 * tr / tf } else { 1.0 };
    let a = ridge_inverse(bbt.view(), ridge)
        .ok_or_else(|| Error::NumericalRange { solver: "lr_distance", detail: "singular regression Gram matrix".into() })?;
    let z = a.dot(&b).dot(&d_t.t());
    let mf = z.t().dot(&u2.t());
    Ok(LowRankDistance {
        m: mf,
        n: nf,
        evaluations: d.count.get(),
    })
}
