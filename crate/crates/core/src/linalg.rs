//! Small dense linear-algebra helpers.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Power-iteration steps used for `||C||_2` when deriving step sizes.
pub const COST_NORM_POWER_STEPS: usize = 30;
/// Power-iteration steps used for `||D||_op` in the GW schedule constants.
pub const SIMILARITY_NORM_POWER_STEPS: usize = 50;

/// Dominant eigenvalue of a symmetric positive semidefinite operator by power iteration.
///
/// The start vector is drawn from a fixed seed, so the estimate is deterministic.
pub fn power_iteration<F>(dim: usize, steps: usize, apply: F) -> f64
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Array1::from_shape_fn(dim, |_| rng.random::<f64>() + 0.5);
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut lambda = 0.0;
    for _ in 0..steps.max(1) {
        let w = apply(&v);
        lambda = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return lambda.max(0.0);
        }
        v = w / norm;
    }
    lambda.max(0.0)
}

/// `||M||_2` estimated through the Gram operator `M^T M`.
pub fn spectral_norm_estimate(m: ArrayView2<f64>, steps: usize) -> f64 {
    power_iteration(m.ncols(), steps, |v| m.t().dot(&m.dot(v))).sqrt()
}

/// Thin singular value decomposition with singular values in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x k` left singular vectors.
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    /// `cols x k` right singular vectors.
    pub v: Array2<f64>,
}

/// SVD with explicit descending order and a sign convention making the
/// first nonzero entry of every left singular vector nonnegative.
pub fn svd(m: ArrayView2<f64>) -> Svd {
    let (rows, cols) = m.dim();
    let k = rows.min(cols);
    if k == 0 {
        return Svd {
            u: Array2::zeros((rows, 0)),
            s: Array1::zeros(0),
            v: Array2::zeros((cols, 0)),
        };
    }
    let dm = DMatrix::from_fn(rows, cols, |i, j| m[[i, j]]);
    let dec = dm.svd(true, true);
    let u = dec.u.expect("left singular vectors requested");
    let vt = dec.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| dec.singular_values[y].total_cmp(&dec.singular_values[x]));

    let mut uo = Array2::zeros((rows, k));
    let mut vo = Array2::zeros((cols, k));
    let mut so = Array1::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        so[dst] = dec.singular_values[src];
        let first = (0..rows).map(|i| u[(i, src)]).find(|x| *x != 0.0).unwrap_or(0.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        for i in 0..rows {
            uo[[i, dst]] = sign * u[(i, src)];
        }
        for j in 0..cols {
            vo[[j, dst]] = sign * vt[(src, j)];
        }
    }
    Svd { u: uo, s: so, v: vo }
}

/// Inverse of a small symmetric positive definite matrix with a ridge term added to the diagonal.
pub fn ridge_inverse(m: ArrayView2<f64>, ridge: f64) -> Option<Array2<f64>> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]] + if i == j { ridge } else { 0.0 });
    let inv = dm.try_inverse()?;
    Some(Array2::from_shape_fn((n, n), |(i, j)| inv[(i, j)]))
}

/// Squared Frobenius error of the best rank-`rank` approximation (Eckart-Young).
pub fn best_rank_error_sq(m: ArrayView2<f64>, rank: usize) -> f64 {
    let dec = svd(m);
    dec.s.iter().skip(rank).map(|s| s * s).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn power_iteration_on_diagonal() {
        let d = array![[3.0, 0.0], [0.0, 1.0]];
        let lam = power_iteration(2, 200, |v| d.dot(v));
        assert_abs_diff_eq!(lam, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(spectral_norm_estimate(d.view(), 200), 3.0, epsilon = 1e-10);
    }

    #[test]
    fn svd_reconstructs_and_orders() {
        let m = array![[1.0, 2.0, 0.5], [0.0, 3.0, 1.0], [4.0, 0.0, 2.0], [1.0, 1.0, 1.0]];
        let dec = svd(m.view());
        assert!(dec.s.windows(2).into_iter().all(|w| w[0] >= w[1]));
        let rec = (&dec.u * &dec.s).dot(&dec.v.t());
        for (x, y) in rec.iter().zip(m.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        for c in 0..dec.u.ncols() {
            let first = dec.u.column(c).iter().copied().find(|x| *x != 0.0).unwrap();
            assert!(first >= 0.0);
        }
    }

    #[test]
    fn best_rank_error_of_rank_one_is_zero() {
        let u = array![1.0, 2.0, 3.0];
        let v = array![0.5, -1.0];
        let m = Array2::from_shape_fn((3, 2), |(i, j)| u[i] * v[j]);
        assert!(best_rank_error_sq(m.view(), 1) < 1e-24);
    }
}
