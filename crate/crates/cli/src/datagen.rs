//! Synthetic problem generators.

use lrot::costfact::{pnorm_cost, sqeuclid_factorization, Metric, PointCloud};
use lrot::{CostOperator, Histogram};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{CostKind, ExperimentConfig, Family};
use crate::error::{CliError, Result};

/// Mixture means of the 2-D source; the 10-D variant pads them with zeros.
pub const SOURCE_MEANS: [[f64; 2]; 3] = [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
pub const TARGET_MEANS: [[f64; 2]; 2] = [[0.5, 0.5], [-0.5, 0.5]];
pub const MIXTURE_VARIANCE: f64 = 0.05;

/// 1-D grid mixtures on `[0, 1]`: (weight, mean, standard deviation).
pub const GRID_SOURCE: [(f64, f64, f64); 2] = [(0.5, 0.2, 0.05), (0.5, 0.6, 0.1)];
pub const GRID_TARGET: [(f64, f64, f64); 2] = [(0.6, 0.4, 0.08), (0.4, 0.8, 0.05)];
/// Every grid density is lifted by this fraction of its maximum so both histograms stay positive.
pub const GRID_FLOOR: f64 = 1e-6;

/// Samples with the component that produced each row.
#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
}

/// `n` i.i.d. draws from the equal-weight mixture of `N(μ_k, σ² I)`.
pub fn sample_mixture(means: &[Vec<f64>], sigma: f64, n: usize, rng: &mut impl Rng) -> MixtureSample {
    let dim = means[0].len();
    let mut points = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for mut row in points.rows_mut() {
        let k = rng.random_range(0..means.len());
        for (x, mu) in row.iter_mut().zip(&means[k]) {
            let z: f64 = StandardNormal.sample(rng);
            *x = mu + sigma * z;
        }
        labels.push(k);
    }
    MixtureSample { points, labels }
}

fn padded(means: &[[f64; 2]], dim: usize) -> Vec<Vec<f64>> {
    means
        .iter()
        .map(|mu| (0..dim).map(|k| mu.get(k).copied().unwrap_or(0.0)).collect())
        .collect()
}

/// Point-cloud families: returns the source and target samples.
///
/// `Gaussian2d` draws `N((1,1), I)` against `N(0, 0.1 I)`; the mixture families use the
/// means above with `Σ = 0.05 I` in every coordinate.
pub fn gen_gaussian_mixture(family: Family, n: usize, m: usize, seed: u64) -> Result<(MixtureSample, MixtureSample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = MIXTURE_VARIANCE.sqrt();
    Ok(match family {
        Family::Gaussian2d => (
            sample_mixture(&[vec![1.0, 1.0]], 1.0, n, &mut rng),
            sample_mixture(&[vec![0.0, 0.0]], 0.1f64.sqrt(), m, &mut rng),
        ),
        Family::Gmm2d | Family::Gmm10d => {
            let dim = if family == Family::Gmm2d { 2 } else { 10 };
            (
                sample_mixture(&padded(&SOURCE_MEANS, dim), sigma, n, &mut rng),
                sample_mixture(&padded(&TARGET_MEANS, dim), sigma, m, &mut rng),
            )
        }
        other => return Err(CliError::Config(format!("{other:?} is not a point-cloud family"))),
    })
}

fn mixture_density(x: f64, parts: &[(f64, f64, f64)]) -> f64 {
    parts
        .iter()
        .map(|&(w, mu, sd)| w * (-0.5 * ((x - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
        .sum()
}

/// Regular grid of `n` points on `[0, 1]` with the mixture density renormalized to a histogram.
pub fn grid_histogram(n: usize, parts: &[(f64, f64, f64)]) -> Result<(Array1<f64>, Histogram)> {
    let x = Array1::linspace(0.0, 1.0, n);
    let dens = x.mapv(|t| mixture_density(t, parts));
    let floor = GRID_FLOOR * dens.fold(0.0f64, |m, &v| m.max(v));
    Ok((x, Histogram::normalized(dens.mapv(|v| v + floor))?))
}

/// All-pairs shortest paths; `w` holds edge weights (`inf` for missing edges).
pub fn floyd_warshall(w: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let mut d = w.clone();
    for i in 0..n {
        d[[i, i]] = 0.0;
    }
    for k in 0..n {
        let dk = d.row(k).to_owned();
        for i in 0..n {
            let dik = d[[i, k]];
            if !dik.is_finite() {
                continue;
            }
            let mut row = d.row_mut(i);
            for (dij, &dkj) in row.iter_mut().zip(dk.iter()) {
                if dik + dkj < *dij {
                    *dij = dik + dkj;
                }
            }
        }
    }
    d
}

/// `2n` standard-normal points in the plane on a complete graph weighted by squared
/// Euclidean length; nodes are split at random into two halves of size `n` and the
/// shortest-path distances between the halves are returned with uniform histograms.
pub fn gen_graph_split(n: usize, seed: u64) -> Result<(Array2<f64>, Histogram, Histogram)> {
    if n < 2 {
        return Err(CliError::Config(format!("graph split needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_mixture(&[vec![0.0, 0.0]], 1.0, 2 * n, &mut rng).points;
    let w = Array2::from_shape_fn((2 * n, 2 * n), |(i, j)| {
        let d = &pts.row(i) - &pts.row(j);
        d.dot(&d)
    });
    let sp = floyd_warshall(&w);
    let mut order: Vec<usize> = (0..2 * n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let (src, dst) = order.split_at(n);
    let block = sp.select(Axis(0), src).select(Axis(1), dst);
    Ok((block, Histogram::uniform(n), Histogram::uniform(n)))
}

/// A generated transport problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub cost: CostOperator,
    /// Exact low-rank form, when the cost admits one.
    pub factored: Option<CostOperator>,
    pub a: Histogram,
    pub b: Histogram,
    /// Support points of `a` and `b` (rows), absent for graph problems.
    pub support: Option<(Array2<f64>, Array2<f64>)>,
}

fn cloud_cost(x: Array2<f64>, y: Array2<f64>, kind: CostKind) -> Result<(CostOperator, Option<CostOperator>)> {
    let (px, py) = (PointCloud::new(x, Metric::Euclidean)?, PointCloud::new(y, Metric::Euclidean)?);
    Ok(match kind {
        CostKind::SqEuclid => {
            let f = sqeuclid_factorization(&px, &py)?;
            (CostOperator::dense(f.to_dense().into_owned())?, Some(f))
        }
        CostKind::Euclid => (pnorm_cost(&px, &py, 2.0)?, None),
        CostKind::PNorm { p } => {
            let d = pnorm_cost(&px, &py, p)?.to_dense().mapv(|v| v.powf(p));
            (CostOperator::dense(d)?, None)
        }
        CostKind::ShortestPath => return Err(CliError::Config("shortest-path cost needs the graph-split family".into())),
    })
}

/// Builds the problem a config describes for one seed.
pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    match cfg.family {
        Family::GraphSplit => {
            let (c, a, b) = gen_graph_split(cfg.n, seed)?;
            Ok(Instance {
                cost: CostOperator::dense(c)?,
                factored: None,
                a,
                b,
                support: None,
            })
        }
        Family::Gmm1dGrid => {
            let (x, a) = grid_histogram(cfg.n, &GRID_SOURCE)?;
            let (y, b) = grid_histogram(cfg.m, &GRID_TARGET)?;
            let (x, y) = (x.insert_axis(Axis(1)), y.insert_axis(Axis(1)));
            let (cost, factored) = cloud_cost(x.clone(), y.clone(), cfg.cost)?;
            Ok(Instance {
                cost,
                factored,
                a,
                b,
                support: Some((x, y)),
            })
        }
        family => {
            let (xs, ys) = gen_gaussian_mixture(family, cfg.n, cfg.m, seed)?;
            let (cost, factored) = cloud_cost(xs.points.clone(), ys.points.clone(), cfg.cost)?;
            Ok(Instance {
                cost,
                factored,
                a: Histogram::uniform(cfg.n),
                b: Histogram::uniform(cfg.m),
                support: Some((xs.points, ys.points)),
            })
        }
    }
}
