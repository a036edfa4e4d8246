//! Experiment description read from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Two 1-D mixture densities evaluated on regular grids.
    #[serde(rename = "gmm-1d-grid")]
    Gmm1dGrid,
    /// `N((1,1), I)` against `N(0, 0.1 I)`.
    #[serde(rename = "gaussian-2d")]
    Gaussian2d,
    /// Three-component source against two-component target, `Σ = 0.05 I`.
    #[serde(rename = "gmm-2d")]
    Gmm2d,
    /// `Gmm2d` embedded in 10 dimensions.
    #[serde(rename = "gmm-10d")]
    Gmm10d,
    /// Shortest-path distances between the two halves of a random complete graph.
    GraphSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CostKind {
    SqEuclid,
    Euclid,
    PNorm { p: f64 },
    ShortestPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Entropic OT by Sinkhorn scaling.
    Sinkhorn,
    /// Low-rank OT, mirror descent with Dykstra projections.
    Lot,
    /// Low-rank OT, mirror descent with IBP projections (no lower bound on `g`).
    LotIbp,
    /// Low-rank OT with the inner marginal fixed to uniform.
    LotFixed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sinkhorn => "sinkhorn",
            Method::Lot => "lot",
            Method::LotIbp => "lot-ibp",
            Method::LotFixed => "lot-fixed",
        }
    }

    pub fn is_low_rank(self) -> bool {
        self != Method::Sinkhorn
    }
}

/// One cell of the solver matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverEntry {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Outer stopping threshold on the Δ criterion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
}

impl SolverEntry {
    pub fn sinkhorn(epsilon: f64) -> Self {
        SolverEntry {
            method: Method::Sinkhorn,
            rank: None,
            epsilon,
            alpha: None,
            step: None,
            max_iter: None,
            stop_tol: None,
        }
    }

    pub fn low_rank(method: Method, rank: usize, epsilon: f64) -> Self {
        SolverEntry {
            rank: Some(rank),
            method,
            ..Self::sinkhorn(epsilon)
        }
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(format!("{}: {msg}", self.method.name())));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("step must be positive, got {s}"));
            }
        }
        match (self.method, self.rank) {
            (Method::Sinkhorn, _) if self.epsilon == 0.0 => bad("needs epsilon > 0".into()),
            (Method::Sinkhorn, _) => Ok(()),
            (_, None) => bad("needs a rank".into()),
            (_, Some(r)) if r == 0 || r > n.min(m) => bad(format!("rank must lie in 1..={}, got {r}", n.min(m))),
            (_, Some(r)) => match self.alpha {
                Some(a) if !(a > 0.0) || a * r as f64 > 1.0 => bad(format!("alpha must lie in (0, 1/r], got {a}")),
                _ => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub cost: CostKind,
    pub solvers: Vec<SolverEntry>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Write every coupling as `couplings/<cell>.csv`.
    #[serde(default)]
    pub dump_couplings: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m < 2 {
            return Err(CliError::Config(format!("sizes must be >= 2, got n={} m={}", self.n, self.m)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        let graph_family = self.family == Family::GraphSplit;
        let graph_cost = self.cost == CostKind::ShortestPath;
        if graph_family != graph_cost {
            return Err(CliError::Config("the graph-split family goes with the shortest-path cost, and only with it".into()));
        }
        if graph_family && self.n != self.m {
            return Err(CliError::Config("graph-split splits 2n nodes into halves, so n must equal m".into()));
        }
        if let CostKind::PNorm { p } = self.cost {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(CliError::Config(format!("p-norm exponent must be >= 1, got {p}")));
            }
        }
        self.solvers.iter().try_for_each(|s| s.validate(self.n, self.m))
    }
}
