//! Solver runs over a config's solver matrix and seeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lrot::lot::StepSchedule;
use lrot::sinkhorn::{round_to_polytope, sinkhorn_log_warm, LogScaling};
use lrot::variants::{lot_fixed_marginal, lot_ibp_solve, FixedMarginalConfig};
use lrot::{assemble_coupling, entropic_ot, lot_solve, CostOperator, Histogram, LotConfig, LotSolution, SinkhornOptions};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, SolverEntry};
use crate::datagen::{generate, Instance};
use crate::error::{CliError, Result};

/// Reference regularization relative to the mean cost.
pub const REFERENCE_EPS_SCALE: f64 = 1e-3;
/// Above this value of `max(C)/ε` plain Sinkhorn risks kernel underflow.
/// Largest marginal violation of the reference iterate accepted before rounding.
const REFERENCE_MAX_VIOLATION: f64 = 1e-5;
/// Per-stage shrink factor of the reference ε schedule.
const ANNEAL_FACTOR: f64 = 0.25;
const LOG_DOMAIN_THRESHOLD: f64 = 500.0;

/// Approximate unregularized optimum: log-domain Sinkhorn at `ε = 1e-3 · mean(C)`, rounded
/// onto the transport polytope.
#[derive(Debug, Clone)]
pub struct Reference {
    pub coupling: Array2<f64>,
    pub cost: f64,
    pub epsilon: f64,
}

pub fn reference_plan(c: &CostOperator, a: &Histogram, b: &Histogram) -> Result<Reference> {
    let epsilon = REFERENCE_EPS_SCALE * c.mean();
    if !(epsilon > 0.0) {
        // Zero cost: every coupling is optimal.
        let p = a.view().insert_axis(ndarray::Axis(1)).dot(&b.view().insert_axis(ndarray::Axis(0)));
        return Ok(Reference { coupling: p, cost: 0.0, epsilon });
    }
    // ε-scaling: anneal from mean(C) down to the target, warm-starting the potentials.
    let cd = c.to_dense();
    let mut stage_eps = c.mean();
    let mut potentials: Option<LogScaling> = None;
    loop {
        let last = stage_eps <= epsilon;
        let eps_k = stage_eps.max(epsilon);
        let opts = SinkhornOptions {
            tol: if last { 1e-9 } else { 1e-6 },
            max_iter: if last { 200_000 } else { 20_000 },
            ..Default::default()
        };
        let log_k = cd.mapv(|x| -x / eps_k);
        let (scal, out) = sinkhorn_log_warm(&log_k, a, b, &opts, potentials.as_ref())?;
        if last {
            if out.violation > REFERENCE_MAX_VIOLATION {
                return Err(lrot::Error::NonConvergence {
                    solver: "reference",
                    iterations: out.iterations,
                    violation: out.violation,
                }
                .into());
            }
            if out.violation >= opts.tol {
                log::warn!("reference plan stopped at marginal violation {:.2e}; rounding it", out.violation);
            }
            let coupling = round_to_polytope(&scal.coupling(&log_k), a, b)?;
            let cost = c.inner(coupling.view())?;
            return Ok(Reference { coupling, cost, epsilon });
        }
        // Potentials are in units of ε: keep the duals f·ε fixed across stages.
        let next = (stage_eps * ANNEAL_FACTOR).max(epsilon);
        let ratio = eps_k / next;
        potentials = Some(LogScaling {
            f: scal.f.mapv(|x| x * ratio),
            h: scal.h.mapv(|x| x * ratio),
        });
        stage_eps = next;
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub method: Method,
    pub rank: Option<usize>,
    pub epsilon: f64,
    pub cost: Option<f64>,
    /// `<C, P> / <C, P*>`.
    pub ratio: Option<f64>,
    /// `‖P − P*‖₁`.
    pub l1_to_reference: Option<f64>,
    pub wall_seconds: f64,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    /// File stem used for dumped couplings.
    pub fn cell_name(&self) -> String {
        match self.rank {
            Some(r) => format!("seed{}_{}_r{}_eps{}", self.seed, self.method.name(), r, self.epsilon),
            None => format!("seed{}_{}_eps{}", self.seed, self.method.name(), self.epsilon),
        }
    }
}

/// Outcome of one solver cell: the row plus its dense coupling when the run succeeded.
pub struct CellOutput {
    pub row: ResultRow,
    pub coupling: Option<Array2<f64>>,
}

fn lot_config(entry: &SolverEntry, rank: usize, seed: u64) -> LotConfig {
    let mut cfg = LotConfig::new(rank, entry.epsilon);
    cfg.seed = seed;
    if let Some(a) = entry.alpha {
        cfg.alpha = a;
    }
    if let Some(s) = entry.step {
        cfg.step = StepSchedule::Constant(s);
    }
    if let Some(k) = entry.max_iter {
        cfg.max_iter = k;
    }
    if let Some(t) = entry.stop_tol {
        cfg.stop_tol = t;
    }
    cfg
}

/// Runs a single solver and returns its dense coupling and outer iteration count.
pub fn solve_entry(inst: &Instance, entry: &SolverEntry, seed: u64) -> Result<(Array2<f64>, usize)> {
    let c = inst.factored.as_ref().unwrap_or(&inst.cost);
    let (a, b) = (&inst.a, &inst.b);
    let low_rank = |sol: LotSolution| -> Result<(Array2<f64>, usize)> {
        Ok((assemble_coupling(&sol.coupling)?, sol.report.iterations()))
    };
    match (entry.method, entry.rank) {
        (Method::Sinkhorn, _) => {
            let mut opts = SinkhornOptions::default();
            if let Some(k) = entry.max_iter {
                opts.max_iter = k;
            }
            let log_domain = inst.cost.to_dense().fold(0.0f64, |m, &v| m.max(v)) / entry.epsilon > LOG_DOMAIN_THRESHOLD;
            let out = entropic_ot(&inst.cost, a, b, entry.epsilon, &opts, log_domain)?;
            let iters = out.report.inner_iterations.iter().sum();
            Ok((out.coupling, iters))
        }
        (_, None) => Err(CliError::Config(format!("{} needs a rank", entry.method.name()))),
        (Method::Lot, Some(r)) => low_rank(lot_solve(c, a, b, &lot_config(entry, r, seed))?),
        (Method::LotIbp, Some(r)) => low_rank(lot_ibp_solve(c, a, b, &lot_config(entry, r, seed))?),
        (Method::LotFixed, Some(r)) => {
            let mut cfg = FixedMarginalConfig::uniform(r, entry.epsilon);
            cfg.seed = seed;
            if let Some(s) = entry.step {
                cfg.step = StepSchedule::Constant(s);
            }
            if let Some(k) = entry.max_iter {
                cfg.max_iter = k;
            }
            if let Some(t) = entry.stop_tol {
                cfg.stop_tol = t;
            }
            low_rank(lot_fixed_marginal(c, a, b, &cfg)?)
        }
    }
}

/// Runs one cell; solver failures become rows with an error tag.
pub fn run_cell(inst: &Instance, reference: &Reference, entry: &SolverEntry, seed: u64) -> CellOutput {
    let start = Instant::now();
    let solved = solve_entry(inst, entry, seed).and_then(|(p, iters)| Ok((inst.cost.inner(p.view())?, p, iters)));
    let wall_seconds = start.elapsed().as_secs_f64();
    let mut row = ResultRow {
        seed,
        method: entry.method,
        rank: entry.rank.filter(|_| entry.method.is_low_rank()),
        epsilon: entry.epsilon,
        cost: None,
        ratio: None,
        l1_to_reference: None,
        wall_seconds,
        iterations: None,
        error: None,
    };
    match solved {
        Ok((cost, p, iters)) => {
            row.cost = Some(cost);
            row.ratio = Some(cost / reference.cost);
            row.l1_to_reference = Some((&p - &reference.coupling).mapv(f64::abs).sum());
            row.iterations = Some(iters);
            CellOutput { row, coupling: Some(p) }
        }
        Err(e) => {
            log::warn!("{} failed: {e}", row.cell_name());
            row.error = Some(e.to_string());
            CellOutput { row, coupling: None }
        }
    }
}

/// Per-seed data shared by all of that seed's cells.
pub struct SeedSummary {
    pub seed: u64,
    pub reference_cost: f64,
    pub reference_epsilon: f64,
}

pub struct SweepOutput {
    pub cells: Vec<CellOutput>,
    pub seeds: Vec<SeedSummary>,
}

impl SweepOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }

    pub fn all_succeeded(&self) -> bool {
        self.cells.iter().all(|c| c.row.succeeded())
    }
}

/// Every (seed, solver) cell of the config. Cells may run on the current rayon pool; the
/// output order is seed-major, then the config's solver order, whatever the scheduling.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let inst = generate(cfg, seed)?;
        let reference = reference_plan(&inst.cost, &inst.a, &inst.b)?;
        let mut out: Vec<CellOutput> = cfg
            .solvers
            .par_iter()
            .map(|entry| run_cell(&inst, &reference, entry, seed))
            .collect();
        cells.append(&mut out);
        seeds.push(SeedSummary {
            seed,
            reference_cost: reference.cost,
            reference_epsilon: reference.epsilon,
        });
    }
    Ok(SweepOutput { cells, seeds })
}

pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    cells: usize,
    failed: usize,
    references: Vec<serde_json::Value>,
}

/// Writes `results.csv`, `manifest.json` and, when requested, `couplings/*.csv` under `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &SweepOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let results = dir.join("results.csv");
    write_csv(&out.rows(), std::fs::File::create(&results)?)?;
    written.push(results);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        cells: out.cells.len(),
        failed: out.cells.iter().filter(|c| !c.row.succeeded()).count(),
        references: out
            .seeds
            .iter()
            .map(|s| serde_json::json!({"seed": s.seed, "cost": s.reference_cost, "epsilon": s.reference_epsilon}))
            .collect(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    written.push(path);
    if cfg.dump_couplings {
        let cdir = dir.join("couplings");
        std::fs::create_dir_all(&cdir)?;
        for cell in &out.cells {
            if let Some(p) = &cell.coupling {
                let path = cdir.join(format!("{}.csv", cell.row.cell_name()));
                lrot::io::save_matrix(p, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
