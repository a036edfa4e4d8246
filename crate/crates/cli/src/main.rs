use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lrot_cli::check::run_checks;
use lrot_cli::datagen::generate;
use lrot_cli::plots::{emit_plots, heatmap_pgm};
use lrot_cli::sweep::{read_csv, reference_plan, run_cell, run_sweep, write_outputs};
use lrot_cli::{CliError, ExperimentConfig, Method, Result, SolverEntry};

#[derive(Parser)]
#[command(name = "lrot", version, about = "Low-rank optimal transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generated cost matrix and histograms as CSV.
    Gen(Common),
    /// Run one solver on the config's problem.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run every cell of the config; writes results.csv and manifest.json.
    Sweep(Common),
    /// Render plots/*.svg from a results.csv.
    Plot(Common),
    /// Randomized checks of the GW inequalities.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    match (&common.out, &common.config) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(_)) => Ok(load(common)?.output_dir),
        (None, None) => Ok(PathBuf::from("out")),
    }
}

fn gen(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    for &seed in &cfg.seeds {
        let inst = generate(&cfg, seed)?;
        let save = |name: &str, m: &ndarray::Array2<f64>| lrot::io::save_matrix(m, dir.join(format!("seed{seed}_{name}.csv")));
        save("cost", &inst.cost.to_dense())?;
        lrot::io::save_vector(inst.a.weights(), dir.join(format!("seed{seed}_a.csv")))?;
        lrot::io::save_vector(inst.b.weights(), dir.join(format!("seed{seed}_b.csv")))?;
        if let Some((x, y)) = &inst.support {
            save("x", x)?;
            save("y", y)?;
        }
    }
    println!("wrote {} instance(s) to {}", cfg.seeds.len(), dir.display());
    Ok(true)
}

fn solve(common: &Common, entry: SolverEntry) -> Result<bool> {
    let mut cfg = load(common)?;
    cfg.solvers = vec![entry.clone()];
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let inst = generate(&cfg, seed)?;
    let reference = reference_plan(&inst.cost, &inst.a, &inst.b)?;
    let cell = run_cell(&inst, &reference, &entry, seed);
    println!("{}", serde_json::to_string_pretty(&cell.row)?);
    if let (Some(dir), Some(p)) = (&common.out, &cell.coupling) {
        std::fs::create_dir_all(dir)?;
        lrot::io::save_matrix(p, dir.join(format!("{}.csv", cell.row.cell_name())))?;
        std::fs::write(dir.join(format!("{}.pgm", cell.row.cell_name())), heatmap_pgm(p))?;
    }
    Ok(cell.row.succeeded())
}

fn sweep(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let out = run_sweep(&cfg)?;
    let written = write_outputs(&cfg, &out, &cfg.output_dir)?;
    let failed = out.cells.iter().filter(|c| !c.row.succeeded()).count();
    println!("{} cells, {failed} failed; wrote {} file(s) to {}", out.cells.len(), written.len(), cfg.output_dir.display());
    Ok(failed == 0)
}

fn plot(dir: &Path) -> Result<bool> {
    let rows = read_csv(std::fs::File::open(dir.join("results.csv"))?)?;
    for path in emit_plots(&rows, dir)? {
        println!("{}", path.display());
    }
    Ok(true)
}

fn check(seed: u64, trials: usize) -> Result<bool> {
    let results = run_checks(seed, trials)?;
    for r in &results {
        println!("{r}");
    }
    Ok(results.iter().all(|r| r.passed()))
}

fn run(cli: Cli) -> Result<bool> {
    let threads = match &cli.command {
        Command::Gen(c) | Command::Sweep(c) | Command::Plot(c) => c.threads,
        Command::Solve { common, .. } | Command::Check { common, .. } => common.threads,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen(c) => gen(c),
        Command::Solve {
            common,
            method,
            rank,
            epsilon,
            alpha,
        } => solve(
            common,
            SolverEntry {
                method: *method,
                rank: *rank,
                epsilon: *epsilon,
                alpha: *alpha,
                step: None,
                max_iter: None,
                stop_tol: None,
            },
        ),
        Command::Sweep(c) => sweep(c),
        Command::Plot(c) => plot(&out_dir(c)?),
        Command::Check { common, trials } => check(common.seed.unwrap_or(0), *trials),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
