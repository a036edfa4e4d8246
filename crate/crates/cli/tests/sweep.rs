use lrot_cli::datagen::generate;
use lrot_cli::sweep::{read_csv, reference_plan, run_sweep, write_csv, write_outputs, ResultRow};
use lrot_cli::{ExperimentConfig, Method, SolverEntry};
use lrot::{CostOperator, Histogram};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(json_solvers: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"family": "gmm-2d", "n": 12, "m": 10, "cost": {{"kind": "sq-euclid"}},
            "solvers": {json_solvers}, "seeds": [3, 4]}}"#
    ))
    .unwrap()
}

fn without_time(rows: &[ResultRow]) -> Vec<u8> {
    let stripped: Vec<ResultRow> = rows.iter().map(|r| ResultRow { wall_seconds: 0.0, ..r.clone() }).collect();
    let mut buf = Vec::new();
    write_csv(&stripped, &mut buf).unwrap();
    buf
}

#[test]
fn rank_one_row_is_the_product_cost() {
    let cfg = config(r#"[{"method": "lot", "rank": 1}, {"method": "lot-ibp", "rank": 1}, {"method": "lot-fixed", "rank": 1}]"#);
    let out = run_sweep(&cfg).unwrap();
    assert!(out.all_succeeded());
    for cell in &out.cells {
        let inst = generate(&cfg, cell.row.seed).unwrap();
        let c = inst.cost.to_dense();
        let (a, b) = (inst.a.weights(), inst.b.weights());
        let product: f64 = (0..12).flat_map(|i| (0..10).map(move |j| (i, j))).map(|(i, j)| c[[i, j]] * a[i] * b[j]).sum();
        assert!((cell.row.cost.unwrap() - product).abs() <= 1e-14 * product);
    }
}

#[test]
fn large_epsilon_sinkhorn_ratio_is_the_product_ratio() {
    let cfg = config(r#"[{"method": "sinkhorn", "epsilon": 1000.0}]"#);
    let out = run_sweep(&cfg).unwrap();
    for (cell, seed) in out.cells.iter().zip(&out.seeds) {
        let inst = generate(&cfg, seed.seed).unwrap();
        let c = inst.cost.to_dense();
        let product = c.sum() / (12.0 * 10.0);
        let expected = product / seed.reference_cost;
        assert!((cell.row.ratio.unwrap() - expected).abs() <= 1e-3 * expected);
    }
}

#[test]
fn sweeps_are_deterministic_and_ordered() {
    let solvers = r#"[{"method": "sinkhorn", "epsilon": 0.05}, {"method": "lot", "rank": 3, "step": 10.0, "max_iter": 20},
                      {"method": "lot-fixed", "rank": 2, "epsilon": 0.01, "step": 10.0, "max_iter": 20}]"#;
    let cfg = config(solvers);
    let first = run_sweep(&cfg).unwrap().rows();
    let second = run_sweep(&cfg).unwrap().rows();
    assert_eq!(without_time(&first), without_time(&second));
    let order: Vec<(u64, Method)> = first.iter().map(|r| (r.seed, r.method)).collect();
    assert_eq!(
        order,
        vec![
            (3, Method::Sinkhorn),
            (3, Method::Lot),
            (3, Method::LotFixed),
            (4, Method::Sinkhorn),
            (4, Method::Lot),
            (4, Method::LotFixed)
        ]
    );
}

#[test]
fn failures_become_error_rows() {
    let mut cfg = config(r#"[{"method": "sinkhorn", "epsilon": 0.01, "max_iter": 1}, {"method": "lot", "rank": 2, "max_iter": 3}]"#);
    cfg.seeds = vec![0];
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.cells.len(), 2);
    assert!(!out.cells[0].row.succeeded());
    assert!(out.cells[0].row.error.as_deref().unwrap().contains("converge"));
    assert!(out.cells[1].row.succeeded());
    assert!(!out.all_succeeded());
}

#[test]
fn outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(r#"[{"method": "sinkhorn", "epsilon": 0.1}, {"method": "lot", "rank": 2, "max_iter": 5}]"#);
    cfg.dump_couplings = true;
    let out = run_sweep(&cfg).unwrap();
    let written = write_outputs(&cfg, &out, dir.path()).unwrap();
    assert_eq!(written.len(), 2 + 4);
    let rows = read_csv(std::fs::File::open(dir.path().join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows, out.rows());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cells"], 4);
    assert_eq!(manifest["failed"], 0);
    let p = lrot::io::load_matrix(dir.path().join("couplings").join(format!("{}.csv", rows[1].cell_name()))).unwrap();
    assert_eq!(p.dim(), (12, 10));
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn reference_matches_assignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 2..=7 {
        let c = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
        let exact = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let u = Histogram::uniform(n);
        let reference = reference_plan(&CostOperator::dense(c).unwrap(), &u, &u).unwrap();
        assert!((reference.cost - exact).abs() <= 0.01 * exact, "n = {n}: {} vs {exact}", reference.cost);
    }
}

#[test]
fn single_cell_helpers() {
    let cfg = config("[]");
    let inst = generate(&cfg, 3).unwrap();
    let entry = SolverEntry::low_rank(Method::LotIbp, 2, 0.0);
    let (p, iters) = lrot_cli::sweep::solve_entry(&inst, &SolverEntry { max_iter: Some(4), ..entry }, 1).unwrap();
    assert_eq!(p.dim(), (12, 10));
    assert!(iters <= 4);
    assert!((p.sum() - 1.0).abs() < 1e-6);
}
