//! End-to-end acceptance criteria. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.

use std::time::{Duration, Instant};

use lrot::costfact::{factorization_error, lr_distance, sqeuclid_factorization, Metric, PointCloud};
use lrot::gw::{
    cross_term, gw_energy_bruteforce, gw_energy_fast, gw_energy_lipschitz_check, gw_fixed_gradient, gw_mirror_descent,
    gw_quadratic, gw_schedule_from_target, GwOptions, GwProblem, GwSchedule, Plan, Similarity,
};
use lrot::lot::{
    gradient, lot_solve, lr_dykstra, project_c1, project_c2, smoothness_constant, DykstraOptions, KernelTriple, LotConfig,
    StepSchedule,
};
use lrot::sinkhorn::sinkhorn;
use lrot::variants::{lot_fixed_marginal, lot_ibp_solve, FixedMarginalConfig};
use lrot::{
    assemble_coupling, entropic_ot, round_to_polytope, CostOperator, FactoredCoupling, Histogram, KernelOp, SinkhornOptions,
};
use lrot_cli::datagen::generate;
use lrot_cli::sweep::{reference_plan, solve_entry};
use lrot_cli::{ExperimentConfig, Method, SolverEntry};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = out.pass && in_time;
    let budget = limit.map(|l| format!(" / limit {:.0}s", l.as_secs_f64())).unwrap_or_default();
    println!(
        "criterion {id:>2} [{}] {name}: {} ({:.2}s{budget})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn histogram(rng: &mut ChaCha8Rng, n: usize) -> Histogram {
    Histogram::normalized(Array1::from_shape_fn(n, |_| rng.random::<f64>() + 0.1)).unwrap()
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random::<f64>())
}

fn outer(a: &Histogram, b: &Histogram) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

fn l1(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    (x - y).mapv(f64::abs).sum()
}

// ---------------------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------------------

/// `Σ x log(x/y) − x + y`.
fn gen_kl(x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    x.zip(y).map(|(x, y)| if x > 0.0 { x * (x / y).ln() - x + y } else { y }).sum()
}

fn triple_kl(p: &FactoredCoupling, xi: &KernelTriple) -> f64 {
    gen_kl(p.q.iter().copied(), xi.xi1.iter().copied())
        + gen_kl(p.r.iter().copied(), xi.xi2.iter().copied())
        + gen_kl(p.g.iter().copied(), xi.xi3.iter().copied())
}

/// Linear constraint `Σ coef · x[idx] = rhs` on the flattened `(Q, R, g)`.
struct Constraint {
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

/// KL projection of a positive vector `xi` onto `{A x = c, x_k ≥ lo for k ∈ bounded}` by
/// spectral projected gradient ascent on the dual (the `μ ≥ 0` multipliers of the bounds
/// are projected onto the nonnegative orthant).
fn kl_projection_oracle(xi: &[f64], cons: &[Constraint], bounded: &[usize], lo: f64) -> Vec<f64> {
    let (nc, nb) = (cons.len(), bounded.len());
    let primal = |y: &[f64]| -> Vec<f64> {
        let mut s = vec![0.0; xi.len()];
        for (c, lam) in cons.iter().zip(y) {
            for &(k, a) in &c.terms {
                s[k] += a * lam;
            }
        }
        for (b, mu) in bounded.iter().zip(&y[nc..]) {
            s[*b] += mu;
        }
        xi.iter().zip(&s).map(|(x, s)| x * s.exp()).collect()
    };
    let dual = |y: &[f64], x: &[f64]| -> f64 {
        -x.iter().sum::<f64>()
            + cons.iter().zip(y).map(|(c, l)| l * c.rhs).sum::<f64>()
            + y[nc..].iter().map(|mu| mu * lo).sum::<f64>()
    };
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut g: Vec<f64> = cons
            .iter()
            .map(|c| c.rhs - c.terms.iter().map(|&(k, a)| a * x[k]).sum::<f64>())
            .collect();
        g.extend(bounded.iter().map(|&k| lo - x[k]));
        g
    };
    let project = |y: &mut [f64]| y[nc..].iter_mut().for_each(|mu| *mu = mu.max(0.0));

    let mut y = vec![0.0; nc + nb];
    let mut x = primal(&y);
    let mut f = dual(&y, &x);
    let mut g = grad(&x);
    let mut step = 1.0;
    for _ in 0..200_000 {
        let mut t = step;
        let (y_new, x_new, f_new) = loop {
            let mut cand: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y + t * g).collect();
            project(&mut cand);
            let xc = primal(&cand);
            let fc = dual(&cand, &xc);
            let ascent: f64 = cand.iter().zip(&y).zip(&g).map(|((c, y), g)| (c - y) * g).sum();
            if fc >= f + 1e-4 * ascent || t < 1e-20 {
                break (cand, xc, fc);
            }
            t *= 0.5;
        };
        let g_new = grad(&x_new);
        let s: Vec<f64> = y_new.iter().zip(&y).map(|(a, b)| a - b).collect();
        let d: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sd: f64 = s.iter().zip(&d).map(|(a, b)| a * b).sum();
        step = if sd < 0.0 { (ss / -sd).clamp(1e-10, 1e10) } else { 1e3 };
        let moved = ss.sqrt();
        y = y_new;
        x = x_new;
        f = f_new;
        g = g_new;
        // Projected-gradient residual: zero exactly at the dual optimum.
        let mut probe: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y + g).collect();
        project(&mut probe);
        let residual: f64 = probe.iter().zip(&y).map(|(p, y)| (p - y).abs()).sum();
        if residual < 1e-14 || moved == 0.0 {
            break;
        }
    }
    x
}

/// Flattened `(Q, R, g)` layout helpers.
struct Layout {
    n: usize,
    m: usize,
    r: usize,
}

impl Layout {
    fn q(&self, i: usize, k: usize) -> usize {
        i * self.r + k
    }
    fn r_(&self, j: usize, k: usize) -> usize {
        self.n * self.r + j * self.r + k
    }
    fn g(&self, k: usize) -> usize {
        (self.n + self.m) * self.r + k
    }
    fn flatten(&self, xi: &KernelTriple) -> Vec<f64> {
        xi.xi1.iter().chain(xi.xi2.iter()).chain(xi.xi3.iter()).copied().collect()
    }
    fn unflatten(&self, x: &[f64]) -> FactoredCoupling {
        let (n, m, r) = (self.n, self.m, self.r);
        FactoredCoupling {
            q: Array2::from_shape_vec((n, r), x[..n * r].to_vec()).unwrap(),
            r: Array2::from_shape_vec((m, r), x[n * r..(n + m) * r].to_vec()).unwrap(),
            g: Array1::from(x[(n + m) * r..].to_vec()),
        }
    }
    fn c1(&self, a: &Histogram, b: &Histogram) -> Vec<Constraint> {
        let rows_q = (0..self.n).map(|i| Constraint {
            terms: (0..self.r).map(|k| (self.q(i, k), 1.0)).collect(),
            rhs: a.weights()[i],
        });
        let rows_r = (0..self.m).map(|j| Constraint {
            terms: (0..self.r).map(|k| (self.r_(j, k), 1.0)).collect(),
            rhs: b.weights()[j],
        });
        rows_q.chain(rows_r).collect()
    }
    fn c2(&self) -> Vec<Constraint> {
        let mut out = Vec::new();
        for k in 0..self.r {
            let mut tq: Vec<(usize, f64)> = (0..self.n).map(|i| (self.q(i, k), 1.0)).collect();
            tq.push((self.g(k), -1.0));
            out.push(Constraint { terms: tq, rhs: 0.0 });
            let mut tr: Vec<(usize, f64)> = (0..self.m).map(|j| (self.r_(j, k), 1.0)).collect();
            tr.push((self.g(k), -1.0));
            out.push(Constraint { terms: tr, rhs: 0.0 });
        }
        out
    }
    fn g_indices(&self) -> Vec<usize> {
        (0..self.r).map(|k| self.g(k)).collect()
    }
}

/// `Σ_{i,j,k,l} (D_ik − D'_jl)² P_ij P_kl` for any matrix `P`.
fn gw_energy_oracle(d: &Array2<f64>, dp: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let (n, m) = p.dim();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            for k in 0..n {
                for l in 0..m {
                    let diff = d[[i, k]] - dp[[j, l]];
                    total += diff * diff * p[[i, j]] * p[[k, l]];
                }
            }
        }
    }
    total
}

fn random_feasible(rng: &mut ChaCha8Rng, a: &Histogram, b: &Histogram) -> Array2<f64> {
    let p = uniform_matrix(rng, a.len(), b.len());
    round_to_polytope(&(&p / p.sum()), a, b).unwrap()
}

// ---------------------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------------------

fn rank_one_exactness() -> Outcome {
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, m) = (rng.random_range(2..=10), rng.random_range(2..=10));
        let c = uniform_matrix(&mut rng, n, m);
        let (a, b) = (histogram(&mut rng, n), histogram(&mut rng, m));
        let mut expected = 0.0;
        for i in 0..n {
            for j in 0..m {
                expected += c[[i, j]] * a.weights()[i] * b.weights()[j];
            }
        }
        let op = CostOperator::dense(c).unwrap();
        let cfg = LotConfig::new(1, 0.0);
        let costs = [
            lot_solve(&op, &a, &b, &cfg).unwrap().cost,
            lot_ibp_solve(&op, &a, &b, &cfg).unwrap().cost,
            lot_fixed_marginal(&op, &a, &b, &FixedMarginalConfig::uniform(1, 0.0)).unwrap().cost,
        ];
        for cost in costs {
            worst = worst.max((cost - expected).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max |cost − aᵀCb| = {worst:.2e} over 20 instances × 3 solvers"))
}

fn projection_oracles() -> Outcome {
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, m, r) = (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(1..=3));
        let mut pos = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0).exp());
        let xi1 = pos(n, r);
        let xi2 = pos(m, r);
        let xi3 = pos(1, r).row(0).to_owned();
        let xi = KernelTriple::new(xi1, xi2, xi3).unwrap();
        let a = histogram(&mut rng, n);
        let b = histogram(&mut rng, m);
        let alpha = rng.random::<f64>() * 0.9 / r as f64;
        let lay = Layout { n, m, r };
        let flat = lay.flatten(&xi);

        let c1 = project_c1(&xi, &a, &b, alpha).unwrap();
        let o1 = lay.unflatten(&kl_projection_oracle(&flat, &lay.c1(&a, &b), &lay.g_indices(), alpha));
        worst = worst.max((triple_kl(&c1, &xi) - triple_kl(&o1, &xi)).abs());

        let c2 = project_c2(&xi).unwrap();
        let o2 = lay.unflatten(&kl_projection_oracle(&flat, &lay.c2(), &[], 0.0));
        worst = worst.max((triple_kl(&c2, &xi) - triple_kl(&o2, &xi)).abs());

        let opts = DykstraOptions {
            tol: 1e-12,
            max_sweeps: 1_000_000,
        };
        let joint = lr_dykstra(&xi, &a, &b, alpha, &opts).unwrap().coupling;
        let mut cons = lay.c1(&a, &b);
        cons.extend(lay.c2());
        let oj = lay.unflatten(&kl_projection_oracle(&flat, &cons, &lay.g_indices(), alpha));
        worst = worst.max((triple_kl(&joint, &xi) - triple_kl(&oj, &xi)).abs());
    }
    outcome(worst <= 1e-6, format!("max KL-objective gap to dual-ascent oracle = {worst:.2e} (50 triples)"))
}

fn descent_bound() -> Outcome {
    let mut rng = rng(3);
    let (n, r, alpha, iters) = (6usize, 2usize, 0.01, 200usize);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let eps = if k % 2 == 0 { 0.0 } else { 0.1 };
        let c = uniform_matrix(&mut rng, n, n);
        let (a, b) = (histogram(&mut rng, n), histogram(&mut rng, n));
        let op = CostOperator::dense(c.clone()).unwrap();
        let l = smoothness_constant(eps, alpha, lrot::linalg::svd(c.view()).s[0]).unwrap();
        let cfg = LotConfig {
            alpha,
            step: StepSchedule::Constant(0.5 / l),
            max_iter: iters,
            stop_tol: 0.0,
            seed: k,
            ..LotConfig::new(r, eps)
        };
        let sol = lot_solve(&op, &a, &b, &cfg).unwrap();
        // min F ≥ min C − ε [(ln(nr) + 1) + (ln(nr) + 1) + (ln r + 1)], so D0 is bounded above.
        let nr = (n * r) as f64;
        let lower = c.iter().copied().fold(f64::INFINITY, f64::min) - eps * (2.0 * (nr.ln() + 1.0) + (r as f64).ln() + 1.0);
        let d0 = sol.initial_objective - lower;
        let min_delta = sol.report.delta.iter().copied().fold(f64::INFINITY, f64::min);
        let bound = 4.0 * l * d0 / sol.report.delta.len() as f64;
        worst = worst.max(min_delta / bound);
    }
    outcome(worst <= 1.05, format!("max min_k Δ_k / (4 L D0 / N) = {worst:.3e} (20 instances, N = 200)"))
}

fn rank_path() -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{"family": "gmm-1d-grid", "n": 50, "m": 55, "cost": {"kind": "p-norm", "p": 1.5},
            "solvers": [], "seeds": [0]}"#,
    )
    .unwrap();
    let inst = generate(&cfg, 0).unwrap();
    let reference = reference_plan(&inst.cost, &inst.a, &inst.b).unwrap();
    let ranks = [1usize, 3, 10, 50];
    let best: Vec<f64> = ranks
        .iter()
        .map(|&r| {
            (0..5u64)
                .map(|seed| {
                    let entry = SolverEntry {
                        step: Some(30.0),
                        max_iter: Some(100),
                        stop_tol: Some(0.0),
                        ..SolverEntry::low_rank(Method::Lot, r, 0.0)
                    };
                    let (p, _) = solve_entry(&inst, &entry, seed).unwrap();
                    inst.cost.inner(p.view()).unwrap()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let violations = best.windows(2).filter(|w| w[1] > w[0] + 1e-6).count();
    let ratio = best[3] / reference.cost;
    let path: Vec<String> = best.iter().map(|c| format!("{:.4}", c / reference.cost)).collect();
    outcome(
        violations == 0 && ratio <= 1.02,
        format!("ratio path over r = {ranks:?}: [{}], {violations} monotonicity violations", path.join(", ")),
    )
}

fn sqeuclid_factorization_exact() -> Outcome {
    let mut rng = rng(5);
    let mut worst = 0.0f64;
    for &(n, m, d) in &[(3usize, 4usize, 1usize), (50, 40, 3), (120, 200, 7), (200, 200, 10)] {
        let x = uniform_matrix(&mut rng, n, d) * 4.0 - 2.0;
        let y = uniform_matrix(&mut rng, m, d) * 4.0 - 2.0;
        let f = sqeuclid_factorization(
            &PointCloud::new(x.clone(), Metric::SqEuclidean).unwrap(),
            &PointCloud::new(y.clone(), Metric::SqEuclidean).unwrap(),
        )
        .unwrap();
        let fd = f.to_dense();
        for i in 0..n {
            for j in 0..m {
                let direct: f64 = (0..d).map(|k| (x[[i, k]] - y[[j, k]]).powi(2)).sum();
                let scale = direct.max(x.row(i).dot(&x.row(i)) + y.row(j).dot(&y.row(j)));
                worst = worst.max((fd[[i, j]] - direct).abs() / scale.max(f64::MIN_POSITIVE));
            }
        }
    }

    let x = uniform_matrix(&mut rng, 30, 3);
    let y = uniform_matrix(&mut rng, 25, 3);
    let factored = sqeuclid_factorization(
        &PointCloud::new(x, Metric::SqEuclidean).unwrap(),
        &PointCloud::new(y, Metric::SqEuclidean).unwrap(),
    )
    .unwrap();
    let dense = CostOperator::dense(factored.to_dense().into_owned()).unwrap();
    let (a, b) = (Histogram::uniform(30), Histogram::uniform(25));
    let cfg = LotConfig {
        step: StepSchedule::Constant(5.0),
        max_iter: 30,
        stop_tol: 0.0,
        record_iterates: true,
        ..LotConfig::new(4, 0.05)
    };
    let sf = lot_solve(&factored, &a, &b, &cfg).unwrap();
    let sd = lot_solve(&dense, &a, &b, &cfg).unwrap();
    let mut gap = 0.0f64;
    for (p, q) in sf.iterates.iter().zip(&sd.iterates) {
        let d = |x: &Array2<f64>, y: &Array2<f64>| (x - y).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        gap = gap.max(d(&p.q, &q.q)).max(d(&p.r, &q.r));
        gap = gap.max((&p.g - &q.g).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v)));
    }
    let same_len = sf.iterates.len() == sd.iterates.len() && !sf.iterates.is_empty();
    outcome(
        worst <= 1e-12 && gap <= 1e-9 && same_len,
        format!("max relative entry error {worst:.2e}; factored vs dense LOT iterate gap {gap:.2e} over {} iterates", sf.iterates.len()),
    )
}

fn lr_distance_bound() -> Outcome {
    let (n, r, gamma) = (60usize, 5usize, 0.1);
    let mut held = 0;
    for seed in 0..100u64 {
        let mut rng = rng(600 + seed);
        let x = PointCloud::new(uniform_matrix(&mut rng, n, 2), Metric::Euclidean).unwrap();
        let y = PointCloud::new(uniform_matrix(&mut rng, n, 2), Metric::Euclidean).unwrap();
        let d = Array2::from_shape_fn((n, n), |(i, j)| {
            let (dx, dy) = (x.points[[i, 0]] - y.points[[j, 0]], x.points[[i, 1]] - y.points[[j, 1]]);
            (dx * dx + dy * dy).sqrt()
        });
        let approx = lr_distance(&x, &y, r, gamma, seed).unwrap();
        let (err, best) = factorization_error(d.view(), approx.m.view(), approx.n.view()).unwrap();
        let norm2 = d.mapv(|v| v * v).sum();
        held += usize::from(err <= best + gamma * norm2);
    }
    outcome(held >= 95, format!("bound held in {held}/100 runs"))
}

fn gw_oracle_equivalence() -> Outcome {
    let mut rng = rng(7);
    let (mut worst_energy, mut worst_trace) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (n, m) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let fa = uniform_matrix(&mut rng, n, 2) - 0.5;
        let fb = uniform_matrix(&mut rng, m, 3) - 0.5;
        let (a, b) = (histogram(&mut rng, n), histogram(&mut rng, m));
        let prob = GwProblem::new(Similarity::factored(fa.clone()).unwrap(), Similarity::factored(fb.clone()).unwrap(), a.clone(), b.clone()).unwrap();
        let dense = prob.densified();
        let p = random_feasible(&mut rng, &a, &b);
        let (d, dp) = (fa.dot(&fa.t()), fb.dot(&fb.t()));
        let oracle = gw_energy_oracle(&d, &dp, &p);
        for e in [
            gw_energy_fast(&prob, Plan::Dense(p.view())).unwrap(),
            gw_energy_fast(&dense, Plan::Dense(p.view())).unwrap(),
            gw_energy_bruteforce(&dense, p.view()).unwrap(),
        ] {
            worst_energy = worst_energy.max((e - oracle).abs());
        }
        // Tr(G Gᵀ) with G = Aᵀ P B equals ⟨D P D', P⟩.
        let g = fa.t().dot(&p).dot(&fb);
        let trace: f64 = g.iter().map(|v| v * v).sum();
        let direct = d.dot(&p).dot(&dp).iter().zip(p.iter()).map(|(x, y)| x * y).sum::<f64>();
        let fast = cross_term(&prob.d, &prob.d_prime, Plan::Dense(p.view()));
        worst_trace = worst_trace.max((trace - direct).abs() / direct.abs().max(1e-300)).max((fast - direct).abs() / direct.abs().max(1e-300));
    }
    outcome(
        worst_energy <= 1e-10 && worst_trace <= 1e-12,
        format!("max energy error {worst_energy:.2e}, max relative trace error {worst_trace:.2e} (200 plans)"),
    )
}

fn gw_lipschitz() -> Outcome {
    let mut rng = rng(8);
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = Similarity::factored(uniform_matrix(&mut rng, 4, 2) - 0.5).unwrap();
        let dp = Similarity::factored(uniform_matrix(&mut rng, 4, 2) - 0.5).unwrap();
        let (a, b) = (histogram(&mut rng, 4), histogram(&mut rng, 4));
        let (p1, p2) = (random_feasible(&mut rng, &a, &b), random_feasible(&mut rng, &a, &b));
        let (dd, ddp) = (d.to_dense().into_owned(), dp.to_dense().into_owned());
        let lhs = (gw_energy_oracle(&dd, &ddp, &p1) - gw_energy_oracle(&dd, &ddp, &p2)).abs();
        let mut l = 0.0f64;
        for x in dd.iter() {
            for y in ddp.iter() {
                l = l.max((x - y).abs());
            }
        }
        let rhs = 2.0 * l * l1(&p1, &p2);
        let (lib_lhs, lib_rhs) = gw_energy_lipschitz_check(&d, &dp, p1.view(), p2.view()).unwrap();
        violations += usize::from(lhs > rhs) + usize::from(lib_lhs > lib_rhs);
        worst = worst.max(lhs / rhs);
    }
    outcome(violations == 0, format!("{violations} violations over 1000 pairs, max |ΔE| / (2L‖ΔP‖₁) = {worst:.3}"))
}

fn gw_solver_sanity() -> Outcome {
    let mut rng = rng(9);
    let n = 10;
    let f = uniform_matrix(&mut rng, n, 3);
    let h = histogram(&mut rng, n);
    let prob = GwProblem::new(Similarity::factored(f.clone()).unwrap(), Similarity::factored(f).unwrap(), h.clone(), h.clone()).unwrap();
    let e0 = gw_energy_bruteforce(&prob, outer(&h, &h).view()).unwrap();
    let schedule = GwSchedule::mirror(2.0 / prob.sup_diff(), 30, 1e-9);
    let opts = GwOptions {
        record_couplings: true,
        ..Default::default()
    };
    let fact = gw_quadratic(&prob, &schedule, &opts).unwrap();
    let dense = gw_mirror_descent(&prob.densified(), &schedule, &opts).unwrap();
    let best = fact.energy_trace.iter().copied().fold(f64::INFINITY, f64::min);
    let mut gap = 0.0f64;
    for (p, q) in fact.couplings.iter().zip(&dense.couplings) {
        gap = gap.max((p - q).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v)));
    }
    for (x, y) in fact.energy_trace.iter().zip(&dense.energy_trace) {
        gap = gap.max((x - y).abs());
    }
    let same_len = fact.couplings.len() == 30 && dense.couplings.len() == 30;

    // δ = 0.1, I = 2, L = 1, R = 2, ε = 1, n = m = 4, evaluated by hand from the closed forms.
    let s = gw_schedule_from_target(0.1, 2, 1.0, 2.0, 1.0, 4, 4).unwrap();
    let golden_targets = [0.0125, 0.025];
    let golden_mu = [5.643444886313416e-08, 2.50858931953941e-07];
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    let schedule_ok = s.targets.len() == 2
        && s.targets.iter().zip(golden_targets).all(|(x, y)| rel(*x, y) <= 1e-12)
        && s.precisions.iter().zip(golden_mu).all(|(x, y)| rel(*x, y) <= 1e-12);
    outcome(
        best <= 0.5 * e0 && gap <= 1e-8 && same_len && schedule_ok,
        format!(
            "best energy / E(abᵀ) = {:.4}; dense vs factored gap {gap:.2e}; schedule golden values {}",
            best / e0,
            if schedule_ok { "match" } else { "differ" }
        ),
    )
}

fn gradient_checks() -> Outcome {
    let mut rng = rng(10);
    let (n, m, r, eps) = (5usize, 5usize, 2usize, 0.1);
    let c = uniform_matrix(&mut rng, n, m);
    let op = CostOperator::dense(c.clone()).unwrap();
    let pos = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 0.2 + 0.05);
    let fc = FactoredCoupling {
        q: pos(&mut rng, n, r),
        r: pos(&mut rng, m, r),
        g: Array1::from_shape_fn(r, |_| rng.random::<f64>() * 0.5 + 0.25),
    };
    // F = <C, Q Diag(1/g) Rᵀ> + ε Σ x (log x − 1) over all three blocks.
    let objective = |fc: &FactoredCoupling| -> f64 {
        let mut cost = 0.0;
        for i in 0..n {
            for j in 0..m {
                for k in 0..r {
                    cost += c[[i, j]] * fc.q[[i, k]] * fc.r[[j, k]] / fc.g[k];
                }
            }
        }
        let neg_h: f64 = fc.q.iter().chain(fc.r.iter()).chain(fc.g.iter()).map(|&x| x * (x.ln() - 1.0)).sum();
        cost + eps * neg_h
    };
    let (gq, gr, gg) = gradient(&op, &fc, eps).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut compare = |analytic: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-8));
    };
    for i in 0..n {
        for k in 0..r {
            let (mut p, mut q) = (fc.clone(), fc.clone());
            p.q[[i, k]] += h;
            q.q[[i, k]] -= h;
            compare(gq[[i, k]], objective(&p), objective(&q));
        }
    }
    for j in 0..m {
        for k in 0..r {
            let (mut p, mut q) = (fc.clone(), fc.clone());
            p.r[[j, k]] += h;
            q.r[[j, k]] -= h;
            compare(gr[[j, k]], objective(&p), objective(&q));
        }
    }
    for k in 0..r {
        let (mut p, mut q) = (fc.clone(), fc.clone());
        p.g[k] += h;
        q.g[k] -= h;
        compare(gg[k], objective(&p), objective(&q));
    }
    let lot_worst = worst;

    // Fixed-marginal GW: E(Q Diag(1/g) Rᵀ) with g held fixed.
    let fa = uniform_matrix(&mut rng, n, 2) - 0.5;
    let fb = uniform_matrix(&mut rng, m, 2) - 0.5;
    let (d, dp) = (fa.dot(&fa.t()), fb.dot(&fb.t()));
    let prob = GwProblem::new(Similarity::factored(fa).unwrap(), Similarity::factored(fb).unwrap(), Histogram::uniform(n), Histogram::uniform(m)).unwrap();
    let energy = |fc: &FactoredCoupling| gw_energy_oracle(&d, &dp, &assemble_coupling(fc).unwrap());
    let (eq, er) = gw_fixed_gradient(&prob, &fc).unwrap();
    let mut gw_worst = 0.0f64;
    let mut compare = |analytic: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * h);
        gw_worst = gw_worst.max((analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-8));
    };
    for i in 0..n {
        for k in 0..r {
            let (mut p, mut q) = (fc.clone(), fc.clone());
            p.q[[i, k]] += h;
            q.q[[i, k]] -= h;
            compare(eq[[i, k]], energy(&p), energy(&q));
            let (mut p, mut q) = (fc.clone(), fc.clone());
            p.r[[i, k]] += h;
            q.r[[i, k]] -= h;
            compare(er[[i, k]], energy(&p), energy(&q));
        }
    }
    outcome(
        lot_worst <= 1e-5 && gw_worst <= 1e-5,
        format!("max relative FD error: LOT {lot_worst:.2e}, fixed-marginal GW {gw_worst:.2e}"),
    )
}

fn sinkhorn_properties() -> Outcome {
    let mut rng = rng(11);
    let mut worst_increase = f64::NEG_INFINITY;
    for _ in 0..50 {
        let (n, m) = (rng.random_range(2..=20), rng.random_range(2..=20));
        let k = KernelOp::dense(uniform_matrix(&mut rng, n, m).mapv(|v| v + 0.01)).unwrap();
        let (a, b) = (histogram(&mut rng, n), histogram(&mut rng, m));
        let opts = SinkhornOptions {
            tol: 1e-12,
            check_every: 1,
            record_trace: true,
            ..Default::default()
        };
        let out = sinkhorn(&k, &a, &b, None, &opts).unwrap();
        for w in out.trace.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
    }
    let c = CostOperator::dense(uniform_matrix(&mut rng, 12, 9)).unwrap();
    let (a, b) = (histogram(&mut rng, 12), histogram(&mut rng, 9));
    let big = entropic_ot(&c, &a, &b, 1e9, &SinkhornOptions::with_tol(1e-13), false).unwrap();
    let gap = l1(&big.coupling, &outer(&a, &b));
    outcome(
        worst_increase <= 1e-12 && gap <= 1e-6,
        format!("largest increase of the stopping quantity {worst_increase:.2e}; ‖P − abᵀ‖₁ at ε = 1e9: {gap:.2e}"),
    )
}

#[test]
fn acceptance_criteria() {
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        run(1, "rank-1 exactness", secs(1), rank_one_exactness),
        run(2, "projection oracles", secs(30), projection_oracles),
        run(3, "descent bound", secs(60), descent_bound),
        run(4, "rank path", secs(120), rank_path),
        run(5, "squared-Euclidean factorization", None, sqeuclid_factorization_exact),
        run(6, "LR-Distance bound", secs(120), lr_distance_bound),
        run(7, "GW oracle equivalence", None, gw_oracle_equivalence),
        run(8, "GW Lipschitz bound", None, gw_lipschitz),
        run(9, "GW solver sanity", None, gw_solver_sanity),
        run(10, "gradient checks", None, gradient_checks),
        run(11, "Sinkhorn properties", None, sinkhorn_properties),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
