//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line (directly to
//! stderr so it shows without `--nocapture`) and then asserts. Tests hold a
//! shared lock so runtime measurements do not compete for cores.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use lopgpn::datasets::OodScenario;
use lopgpn::diffmath::gradcheck::{check_gradients, check_primitives};
use lopgpn::eval::{self, auc_roc, parse_arc_csv, parse_ood_csv};
use lopgpn::experiment::{self, ExperimentConfig, Reports};
use lopgpn::models::{forward_gpn, forward_lop, six_node_fixture, test_accuracy, Hyperparameters, Model, ModelKind, NodePosterior, Problem, Split};
use lopgpn::propagation::{self, Normalization, PprConfig};
use lopgpn::second_order::monte_carlo::{self, Estimate};
use lopgpn::second_order::{Dirichlet, DirichletMixture, SecondOrder};
use lopgpn::sparse::{DenseMatrix, SparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN_2: f64 = std::f64::consts::LN_2;
const MC_SAMPLES: usize = 1_000_000;
const SIGMAS: f64 = 3.0;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, passed: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "[{}] criterion {id} ({:.2}s): {detail}\n",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn finish(id: u32, start: Instant, limit: Duration, failures: Vec<String>, summary: String) {
    let elapsed = start.elapsed();
    let mut failures = failures;
    if elapsed > limit {
        failures.push(format!("runtime {:.1}s exceeds {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()));
    }
    let detail = if failures.is_empty() {
        summary
    } else {
        format!("{summary}; failed: {}", failures.join("; "))
    };
    report(id, failures.is_empty(), elapsed, &detail);
    assert!(failures.is_empty(), "criterion {id}: {detail}");
}

fn harmonic(n: u32) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

fn dir(a: &[f64]) -> Dirichlet {
    Dirichlet::new(a.to_vec()).unwrap()
}

fn z_score(value: f64, e: &Estimate) -> f64 {
    (e.mean - value).abs() / e.se
}

#[test]
fn criterion_1_three_beta_second_order_distributions() {
    let _g = serial();
    let start = Instant::now();
    let q1 = dir(&[5.0, 5.0]);
    let q2 = dir(&[1.0, 1.0]);
    let q3 = DirichletMixture::new(vec![0.5, 0.5], vec![dir(&[100.0, 10.0]), dir(&[10.0, 100.0])]).unwrap();
    let mut fails = Vec::new();

    if (q2.tu() - LN_2).abs() > 1e-9 {
        fails.push(format!("TU(Q2) = {}", q2.tu()));
    }
    if (q3.tu() - LN_2).abs() > 1e-9 {
        fails.push(format!("TU(Q3) = {}", q3.tu()));
    }
    let au1_exact = harmonic(10) - harmonic(5);
    if (q1.au() - au1_exact).abs() > 1e-12 {
        fails.push(format!("AU(Q1) = {} vs H10 - H5 = {au1_exact}", q1.au()));
    }
    if (q2.au() - 0.5).abs() > 1e-12 {
        fails.push(format!("AU(Q2) = {}", q2.au()));
    }
    let mc1 = monte_carlo::expected_entropy(&q1, 1, MC_SAMPLES);
    let mc2 = monte_carlo::expected_entropy(&q2, 2, MC_SAMPLES);
    let (z1, z2) = (z_score(q1.au(), &mc1), z_score(q2.au(), &mc2));
    if z1 > SIGMAS {
        fails.push(format!("AU(Q1) is {z1:.2} SE from Monte Carlo"));
    }
    if z2 > SIGMAS {
        fails.push(format!("AU(Q2) is {z2:.2} SE from Monte Carlo"));
    }
    let summary = format!(
        "Q1 (TU {:.6}, AU {:.6}, EU {:.6}) Q2 (TU {:.6}, AU {:.6}, EU {:.6}) Q3 (TU {:.6}, AU {:.6}, EU {:.6}); MC z = {z1:.2}, {z2:.2}",
        q1.tu(),
        q1.au(),
        q1.eu(),
        q2.tu(),
        q2.au(),
        q2.eu(),
        q3.tu(),
        q3.au(),
        q3.eu()
    );
    finish(1, start, Duration::from_secs(10), fails, summary);
}

fn random_mixture(rng: &mut ChaCha8Rng) -> DirichletMixture {
    let k = rng.random_range(2..=5);
    let m = rng.random_range(1..=5);
    let comps: Vec<Dirichlet> = (0..m)
        .map(|_| Dirichlet::new((0..k).map(|_| 0.5 + rng.random::<f64>() * 30.0).collect()).unwrap())
        .collect();
    let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    DirichletMixture::new(raw.iter().map(|w| w / s).collect(), comps).unwrap()
}

#[test]
fn criterion_2_mixture_au_is_weight_linear() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fails = Vec::new();
    let (mut worst_lin, mut worst_z) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let m = random_mixture(&mut rng);
        let combo: f64 = m.weights().iter().zip(m.components()).map(|(w, c)| w * c.au()).sum();
        let lin = (m.au() - combo).abs();
        worst_lin = worst_lin.max(lin);
        if lin > 1e-12 {
            fails.push(format!("trial {trial}: |au - Σ w au_j| = {lin:.2e}"));
        }
        let z = z_score(m.au(), &monte_carlo::expected_entropy(&m, 1000 + trial, MC_SAMPLES));
        worst_z = worst_z.max(z);
        if z > SIGMAS {
            fails.push(format!("trial {trial}: Monte Carlo z = {z:.2}"));
        }
    }
    let summary = format!("100 mixtures, max linearity error {worst_lin:.2e}, max MC |z| {worst_z:.2}");
    finish(2, start, Duration::from_secs(60), fails, summary);
}

#[test]
fn criterion_3_differential_entropy_sandwich() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fails = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut mixtures = vec![DirichletMixture::new(vec![0.5, 0.5], vec![dir(&[100.0, 10.0]), dir(&[10.0, 100.0])]).unwrap()];
    mixtures.extend((1..50).map(|i| {
        if i % 2 == 0 {
            // Beta mixtures
            let m = rng.random_range(1..=5);
            let comps: Vec<Dirichlet> = (0..m)
                .map(|_| dir(&[0.5 + rng.random::<f64>() * 50.0, 0.5 + rng.random::<f64>() * 50.0]))
                .collect();
            let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            DirichletMixture::new(raw.iter().map(|w| w / s).collect(), comps).unwrap()
        } else {
            random_mixture(&mut rng)
        }
    }));
    for (i, m) in mixtures.iter().enumerate() {
        let h = monte_carlo::mixture_entropy(m, 3000 + i as u64, MC_SAMPLES);
        let (lo, hi) = m.eu_so_bounds();
        let slack = SIGMAS * h.se;
        worst = worst.max(((lo - h.mean).max(h.mean - hi)) / h.se);
        if h.mean < lo - slack || h.mean > hi + slack {
            fails.push(format!("mixture {i}: {:.5} outside [{lo:.5}, {hi:.5}] ± {slack:.1e}", h.mean));
        }
    }
    let summary = format!("50 mixtures, largest excess beyond a bound {worst:.2} SE (negative = inside)");
    finish(3, start, Duration::from_secs(120), fails, summary);
}

#[test]
fn criterion_4_conflict_fixture() {
    let _g = serial();
    let start = Instant::now();
    let alphas = DenseMatrix::from_rows(&[vec![100.0, 1.0], vec![1.0, 100.0]]).unwrap();
    let pair = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let cfg = PprConfig {
        teleport: 0.5,
        iterations: 1,
        ..Default::default()
    };
    // AU(Dir(100, 1)) through ψ(n + 1) = H_n − γ
    let lop_au = 100.0 / 101.0 * (harmonic(101) - harmonic(100)) + 1.0 / 101.0 * (harmonic(101) - harmonic(1));
    let mut fails = Vec::new();
    let mut gpn_au = Vec::new();
    for (i, d) in forward_gpn(&alphas, &pair, &cfg).unwrap().into_iter().enumerate() {
        let r = NodePosterior::Dirichlet(d).report();
        let au = r.au.unwrap();
        gpn_au.push(au);
        if (au - LN_2).abs() > 1e-3 {
            fails.push(format!("GPN node {i}: AU {au:.6} is {:.2e} from ln 2", (au - LN_2).abs()));
        }
        if r.eu_pc.unwrap() != -101.0 {
            fails.push(format!("GPN node {i}: EU_PC {}", r.eu_pc.unwrap()));
        }
    }
    let mut lop = Vec::new();
    for (i, m) in forward_lop(&alphas, &pair, &cfg).unwrap().into_iter().enumerate() {
        let r = NodePosterior::Mixture(m).report();
        let (au, eu) = (r.au.unwrap(), r.tu - r.au.unwrap());
        lop.push((au, eu));
        if (au - lop_au).abs() > 1e-4 {
            fails.push(format!("LOP node {i}: AU {au:.6} vs closed form {lop_au:.6}"));
        }
        if (au - 0.0514).abs() > 5e-5 {
            fails.push(format!("LOP node {i}: AU {au:.6} does not round to 0.0514"));
        }
        if (eu - 0.642).abs() > 5e-4 {
            fails.push(format!("LOP node {i}: TU - AU {eu:.6} does not round to 0.642"));
        }
    }
    let summary = format!(
        "GPN AU {:?} (ln 2 = {LN_2:.6}), LOP (AU, TU-AU) {:?}, closed-form LOP AU {lop_au:.6}",
        gpn_au.iter().map(|a| format!("{a:.6}")).collect::<Vec<_>>(),
        lop.iter().map(|(a, e)| format!("({a:.6}, {e:.6})")).collect::<Vec<_>>()
    );
    finish(4, start, Duration::from_secs(1), fails, summary);
}

#[test]
fn criterion_5_gradient_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let mut fails = Vec::new();
    let prims = check_primitives(100, 5);
    let worst_prim = prims.iter().map(|p| p.1).fold(0.0, f64::max);
    for (name, err) in &prims {
        if !(*err < 1e-4) {
            fails.push(format!("{name}: {err:.2e}"));
        }
    }
    let d = six_node_fixture();
    let hp = Hyperparameters {
        hidden_dim: 8,
        latent_dim: 3,
        n_flows: 2,
        entropy_weight: 0.1,
        iterations: 4,
        teleport: 0.2,
        ..Default::default()
    };
    let mut loss_errs = Vec::new();
    for seed in 0..3 {
        let m = Model::init(ModelKind::LopGpn, hp, &d, seed).unwrap();
        let problem = Problem::new(ModelKind::LopGpn, &hp, &d).unwrap();
        for split in [Split::Train, Split::Val] {
            let err = check_gradients(
                |tape, vars| m.build_loss(tape, vars, &problem, split).unwrap(),
                &m.parameter_tensors(),
                1e-5,
            );
            loss_errs.push(err);
            if !(err < 1e-4) {
                fails.push(format!("LOP-GPN loss seed {seed} {split:?}: {err:.2e}"));
            }
        }
    }
    let summary = format!(
        "{} primitives, worst {worst_prim:.2e}; full LOP-GPN loss worst {:.2e}",
        prims.len(),
        loss_errs.iter().copied().fold(0.0, f64::max)
    );
    finish(5, start, Duration::from_secs(30), fails, summary);
}

fn dense_power(a: &[Vec<f64>], l: usize) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..l {
        out = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| out[i][k] * a[k][j]).sum()).collect())
            .collect();
    }
    out
}

#[test]
fn criterion_6_sparse_vs_dense() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fails = Vec::new();
    let (mut worst, mut worst_sum, mut nnz_ok) = (0.0f64, 0.0f64, true);
    for trial in 0..100 {
        let n = rng.random_range(1..=12);
        let p = rng.random_range(0.05..0.8);
        let mut raw = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    raw[i][j] = 1.0;
                    raw[j][i] = 1.0;
                }
            }
        }
        let adj = SparseMatrix::from_dense(&DenseMatrix::from_rows(&raw).unwrap());
        let eps = rng.random_range(0.01..1.0);
        let l = rng.random_range(0..=10);
        let cfg = PprConfig {
            teleport: eps,
            iterations: l,
            ..Default::default()
        };
        // dense reference: row-normalize with self-loops on isolated nodes, blend, power
        let a_eps: Vec<Vec<f64>> = raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let deg: f64 = r.iter().sum();
                (0..n)
                    .map(|j| {
                        let a = if deg == 0.0 { f64::from(u8::from(i == j)) } else { r[j] / deg };
                        (1.0 - eps) * a + if i == j { eps } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let reference = dense_power(&a_eps, l);
        let norm = propagation::normalize(&adj, Normalization::RandomWalk).unwrap();
        let pi = propagation::ppr_matrix(&norm, &cfg).unwrap().to_dense();
        let diff = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (pi.get(i, j) - reference[i][j]).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        if diff > 1e-12 {
            fails.push(format!("trial {trial}: max |diff| {diff:.2e}"));
        }
        let delta = rng.random_range(0.005..0.5);
        let sparse = propagation::ppr_matrix(
            &norm,
            &PprConfig {
                sparsify_delta: Some(delta),
                ..cfg
            },
        )
        .unwrap();
        for (i, s) in sparse.row_sums().into_iter().enumerate() {
            worst_sum = worst_sum.max((s - 1.0).abs());
            if (s - 1.0).abs() > 1e-9 {
                fails.push(format!("trial {trial} row {i}: sum {s}"));
            }
            if sparse.row_nnz(i) as f64 > 1.0 + 1.0 / delta {
                nnz_ok = false;
                fails.push(format!("trial {trial} row {i}: nnz {} > 1 + 1/{delta}", sparse.row_nnz(i)));
            }
        }
    }
    let summary = format!(
        "100 graphs, max |Π - dense| {worst:.2e}, max |row sum - 1| {worst_sum:.2e}, nnz bound {}",
        if nnz_ok { "held" } else { "violated" }
    );
    finish(6, start, Duration::from_secs(30), fails, summary);
}

fn end_to_end_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.set("dataset", "sbm-small").unwrap();
    cfg.set("seeds", "0,1,2").unwrap();
    cfg
}

fn end_to_end() -> &'static (Reports, Duration) {
    static RUN: OnceLock<(Reports, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let r = experiment::run_all(&end_to_end_config()).expect("end-to-end run");
        (r, start.elapsed())
    })
}

/// AUC obtained by scoring each test node with its exact propagation mass on
/// perturbed nodes: what a perfect feature-level detector yields after
/// propagation.
fn propagation_ceiling(cfg: &ExperimentConfig, seed: u64) -> f64 {
    let scenario: OodScenario = "gaussian_features".parse().unwrap();
    let d = cfg.ood_dataset(&scenario, seed).unwrap();
    let norm = propagation::normalize(&d.adjacency, Normalization::RandomWalk).unwrap();
    let pi = propagation::ppr_matrix(&norm, &cfg.hp.ppr(ModelKind::LopGpn, d.n_nodes())).unwrap();
    let mass = |i: usize| {
        let (cols, vals) = pi.row(i);
        cols.iter().zip(vals).filter(|(&j, _)| d.is_ood(j)).map(|(_, v)| v).sum::<f64>()
    };
    let test = d.test_nodes();
    let ood: Vec<f64> = test.iter().filter(|&&i| d.is_ood(i)).map(|&i| mass(i)).collect();
    let id: Vec<f64> = test.iter().filter(|&&i| !d.is_ood(i)).map(|&i| mass(i)).collect();
    auc_roc(&ood, &id).unwrap()
}

#[test]
fn criterion_7_end_to_end_desk_scale() {
    let _g = serial();
    let cfg = end_to_end_config();
    let (reports, elapsed) = end_to_end();
    let start = Instant::now() - *elapsed;
    let mut fails = Vec::new();

    let mut acc_summary = Vec::new();
    for kind in ModelKind::ALL {
        let mut accs = Vec::new();
        for seed in [0, 1, 2] {
            let run = reports
                .runs
                .iter()
                .find(|r| r.key.0.is_none() && r.key.1 == kind && r.key.2 == seed)
                .expect("clean run");
            let acc = test_accuracy(&run.model, &cfg.clean_dataset(seed).unwrap()).unwrap();
            if acc < 0.85 {
                fails.push(format!("{kind} seed {seed}: test accuracy {acc:.4}"));
            }
            accs.push(acc);
        }
        acc_summary.push(format!("{kind} {}", accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/")));
    }

    let arc = parse_arc_csv(&reports.arc_csv).unwrap();
    let mut arc_summary = Vec::new();
    for kind in ModelKind::ALL {
        let at = |p: f64| {
            arc.iter()
                .find(|r| r.model == kind.name() && r.measure == "tu" && (r.rejection_rate - p).abs() < 1e-12)
                .map(|r| r.acc_mean)
                .expect("tu arc row")
        };
        let (a0, a5) = (at(0.0), at(0.5));
        arc_summary.push(format!("{kind} {a0:.3}->{a5:.3}"));
        if a5 < a0 - 0.01 {
            fails.push(format!("{kind}: TU ARC degrades {a0:.4} -> {a5:.4}"));
        }
    }

    let ood = parse_ood_csv(&reports.ood_csv).unwrap();
    let mut auc_summary = Vec::new();
    for kind in [ModelKind::GpnRw, ModelKind::GpnSym, ModelKind::LopGpn] {
        let row = ood
            .iter()
            .find(|r| r.model == kind.name() && r.scenario == "gaussian_features" && r.measure == "eu_so")
            .expect("eu_so ood row");
        auc_summary.push(format!("{kind} {:.3}", row.auc_mean));
        if row.auc_mean < 0.8 {
            fails.push(format!("{kind}: gaussian_features EU_SO AUC {:.4} < 0.8", row.auc_mean));
        }
    }
    let ceiling: Vec<String> = [0, 1, 2].iter().map(|&s| format!("{:.3}", propagation_ceiling(&cfg, s))).collect();

    let summary = format!(
        "test acc [{}]; TU ARC p=0 -> 0.5 [{}]; gaussian_features EU_SO AUC [{}] (propagation-mass ceiling per seed {})",
        acc_summary.join(", "),
        arc_summary.join(", "),
        auc_summary.join(", "),
        ceiling.join("/")
    );
    finish(7, start, Duration::from_secs(15 * 60), fails, summary);
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let (first, _) = end_to_end();
    let start = Instant::now();
    let second = experiment::run_all(&end_to_end_config()).expect("repeat run");
    let mut fails = Vec::new();
    if first.arc_csv != second.arc_csv {
        fails.push("arc.csv differs".into());
    }
    if first.ood_csv != second.ood_csv {
        fails.push("ood.csv differs".into());
    }
    for (a, b) in first.runs.iter().zip(&second.runs) {
        if a.log.to_csv() != b.log.to_csv() {
            fails.push(format!("training log differs for {:?}", (experiment::group_label(a.key.0.as_ref()), a.key.1, a.key.2)));
        }
        if lopgpn::models::checkpoint::to_bytes(&a.model) != lopgpn::models::checkpoint::to_bytes(&b.model) {
            fails.push(format!("checkpoint differs for {:?}", (experiment::group_label(a.key.0.as_ref()), a.key.1, a.key.2)));
        }
    }
    let rows = eval::parse_arc_csv(&second.arc_csv).unwrap();
    if eval::arc_csv(&rows) != second.arc_csv {
        fails.push("arc.csv does not round-trip".into());
    }
    let summary = format!(
        "repeat run: arc.csv {} bytes, ood.csv {} bytes, {} checkpoints and logs compared",
        second.arc_csv.len(),
        second.ood_csv.len(),
        second.runs.len()
    );
    finish(8, start, Duration::from_secs(15 * 60), fails, summary);
}
