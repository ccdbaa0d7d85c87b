//! Built-in numerical self-checks: closed-form measures against Monte-Carlo
//! oracles, analytic gradients against finite differences, and sparse
//! propagation against a dense reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::gradcheck::{check_gradients, check_primitives};
use crate::models::{six_node_fixture, Hyperparameters, Model, ModelKind, Problem, Split};
use crate::propagation::{self, Normalization, PprConfig};
use crate::second_order::monte_carlo::{self, Estimate};
use crate::second_order::{shannon_entropy, Dirichlet, DirichletMixture, SecondOrder};
use crate::sparse::{dense_oracle, SparseMatrix};

/// Standard errors a Monte-Carlo estimate may deviate by.
pub const MC_SIGMAS: f64 = 4.0;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const DENSE_TOLERANCE: f64 = 1e-12;
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

struct Budget {
    mc_samples: usize,
    distributions: usize,
    grad_points: usize,
    graphs: usize,
}

impl Budget {
    fn new(quick: bool) -> Self {
        if quick {
            Self {
                mc_samples: 20_000,
                distributions: 4,
                grad_points: 5,
                graphs: 10,
            }
        } else {
            Self {
                mc_samples: 200_000,
                distributions: 12,
                grad_points: 40,
                graphs: 100,
            }
        }
    }
}

fn random_dirichlet(rng: &mut ChaCha8Rng, k: usize) -> Dirichlet {
    Dirichlet::new((0..k).map(|_| 0.3 + rng.random::<f64>() * 20.0).collect()).expect("positive alphas")
}

fn random_mixture(rng: &mut ChaCha8Rng) -> DirichletMixture {
    let k = rng.random_range(2..=5);
    let m = rng.random_range(1..=5);
    let comps = (0..m).map(|_| random_dirichlet(rng, k)).collect();
    let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    DirichletMixture::new(raw.iter().map(|w| w / s).collect(), comps).expect("valid mixture")
}

/// Closed-form value against an estimate; returns `(passed, worst |z|)`.
fn agree(pairs: &[(f64, Estimate)]) -> (bool, f64) {
    let worst = pairs
        .iter()
        .map(|(v, e)| if e.se > 0.0 { (e.mean - v).abs() / e.se } else if e.mean == *v { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    (worst <= MC_SIGMAS, worst)
}

fn measure_checks(b: &Budget, out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = b.mc_samples;
    let dirs: Vec<Dirichlet> = (0..b.distributions)
        .map(|i| random_dirichlet(&mut rng, 2 + i % 4))
        .collect();

    let mut mean_pairs = Vec::new();
    let mut au_pairs = Vec::new();
    let mut so_pairs = Vec::new();
    let mut uce_pairs = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let seed = 100 + i as u64;
        for (m, e) in d.mean().into_iter().zip(monte_carlo::sample_mean(d, seed, n)) {
            mean_pairs.push((m, e));
        }
        au_pairs.push((d.au(), monte_carlo::expected_entropy(d, seed, n)));
        let draws = d.sample(seed, n);
        so_pairs.push((d.eu_so(), Estimate::from_samples(draws.iter().map(|t| -d.log_pdf(t)))));
        let y = i % d.n_classes();
        uce_pairs.push((d.uce(y).expect("label in range"), monte_carlo::expected_neg_log(d, y, seed, n)));
    }
    let tu_exact = dirs.iter().all(|d| (d.tu() - shannon_entropy(&d.mean())).abs() < 1e-12);
    for (name, pairs) in [
        ("dirichlet.mean", &mean_pairs),
        ("dirichlet.au", &au_pairs),
        ("dirichlet.eu_so", &so_pairs),
        ("dirichlet.uce", &uce_pairs),
    ] {
        let (ok, z) = agree(pairs);
        out.push(CheckResult::new(name, ok, format!("worst |z| = {z:.2} over {} values, {n} samples", pairs.len())));
    }
    let eu_ok = dirs.iter().all(|d| (d.eu() - (d.tu() - d.au())).abs() < 1e-12 && d.eu() >= -1e-12);
    out.push(CheckResult::new(
        "dirichlet.tu_eu_decomposition",
        tu_exact && eu_ok,
        "TU = H(mean), EU = TU - AU >= 0",
    ));

    let mixtures: Vec<DirichletMixture> = (0..b.distributions).map(|_| random_mixture(&mut rng)).collect();
    let mut linear = 0.0f64;
    let mut mix_au = Vec::new();
    let mut sandwich_ok = true;
    let mut sandwich_worst = f64::NEG_INFINITY;
    for (i, m) in mixtures.iter().enumerate() {
        let combo: f64 = m.weights().iter().zip(m.components()).map(|(w, c)| w * c.au()).sum();
        linear = linear.max((m.au() - combo).abs());
        let seed = 500 + i as u64;
        mix_au.push((m.au(), monte_carlo::expected_entropy(m, seed, n)));
        let h = monte_carlo::mixture_entropy(m, seed, n);
        let (lo, hi) = m.eu_so_bounds();
        let slack = MC_SIGMAS * h.se;
        sandwich_ok &= h.mean >= lo - slack && h.mean <= hi + slack;
        sandwich_worst = sandwich_worst.max((lo - h.mean).max(h.mean - hi) / h.se.max(f64::MIN_POSITIVE));
    }
    out.push(CheckResult::new(
        "mixture.au_weight_linear",
        linear <= 1e-12,
        format!("max deviation {linear:.3e}"),
    ));
    let (ok, z) = agree(&mix_au);
    out.push(CheckResult::new("mixture.au", ok, format!("worst |z| = {z:.2}")));
    out.push(CheckResult::new(
        "mixture.entropy_bounds",
        sandwich_ok,
        format!("worst excess over bounds = {sandwich_worst:.2} SE"),
    ));
}

fn gradient_checks(b: &Budget, out: &mut Vec<CheckResult>) {
    for (name, err) in check_primitives(b.grad_points, 2024) {
        out.push(CheckResult::new(
            format!("grad.{name}"),
            err < GRAD_TOLERANCE,
            format!("max relative error {err:.2e}"),
        ));
    }
    let d = six_node_fixture();
    let hp = Hyperparameters {
        hidden_dim: 5,
        latent_dim: 3,
        n_flows: 2,
        entropy_weight: 0.1,
        iterations: 3,
        teleport: 0.2,
        ..Default::default()
    };
    for kind in ModelKind::ALL {
        let (m, problem) = match (Model::init(kind, hp, &d, 3), Problem::new(kind, &hp, &d)) {
            (Ok(m), Ok(p)) => (m, p),
            (Err(e), _) | (_, Err(e)) => {
                out.push(CheckResult::new(format!("grad.loss.{kind}"), false, e.to_string()));
                continue;
            }
        };
        let err = check_gradients(
            |tape, vars| {
                m.build_loss(tape, vars, &problem, Split::Train)
                    .expect("fixture loss is well defined")
            },
            &m.parameter_tensors(),
            1e-5,
        );
        out.push(CheckResult::new(
            format!("grad.loss.{kind}"),
            err < GRAD_TOLERANCE,
            format!("six-node fixture, max relative error {err:.2e}"),
        ));
    }
}

fn random_graph(rng: &mut ChaCha8Rng) -> SparseMatrix {
    let n = rng.random_range(1..=12);
    let p = rng.random_range(0.1..0.7);
    let mut t = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                t.push((i, j, 1.0));
                t.push((j, i, 1.0));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, t).expect("valid triplets")
}

fn dense_a_eps(norm: &SparseMatrix, eps: f64) -> Vec<Vec<f64>> {
    let rows = norm.to_dense().to_rows();
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, v)| (1.0 - eps) * v + if i == j { eps } else { 0.0 })
                .collect()
        })
        .collect()
}

fn propagation_checks(b: &Budget, out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut dense_worst = 0.0f64;
    let mut rw_worst = 0.0f64;
    let mut sum_worst = 0.0f64;
    let mut nnz_ok = true;
    let mut failures = Vec::new();
    for trial in 0..b.graphs {
        let a = random_graph(&mut rng);
        let eps = rng.random_range(0.05..0.95);
        let l = rng.random_range(0..=8);
        let normalization = if trial % 2 == 0 {
            Normalization::RandomWalk
        } else {
            Normalization::Symmetric
        };
        let cfg = PprConfig {
            teleport: eps,
            iterations: l,
            sparsify_delta: None,
            normalization,
        };
        let mut run = || -> crate::Result<()> {
            let norm = propagation::normalize(&a, normalization)?;
            let pi = propagation::ppr_matrix(&norm, &cfg)?.to_dense().to_rows();
            let reference = dense_oracle::power(&dense_a_eps(&norm, eps), l);
            dense_worst = dense_worst.max(dense_oracle::max_abs_diff(&pi, &reference));
            if normalization == Normalization::RandomWalk {
                let raw = a.to_dense().to_rows();
                let loops: Vec<Vec<f64>> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let mut r = r.clone();
                        if r.iter().all(|&v| v == 0.0) {
                            r[i] = 1.0;
                        }
                        r
                    })
                    .collect();
                let oracle_norm = dense_oracle::normalize_rw(&loops);
                rw_worst = rw_worst.max(dense_oracle::max_abs_diff(&norm.to_dense().to_rows(), &oracle_norm));
            }
            let delta = rng.random_range(0.01..0.3);
            let sparse_cfg = PprConfig {
                sparsify_delta: Some(delta),
                normalization: Normalization::RandomWalk,
                ..cfg
            };
            let rw = propagation::normalize(&a, Normalization::RandomWalk)?;
            let pi = propagation::ppr_matrix(&rw, &sparse_cfg)?;
            for (i, s) in pi.row_sums().into_iter().enumerate() {
                sum_worst = sum_worst.max((s - 1.0).abs());
                nnz_ok &= pi.row_nnz(i) as f64 <= 1.0 + 1.0 / delta;
            }
            Ok(())
        };
        if let Err(e) = run() {
            failures.push(format!("trial {trial}: {e}"));
        }
    }
    let err = |ok: bool| if failures.is_empty() { ok } else { false };
    let suffix = if failures.is_empty() { String::new() } else { format!("; errors: {}", failures.join("; ")) };
    out.push(CheckResult::new(
        "ppr.sparse_vs_dense",
        err(dense_worst <= DENSE_TOLERANCE),
        format!("{} graphs, max |diff| {dense_worst:.2e}{suffix}", b.graphs),
    ));
    out.push(CheckResult::new(
        "ppr.rw_normalization",
        err(rw_worst <= DENSE_TOLERANCE),
        format!("max |diff| {rw_worst:.2e}"),
    ));
    out.push(CheckResult::new(
        "ppr.sparsified_rows_stochastic",
        err(sum_worst <= ROW_SUM_TOLERANCE),
        format!("max |row sum - 1| {sum_worst:.2e}"),
    ));
    out.push(CheckResult::new("ppr.sparsified_row_nnz", err(nnz_ok), "nnz <= 1 + 1/delta"));
}

/// Runs every check. `quick` shrinks sample counts and trial numbers; both
/// modes are deterministic.
pub fn run(quick: bool) -> Vec<CheckResult> {
    let b = Budget::new(quick);
    let mut out = Vec::new();
    measure_checks(&b, &mut out);
    gradient_checks(&b, &mut out);
    propagation_checks(&b, &mut out);
    out
}
