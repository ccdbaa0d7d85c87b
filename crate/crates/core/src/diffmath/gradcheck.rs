//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{SparseOperator, Tape, Tensor, Var};
use crate::sparse::SparseMatrix;

/// Absolute floor under the relative-error denominator, so entries whose
/// true gradient is zero compare on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_difference_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        grad.data_mut()[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// `max_k |a_k − b_k| / max(|a_k|, |b_k|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

/// Relative error between the tape gradient and a central difference for a
/// scalar function of one scalar.
pub fn check_unary_scalar_fn(build: impl Fn(&Tape, Var) -> Var, x: f64, h: f64) -> f64 {
    let tape = Tape::new();
    let v = tape.param(Tensor::scalar(x));
    let out = build(&tape, v);
    let root = tape.sum(out);
    tape.backward(root).expect("scalar root");
    let analytic = tape.grad(v).map(|g| g.item()).unwrap_or(0.0);
    let numeric = finite_difference_grad(
        |p| {
            let t = Tape::new();
            let v = t.param(p.clone());
            let o = build(&t, v);
            t.scalar_value(t.sum(o))
        },
        &Tensor::scalar(x),
        h,
    );
    max_relative_error(&[analytic], numeric.data())
}

/// Checks every input of `build` against central differences; returns the
/// worst relative error.
pub fn check_gradients(build: impl Fn(&Tape, &[Var]) -> Var, inputs: &[Tensor], h: f64) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&tape, &vars);
    tape.backward(out).expect("scalar root");
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        let numeric = finite_difference_grad(
            |probe| {
                let t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(m, x)| t.param(if m == k { probe.clone() } else { x.clone() }))
                    .collect();
                let o = build(&t, &vs);
                t.scalar_value(o)
            },
            input,
            h,
        );
        worst = worst.max(max_relative_error(analytic.data(), numeric.data()));
    }
    worst
}

type Builder = fn(&Tape, &[Var]) -> Var;

/// Each primitive wrapped in a scalar objective, with input shapes and
/// sampling ranges `(rows, cols, lo, hi)` that stay inside its domain.
fn primitive_cases() -> Vec<(&'static str, Builder, Vec<(usize, usize, f64, f64)>)> {
    vec![
        ("add", |t, v| t.sum(t.add(v[0], v[1]).unwrap()), vec![(2, 3, -2.0, 2.0), (1, 3, -2.0, 2.0)]),
        ("sub", |t, v| t.sum(t.mul(t.sub(v[0], v[1]).unwrap(), v[0]).unwrap()), vec![(2, 3, -2.0, 2.0), (2, 1, -2.0, 2.0)]),
        ("mul", |t, v| t.sum(t.mul(v[0], v[1]).unwrap()), vec![(2, 3, -2.0, 2.0), (2, 3, -2.0, 2.0)]),
        ("div", |t, v| t.sum(t.div(v[0], v[1]).unwrap()), vec![(2, 3, -2.0, 2.0), (1, 1, 0.5, 2.0)]),
        ("matmul", |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            t.sum(t.mul(m, m).unwrap())
        }, vec![(2, 3, -1.0, 1.0), (3, 2, -1.0, 1.0)]),
        ("exp", |t, v| t.sum(t.exp(v[0])), vec![(2, 2, -2.0, 2.0)]),
        ("log", |t, v| t.sum(t.log(v[0]).unwrap()), vec![(2, 2, 0.2, 3.0)]),
        ("tanh", |t, v| t.sum(t.mul(t.tanh(v[0]), v[0]).unwrap()), vec![(2, 2, -2.0, 2.0)]),
        ("relu", |t, v| t.sum(t.mul(t.relu(v[0]), v[0]).unwrap()), vec![(2, 2, -2.0, 2.0)]),
        ("softplus", |t, v| t.sum(t.softplus(v[0])), vec![(2, 2, -3.0, 3.0)]),
        ("sqrt", |t, v| t.sum(t.sqrt(v[0]).unwrap()), vec![(2, 2, 0.2, 3.0)]),
        ("sum", |t, v| {
            let s = t.sum(v[0]);
            t.mul(s, s).unwrap()
        }, vec![(2, 3, -1.0, 1.0)]),
        ("mean", |t, v| {
            let s = t.mean(v[0]);
            t.mul(s, s).unwrap()
        }, vec![(2, 3, -1.0, 1.0)]),
        ("sum_rows", |t, v| {
            let s = t.sum_rows(v[0]);
            t.sum(t.mul(s, s).unwrap())
        }, vec![(3, 2, -1.0, 1.0)]),
        ("sum_cols", |t, v| {
            let s = t.sum_cols(v[0]);
            t.sum(t.mul(s, s).unwrap())
        }, vec![(3, 2, -1.0, 1.0)]),
        ("lgamma", |t, v| t.sum(t.lgamma(v[0]).unwrap()), vec![(2, 2, 0.3, 6.0)]),
        ("digamma", |t, v| t.sum(t.digamma(v[0]).unwrap()), vec![(2, 2, 0.3, 6.0)]),
        ("index_select", |t, v| {
            let s = t.index_select(v[0], &[2, 0, 2]).unwrap();
            t.sum(t.mul(s, s).unwrap())
        }, vec![(3, 2, -1.0, 1.0)]),
        ("concat_cols", |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]).unwrap();
            let w = t.constant(Tensor::row(vec![1.0, -2.0, 3.0]));
            t.sum(t.mul(t.mul(c, c).unwrap(), w).unwrap())
        }, vec![(2, 1, -1.0, 1.0), (2, 2, -1.0, 1.0)]),
        ("spmm", |t, v| {
            let m = SparseMatrix::from_triplets(2, 3, [(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0)]).unwrap();
            let s = t.spmm(&SparseOperator::new(m), v[0]).unwrap();
            t.sum(t.mul(s, s).unwrap())
        }, vec![(3, 2, -1.0, 1.0)]),
        ("softmax_rows", |t, v| {
            let s = t.softmax_rows(v[0]).unwrap();
            let w = t.constant(Tensor::row(vec![1.0, -2.0, 0.5]));
            t.sum(t.mul(s, w).unwrap())
        }, vec![(2, 3, -2.0, 2.0)]),
        ("clamp", |t, v| t.sum(t.mul(t.clamp(v[0], -1.0, 1.0), v[0]).unwrap()), vec![(2, 2, -3.0, 3.0)]),
        ("neg_scale_add_scalar", |t, v| {
            let y = t.add_scalar(t.scale(t.neg(v[0]), 3.0), 2.0);
            t.sum(t.mul(y, y).unwrap())
        }, vec![(2, 2, -1.0, 1.0)]),
    ]
}

/// Worst relative error per primitive over `points` random inputs each,
/// using central differences with h = 1e-5.
pub fn check_primitives(points: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitive_cases()
        .into_iter()
        .map(|(name, build, shapes)| {
            let mut worst: f64 = 0.0;
            for _ in 0..points {
                let inputs: Vec<Tensor> = shapes
                    .iter()
                    .map(|&(r, c, lo, hi)| {
                        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
                    })
                    .collect();
                worst = worst.max(check_gradients(build, &inputs, 1e-5));
            }
            (name, worst)
        })
        .collect()
}
