//! Differentiable training objectives built on the tape.

use std::rc::Rc;

use crate::diffmath::{SparseOperator, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Row-wise Dirichlet differential entropy of an `(n, K)` pseudo-count
/// matrix, as an `(n, 1)` column.
pub fn dirichlet_entropy(tape: &Tape, alpha: Var) -> Result<Var> {
    let k = tape.shape(alpha).1 as f64;
    let a0 = tape.sum_rows(alpha);
    let ln_b = tape.sub(tape.sum_rows(tape.lgamma(alpha)?), tape.lgamma(a0)?)?;
    let t0 = tape.mul(tape.add_scalar(a0, -k), tape.digamma(a0)?)?;
    let t1 = tape.sum_rows(tape.mul(tape.add_scalar(alpha, -1.0), tape.digamma(alpha)?)?);
    tape.sub(tape.add(ln_b, t0)?, t1)
}

/// `(n, K)` matrix of `ψ(α₀) − ψ(α_k)`: the UCE for every possible label.
pub fn uce_table(tape: &Tape, alpha: Var) -> Result<Var> {
    let a0 = tape.sum_rows(alpha);
    tape.sub(tape.digamma(a0)?, tape.digamma(alpha)?)
}

/// One-hot rows for `labels` over `k` classes.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, n_classes: k });
        }
        t.data_mut()[i * k + y] = 1.0;
    }
    Ok(t)
}

fn finite(tape: &Tape, v: Var) -> Result<Var> {
    if tape.scalar_value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what: "loss", index: 0 })
    }
}

/// `Σ_i UCE(α^agg_i, y_i) − w · H(Dir(α^agg_i))` over `nodes`.
pub fn loss_gpn(tape: &Tape, alpha_agg: Var, labels: &[usize], nodes: &[usize], entropy_weight: f64) -> Result<Var> {
    let k = tape.shape(alpha_agg).1;
    let rows = tape.index_select(alpha_agg, nodes)?;
    let ys: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
    let hot = tape.constant(one_hot(&ys, k)?);
    let uce = tape.sum(tape.mul(uce_table(tape, rows)?, hot)?);
    let loss = if entropy_weight == 0.0 {
        uce
    } else {
        let h = tape.sum(dirichlet_entropy(tape, rows)?);
        tape.sub(uce, tape.scale(h, entropy_weight))?
    };
    finite(tape, loss)
}

/// Upper bound on the pooled loss:
/// `Σ_i Σ_j Π_ij (UCE(α^ft_j, y_i) − w · H(Dir(α^ft_j)))`,
/// with `pi_rows` holding row `i` of `Π` for each labelled node in turn.
pub fn loss_lop(
    tape: &Tape,
    alpha_ft: Var,
    pi_rows: &Rc<SparseOperator>,
    row_labels: &[usize],
    entropy_weight: f64,
) -> Result<Var> {
    let k = tape.shape(alpha_ft).1;
    let hot = tape.constant(one_hot(row_labels, k)?);
    let pooled_uce = tape.spmm(pi_rows, uce_table(tape, alpha_ft)?)?;
    let uce = tape.sum(tape.mul(pooled_uce, hot)?);
    let loss = if entropy_weight == 0.0 {
        uce
    } else {
        let h = tape.sum(tape.spmm(pi_rows, dirichlet_entropy(tape, alpha_ft)?)?);
        tape.sub(uce, tape.scale(h, entropy_weight))?
    };
    finite(tape, loss)
}

/// `−Σ_i ln p_{i, y_i}` for propagated class probabilities.
pub fn loss_cross_entropy(tape: &Tape, probs: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
    let k = tape.shape(probs).1;
    let rows = tape.index_select(probs, nodes)?;
    let ys: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
    let hot = tape.constant(one_hot(&ys, k)?);
    let picked = tape.sum_rows(tape.mul(rows, hot)?);
    let loss = tape.neg(tape.sum(tape.log(picked)?));
    finite(tape, loss)
}
