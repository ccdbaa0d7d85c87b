//! Personalized-PageRank style propagation over a normalized adjacency.
//!
//! Two routes are offered. [`propagate_dense`] applies `Â_ε^L` to a dense
//! payload right-to-left with `L` sparse-dense products and never forms the
//! propagation matrix. [`ppr_matrix`] builds `Π = Â_ε^L` explicitly (needed
//! when its rows are used as mixture weights), optionally pruning mass below
//! `δ` back onto the diagonal after every multiplication.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sparse::{self, DenseMatrix, SparseMatrix};

/// Node count above which sparsification is switched on by default.
pub const SPARSIFY_NODE_THRESHOLD: usize = 10_000;
pub const DEFAULT_SPARSIFY_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    RandomWalk,
    Symmetric,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::RandomWalk => "random_walk",
            Normalization::Symmetric => "symmetric",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_walk" | "rw" => Ok(Normalization::RandomWalk),
            "symmetric" | "sym" => Ok(Normalization::Symmetric),
            other => Err(Error::invalid(format!("unknown normalization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PprConfig {
    /// Teleport probability `ε` in (0, 1].
    pub teleport: f64,
    /// Number of power iterations `L`.
    pub iterations: usize,
    pub sparsify_delta: Option<f64>,
    pub normalization: Normalization,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            teleport: 0.1,
            iterations: 10,
            sparsify_delta: None,
            normalization: Normalization::RandomWalk,
        }
    }
}

impl PprConfig {
    /// Defaults for a graph of `n_nodes`, with sparsification enabled on large graphs.
    pub fn for_graph(n_nodes: usize) -> Self {
        Self {
            sparsify_delta: (n_nodes > SPARSIFY_NODE_THRESHOLD).then_some(DEFAULT_SPARSIFY_DELTA),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // ε = 0 is accepted: it is the pure-adjacency limit used by fixtures.
        if !(self.teleport >= 0.0 && self.teleport <= 1.0) {
            return Err(Error::invalid(format!("teleport must lie in [0, 1], got {}", self.teleport)));
        }
        if let Some(d) = self.sparsify_delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::invalid(format!("sparsify delta must lie in (0, 1), got {d}")));
            }
        }
        Ok(())
    }
}

/// Normalizes a raw 0/1 adjacency as requested by `cfg`. Isolated nodes get a
/// self-loop in both schemes.
pub fn normalize(adjacency: &SparseMatrix, normalization: Normalization) -> Result<SparseMatrix> {
    match normalization {
        Normalization::RandomWalk => sparse::normalize_rw(adjacency, true),
        Normalization::Symmetric => sparse::normalize_sym(&sparse::with_isolated_self_loops(adjacency)?),
    }
}

/// `ε I + (1 − ε) Â` for an already normalized `Â`.
pub fn a_eps(normalized: &SparseMatrix, cfg: &PprConfig) -> Result<SparseMatrix> {
    cfg.validate()?;
    let eps = cfg.teleport;
    if eps == 1.0 {
        if normalized.n_rows() != normalized.n_cols() {
            return Err(Error::NotSquare(normalized.n_rows(), normalized.n_cols()));
        }
        return Ok(SparseMatrix::identity(normalized.n_rows()));
    }
    normalized.scale_add_identity(1.0 - eps, eps)
}

/// `Â_ε^L · payload`, evaluated right to left with `L` sparse-dense products.
pub fn propagate_dense(normalized: &SparseMatrix, payload: &DenseMatrix, cfg: &PprConfig) -> Result<DenseMatrix> {
    if payload.n_rows() != normalized.n_cols() {
        return Err(Error::ShapeMismatch {
            op: "propagate_dense",
            left: (normalized.n_rows(), normalized.n_cols()),
            right: payload.shape(),
        });
    }
    let op = a_eps(normalized, cfg)?;
    let mut out = payload.clone();
    for _ in 0..cfg.iterations {
        out = sparse::spmm(&op, &out)?;
    }
    Ok(out)
}

/// Explicit propagation matrix `Π`.
///
/// Accumulates `Πᵗ = Πᵗ⁻¹ · Â_ε` from the left, sparsifying after every
/// product when `cfg.sparsify_delta` is set.
pub fn ppr_matrix(normalized: &SparseMatrix, cfg: &PprConfig) -> Result<SparseMatrix> {
    let op = a_eps(normalized, cfg)?;
    let mut pi = SparseMatrix::identity(op.n_rows());
    for _ in 0..cfg.iterations {
        pi = sparse::spspmm(&pi, &op)?;
        if let Some(delta) = cfg.sparsify_delta {
            pi = sparse::sparsify_to_diagonal(&pi, delta)?;
        }
    }
    Ok(pi)
}
