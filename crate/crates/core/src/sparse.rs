//! Compressed sparse row matrices and the operators built on them.
//!
//! Every [`SparseMatrix`] is kept in canonical form: column indices are
//! strictly increasing within a row and no explicit zeros are stored. The
//! graph operators (normalized adjacency, teleport-blended adjacency and the
//! explicit propagation matrix) all live in this representation.

use crate::error::{Error, Result};

/// Absolute per-row tolerance for "row-stochastic" checks.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::invalid(format!(
                "dense matrix {n_rows}x{n_cols} needs {} values, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), n_cols, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix still has rows
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        DenseMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            values,
        }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl SparseMatrix {
    /// Builds a canonical matrix from `(row, col, value)` triplets.
    /// Duplicate coordinates are summed; entries that end up exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::invalid(format!(
                    "entry ({i}, {j}) outside {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "matrix entry",
                    index: i,
                });
            }
            per_row[i].push((j, v));
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    col_indices.push(j);
                    values.push(sum);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles from raw CSR arrays, validating every canonical-form invariant.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return Err(Error::invalid("row_offsets must have n_rows + 1 entries starting at 0"));
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != values.len() {
            return Err(Error::invalid("row_offsets, col_indices and values disagree in length"));
        }
        for i in 0..n_rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::invalid("row_offsets must be non-decreasing"));
            }
            let cols = &col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("row {i} columns not strictly increasing")));
            }
            if cols.iter().any(|&j| j >= n_cols) {
                return Err(Error::invalid(format!("row {i} has a column out of range")));
            }
            if values[lo..hi].iter().any(|&v| v == 0.0 || !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} stores a zero or non-finite value")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let triplets = (0..m.n_rows()).flat_map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(move |(j, &v)| (i, j, v))
        });
        Self::from_triplets(m.n_rows(), m.n_cols(), triplets.collect::<Vec<_>>())
            .expect("dense input is in range")
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.set(i, j, v);
            }
        }
        d
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                col_indices[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// Exact structural and value symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && *self == self.transpose()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &r in rows {
            let (cols, vals) = self.row(r);
            col_indices.extend_from_slice(cols);
            values.extend_from_slice(vals);
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Returns `scale * self + shift * I`.
    pub fn scale_add_identity(&self, scale: f64, shift: f64) -> Result<SparseMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSquare(self.n_rows, self.n_cols));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + self.n_rows);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, scale * v)));
            triplets.push((i, i, shift));
        }
        SparseMatrix::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    fn check_stochastic(&self) -> Result<()> {
        for (row, sum) in self.row_sums().into_iter().enumerate() {
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotRowStochastic { row, sum });
            }
        }
        Ok(())
    }
}

fn square_binary_degrees(adjacency: &SparseMatrix) -> Result<Vec<f64>> {
    if adjacency.n_rows != adjacency.n_cols {
        return Err(Error::NotSquare(adjacency.n_rows, adjacency.n_cols));
    }
    if let Some(v) = adjacency.values.iter().find(|&&v| v != 1.0) {
        return Err(Error::invalid(format!(
            "adjacency must be unweighted (0/1), found {v}"
        )));
    }
    Ok((0..adjacency.n_rows)
        .map(|i| adjacency.row_nnz(i) as f64)
        .collect())
}

/// Random-walk normalization `D^{-1} A`: every row sums to one.
///
/// Isolated nodes get a unit self-loop when `add_self_loops_to_isolated` is
/// set and are rejected otherwise.
pub fn normalize_rw(adjacency: &SparseMatrix, add_self_loops_to_isolated: bool) -> Result<SparseMatrix> {
    let degrees = square_binary_degrees(adjacency)?;
    let mut row_offsets = Vec::with_capacity(adjacency.n_rows + 1);
    let mut col_indices = Vec::with_capacity(adjacency.nnz());
    let mut values = Vec::with_capacity(adjacency.nnz());
    row_offsets.push(0);
    for (i, &d) in degrees.iter().enumerate() {
        if d == 0.0 {
            if !add_self_loops_to_isolated {
                return Err(Error::IsolatedNode(i));
            }
            col_indices.push(i);
            values.push(1.0);
        } else {
            let (cols, _) = adjacency.row(i);
            col_indices.extend_from_slice(cols);
            values.extend(std::iter::repeat_n(1.0 / d, cols.len()));
        }
        row_offsets.push(col_indices.len());
    }
    Ok(SparseMatrix {
        n_rows: adjacency.n_rows,
        n_cols: adjacency.n_cols,
        row_offsets,
        col_indices,
        values,
    })
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}`.
///
/// Zero-degree nodes are an error; insert self-loops beforehand if needed.
pub fn normalize_sym(adjacency: &SparseMatrix) -> Result<SparseMatrix> {
    let degrees = square_binary_degrees(adjacency)?;
    if let Some(i) = degrees.iter().position(|&d| d == 0.0) {
        return Err(Error::ZeroDegree(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = adjacency.clone();
    for i in 0..out.n_rows {
        let (lo, hi) = (out.row_offsets[i], out.row_offsets[i + 1]);
        for k in lo..hi {
            let j = out.col_indices[k];
            out.values[k] = inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(out)
}

/// Adds a unit self-loop to every node without edges.
pub fn with_isolated_self_loops(adjacency: &SparseMatrix) -> Result<SparseMatrix> {
    if adjacency.n_rows != adjacency.n_cols {
        return Err(Error::NotSquare(adjacency.n_rows, adjacency.n_cols));
    }
    let mut triplets = Vec::with_capacity(adjacency.nnz());
    for i in 0..adjacency.n_rows {
        let (cols, vals) = adjacency.row(i);
        if cols.is_empty() {
            triplets.push((i, i, 1.0));
        }
        triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
    }
    SparseMatrix::from_triplets(adjacency.n_rows, adjacency.n_cols, triplets)
}

/// Sparse-dense product. Cost is `nnz(a) * b.n_cols`.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols != b.n_rows {
        return Err(Error::ShapeMismatch {
            op: "spmm",
            left: (a.n_rows, a.n_cols),
            right: b.shape(),
        });
    }
    let k = b.n_cols;
    let mut out = DenseMatrix::zeros(a.n_rows, k);
    for i in 0..a.n_rows {
        let (cols, vals) = a.row(i);
        let dst = &mut out.values[i * k..(i + 1) * k];
        for (&j, &v) in cols.iter().zip(vals) {
            for (d, s) in dst.iter_mut().zip(b.row(j)) {
                *d += v * s;
            }
        }
    }
    Ok(out)
}

/// Sparse-sparse product in canonical form.
pub fn spspmm(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    if a.n_cols != b.n_rows {
        return Err(Error::ShapeMismatch {
            op: "spspmm",
            left: (a.n_rows, a.n_cols),
            right: (b.n_rows, b.n_cols),
        });
    }
    let mut acc = vec![0.0; b.n_cols];
    let mut touched = vec![false; b.n_cols];
    let mut pattern: Vec<usize> = Vec::new();
    let mut row_offsets = Vec::with_capacity(a.n_rows + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in 0..a.n_rows {
        let (a_cols, a_vals) = a.row(i);
        for (&k, &av) in a_cols.iter().zip(a_vals) {
            let (b_cols, b_vals) = b.row(k);
            for (&j, &bv) in b_cols.iter().zip(b_vals) {
                if !touched[j] {
                    touched[j] = true;
                    pattern.push(j);
                }
                acc[j] += av * bv;
            }
        }
        pattern.sort_unstable();
        for &j in &pattern {
            if acc[j] != 0.0 {
                col_indices.push(j);
                values.push(acc[j]);
            }
            acc[j] = 0.0;
            touched[j] = false;
        }
        pattern.clear();
        row_offsets.push(col_indices.len());
    }
    Ok(SparseMatrix {
        n_rows: a.n_rows,
        n_cols: b.n_cols,
        row_offsets,
        col_indices,
        values,
    })
}

/// Moves every off-diagonal entry below `delta` onto its row's diagonal.
///
/// Row sums are preserved and each output row stores at most `1 + 1/delta`
/// entries, since at most `1/delta` off-diagonal entries of a stochastic
/// row can reach the threshold.
pub fn sparsify_to_diagonal(m: &SparseMatrix, delta: f64) -> Result<SparseMatrix> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if m.n_rows != m.n_cols {
        return Err(Error::NotSquare(m.n_rows, m.n_cols));
    }
    m.check_stochastic()?;
    let mut row_offsets = Vec::with_capacity(m.n_rows + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in 0..m.n_rows {
        let (cols, vals) = m.row(i);
        let mut diag = 0.0;
        let mut kept: Vec<(usize, f64)> = Vec::with_capacity(cols.len());
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i || v < delta {
                diag += v;
            } else {
                kept.push((j, v));
            }
        }
        if diag != 0.0 {
            let pos = kept.partition_point(|&(j, _)| j < i);
            kept.insert(pos, (i, diag));
        }
        for (j, v) in kept {
            col_indices.push(j);
            values.push(v);
        }
        row_offsets.push(col_indices.len());
    }
    Ok(SparseMatrix {
        n_rows: m.n_rows,
        n_cols: m.n_cols,
        row_offsets,
        col_indices,
        values,
    })
}

pub(crate) mod dense_oracle {
    //! Brute-force dense reference routines, independent of the CSR code paths.

    pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let m = b[0].len();
        let inner = b.len();
        let mut out = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..inner {
                    s += a[i][k] * b[k][j];
                }
                out[i][j] = s;
            }
        }
        out
    }

    pub fn normalize_rw(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter()
            .map(|row| {
                let d: f64 = row.iter().sum();
                row.iter().map(|v| v / d).collect()
            })
            .collect()
    }

    pub fn power(a: &[Vec<f64>], l: usize) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut out: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..l {
            out = matmul(&out, a);
        }
        out
    }

    pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Scalar loop version of diagonal sparsification on one dense row.
    #[cfg(test)]
    pub fn sparsify_row(row: &[f64], i: usize, delta: f64) -> Vec<f64> {
        let mut out = row.to_vec();
        for j in 0..row.len() {
            if j != i && row[j] != 0.0 && row[j] < delta {
                out[i] += row[j];
                out[j] = 0.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::dense_oracle as oracle;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path3() -> SparseMatrix {
        SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    fn random_sparse(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < density {
                    t.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(n, m, t).unwrap()
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> SparseMatrix {
        let mut rows = Vec::new();
        for _ in 0..n {
            let mut r: Vec<f64> = (0..n)
                .map(|_| if rng.random::<f64>() < 0.6 { rng.random::<f64>() } else { 0.0 })
                .collect();
            if r.iter().all(|&v| v == 0.0) {
                r[0] = 1.0;
            }
            let s: f64 = r.iter().sum();
            rows.push(r.into_iter().map(|v| v / s).collect::<Vec<_>>());
        }
        SparseMatrix::from_dense(&DenseMatrix::from_rows(&rows).unwrap())
    }

    #[test]
    fn triplets_are_canonicalized() {
        let m = SparseMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 1.0), (1, 1, -1.0)])
            .unwrap();
        assert_eq!(m.row(0), (&[0usize, 2][..], &[2.0, 1.5][..]));
        assert_eq!(m.row_nnz(1), 0);
        assert!(SparseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn from_csr_rejects_non_canonical() {
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 1], vec![1], vec![0.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 1], vec![1], vec![2.0]).is_ok());
    }

    #[test]
    fn rw_two_nodes() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let n = normalize_rw(&a, false).unwrap();
        assert_eq!(n.to_dense().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn rw_path_matches_dense_oracle() {
        let a = path3();
        let got = normalize_rw(&a, false).unwrap().to_dense().to_rows();
        let want = oracle::normalize_rw(&a.to_dense().to_rows());
        assert_eq!(want, vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5], vec![0.0, 1.0, 0.0]]);
        assert!(oracle::max_abs_diff(&got, &want) < 1e-15);
    }

    #[test]
    fn rw_isolated_node() {
        let a = SparseMatrix::from_triplets(1, 1, []).unwrap();
        assert_eq!(normalize_rw(&a, true).unwrap().to_dense().to_rows(), vec![vec![1.0]]);
        assert!(matches!(normalize_rw(&a, false), Err(Error::IsolatedNode(0))));
        let rect = SparseMatrix::from_triplets(1, 2, []).unwrap();
        assert!(matches!(normalize_rw(&rect, true), Err(Error::NotSquare(1, 2))));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn sym_examples() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(normalize_sym(&a).unwrap().to_dense().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let s = normalize_sym(&path3()).unwrap();
        assert!((s.get(1, 0) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((s.get(1, 0) - 0.70711).abs() < 1e-5);
        assert_eq!(normalize_sym(&SparseMatrix::identity(4)).unwrap(), SparseMatrix::identity(4));
        let isolated = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0)]).unwrap();
        assert!(matches!(normalize_sym(&isolated), Err(Error::ZeroDegree(1))));
    }

    #[test]
    fn spmm_examples() {
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(spmm(&SparseMatrix::identity(2), &b).unwrap(), b);
        let swap = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(spmm(&swap, &b).unwrap().to_rows(), vec![vec![3.0, 4.0], vec![1.0, 2.0]]);
        assert!(spmm(&SparseMatrix::identity(3), &b).is_err());
    }

    #[test]
    fn spspmm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sparse(&mut rng, 4, 4, 0.5);
        assert_eq!(spspmm(&SparseMatrix::identity(4), &s).unwrap(), s);
        // cyclic shift composed with itself is a shift by two
        let p = SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let p2 = SparseMatrix::from_triplets(3, 3, [(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(spspmm(&p, &p).unwrap(), p2);
        assert!(spspmm(&SparseMatrix::identity(2), &SparseMatrix::identity(3)).is_err());
    }

    #[test]
    fn random_products_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_sparse(&mut rng, 5, 5, 0.4);
        let b: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let got = spmm(&a, &DenseMatrix::from_rows(&b).unwrap()).unwrap().to_rows();
        assert!(oracle::max_abs_diff(&got, &oracle::matmul(&a.to_dense().to_rows(), &b)) < 1e-12);

        let x = random_sparse(&mut rng, 6, 6, 0.3);
        let y = random_sparse(&mut rng, 6, 6, 0.3);
        let got = spspmm(&x, &y).unwrap().to_dense().to_rows();
        let want = oracle::matmul(&x.to_dense().to_rows(), &y.to_dense().to_rows());
        assert!(oracle::max_abs_diff(&got, &want) < 1e-12);
    }

    #[test]
    fn sparsify_examples() {
        let m = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
        assert_eq!(sparsify_to_diagonal(&m, 0.1).unwrap(), m);

        // the small entry is the diagonal itself: nothing moves
        let m = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![0.05, 0.95], vec![0.0, 1.0]]).unwrap());
        assert_eq!(sparsify_to_diagonal(&m, 0.1).unwrap(), m);

        let m = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![0.95, 0.05], vec![0.0, 1.0]]).unwrap());
        let s = sparsify_to_diagonal(&m, 0.1).unwrap();
        assert_eq!(s.to_dense().to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(s.row_nnz(0), 1);
    }

    #[test]
    fn sparsify_creates_missing_diagonal() {
        let m = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![0.0, 0.95, 0.05], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap());
        let s = sparsify_to_diagonal(&m, 0.1).unwrap();
        assert_eq!(s.row(0), (&[0usize, 1][..], &[0.05, 0.95][..]));
    }

    #[test]
    fn sparsify_errors() {
        let m = SparseMatrix::identity(2);
        assert!(sparsify_to_diagonal(&m, 0.0).is_err());
        assert!(sparsify_to_diagonal(&m, 1.0).is_err());
        let bad = SparseMatrix::from_triplets(2, 2, [(0, 0, 0.5), (1, 1, 1.0)]).unwrap();
        assert!(matches!(sparsify_to_diagonal(&bad, 0.1), Err(Error::NotRowStochastic { row: 0, .. })));
    }

    #[test]
    fn sparsify_random_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_stochastic(&mut rng, 8);
        let s = sparsify_to_diagonal(&m, 0.2).unwrap();
        let dense = m.to_dense().to_rows();
        let got = s.to_dense().to_rows();
        for i in 0..8 {
            let want = oracle::sparsify_row(&dense[i], i, 0.2);
            for j in 0..8 {
                assert!((got[i][j] - want[j]).abs() < 1e-15);
            }
            let sum: f64 = got[i].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row_nnz(i) as f64 <= 1.0 + 1.0 / 0.2);
        }
    }

    fn arb_graph() -> impl Strategy<Value = SparseMatrix> {
        (1usize..9, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < 0.4 {
                        t.push((i, j, 1.0));
                        t.push((j, i, 1.0));
                    }
                }
            }
            SparseMatrix::from_triplets(n, n, t).unwrap()
        })
    }

    proptest! {
        #[test]
        fn rw_rows_sum_to_one(a in arb_graph()) {
            let n = normalize_rw(&a, true).unwrap();
            for s in n.row_sums() {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn sym_preserves_symmetry(a in arb_graph()) {
            let a = with_isolated_self_loops(&a).unwrap();
            let s = normalize_sym(&a).unwrap();
            let t = s.transpose();
            prop_assert_eq!(s.col_indices(), t.col_indices());
            for (x, y) in s.values().iter().zip(t.values()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }

        #[test]
        fn products_agree_with_dense(n in 1usize..9, m in 1usize..9, k in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sparse(&mut rng, n, m, 0.35);
            let b = random_sparse(&mut rng, m, k, 0.35);
            let want = oracle::matmul(&a.to_dense().to_rows(), &b.to_dense().to_rows());
            let got = spspmm(&a, &b).unwrap().to_dense().to_rows();
            prop_assert!(oracle::max_abs_diff(&got, &want) < 1e-12);
            let got = spmm(&a, &b.to_dense()).unwrap().to_rows();
            prop_assert!(oracle::max_abs_diff(&got, &want) < 1e-12);
        }

        #[test]
        fn sparsify_preserves_mass(n in 1usize..9, seed in any::<u64>(), delta in 0.01f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_stochastic(&mut rng, n);
            let s = sparsify_to_diagonal(&m, delta).unwrap();
            for (i, (a, b)) in m.row_sums().iter().zip(s.row_sums()).enumerate() {
                prop_assert!((a - b).abs() < 1e-12);
                let off = |x: &SparseMatrix| x.row(i).0.iter().filter(|&&j| j != i).count();
                prop_assert!(off(&s) <= off(&m));
                prop_assert!(s.row_nnz(i) as f64 <= 1.0 + 1.0 / delta);
            }
        }
    }
}
