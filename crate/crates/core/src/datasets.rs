//! Graph datasets: on-disk format, splits, a stochastic block model
//! generator and out-of-distribution scenario constructors.
//!
//! A dataset directory holds
//!
//! * `meta.txt`: `key = value` lines with `n_nodes`, `n_classes`, `feature_dim`
//! * `edges.tsv`: one `src<TAB>dst` pair per line, 0-based, undirected
//! * `features.tsv`: one tab-separated row per node
//! * `labels.tsv`: one class index per line
//! * `splits.tsv` (optional): one of `train`, `val`, `test`, `none` per line

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub adjacency: SparseMatrix,
    pub features: DenseMatrix,
    /// Class per node. After a leave-out scenario, flagged nodes carry
    /// indices `>= n_classes`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub ood_flags: Option<Vec<bool>>,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

impl GraphDataset {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.n_cols()
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        indices(&self.train_mask)
    }

    pub fn val_nodes(&self) -> Vec<usize> {
        indices(&self.val_mask)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        indices(&self.test_mask)
    }

    pub fn is_ood(&self, i: usize) -> bool {
        self.ood_flags.as_ref().is_some_and(|f| f[i])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let bad = |msg: String| Err(Error::Dataset(msg));
        if self.adjacency.n_rows() != n || self.adjacency.n_cols() != n {
            return bad(format!(
                "adjacency is {}x{} for {n} nodes",
                self.adjacency.n_rows(),
                self.adjacency.n_cols()
            ));
        }
        if self.features.n_rows() != n {
            return bad(format!("{} feature rows for {n} nodes", self.features.n_rows()));
        }
        for (name, m) in [("train", &self.train_mask), ("val", &self.val_mask), ("test", &self.test_mask)] {
            if m.len() != n {
                return bad(format!("{name} mask has length {} for {n} nodes", m.len()));
            }
        }
        if let Some(f) = &self.ood_flags {
            if f.len() != n {
                return bad(format!("ood flags have length {} for {n} nodes", f.len()));
            }
        }
        if !self.adjacency.is_symmetric() {
            return bad("adjacency is not symmetric".into());
        }
        for i in 0..n {
            let count = [self.train_mask[i], self.val_mask[i], self.test_mask[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            if count > 1 {
                return bad(format!("node {i} is in more than one split"));
            }
            if self.is_ood(i) {
                if self.train_mask[i] || self.val_mask[i] {
                    return bad(format!("out-of-distribution node {i} is in the train or val split"));
                }
            } else if self.labels[i] >= self.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: self.labels[i],
                    n_classes: self.n_classes,
                });
            }
        }
        if let Some(k) = self.features.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "feature", index: k });
        }
        Ok(())
    }

    /// Fraction of edges joining nodes of the same class.
    pub fn homophily(&self) -> f64 {
        let mut same = 0usize;
        let mut total = 0usize;
        for i in 0..self.n_nodes() {
            for &j in self.adjacency.row(i).0 {
                if i != j {
                    total += 1;
                    same += (self.labels[i] == self.labels[j]) as usize;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }
}

/// Builds a symmetric 0/1 adjacency from an undirected edge list; duplicates
/// and reversed duplicates collapse.
pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Dataset(format!("edge ({a}, {b}) out of range for {n} nodes")));
        }
        set.insert((a, b));
        set.insert((b, a));
    }
    SparseMatrix::from_triplets(n, n, set.into_iter().map(|(a, b)| (a, b, 1.0)))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, no + 1, "expected `key = value`"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn required_usize(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<usize> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Dataset(format!("{} lacks required key {key}", path.display())))?;
    v.parse()
        .map_err(|_| Error::Dataset(format!("{key} = {v:?} in {} is not a non-negative integer", path.display())))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn load(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.txt");
    let meta = parse_key_values(&meta_path, &read(&meta_path)?)?;
    let n = required_usize(&meta, "n_nodes", &meta_path)?;
    let k = required_usize(&meta, "n_classes", &meta_path)?;
    let d = required_usize(&meta, "feature_dim", &meta_path)?;
    let name = meta.get("name").cloned().unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (no, line) in data_lines(&read(&edges_path)?) {
        let mut parts = line.split('\t');
        let mut next = || -> Result<usize> {
            let tok = parts.next().ok_or_else(|| parse_err(&edges_path, no, "expected two columns"))?;
            tok.trim()
                .parse()
                .map_err(|_| parse_err(&edges_path, no, format!("{tok:?} is not a node index")))
        };
        let (a, b) = (next()?, next()?);
        if a >= n || b >= n {
            return Err(parse_err(&edges_path, no, format!("node index out of range for {n} nodes")));
        }
        edges.push((a, b));
    }

    let feat_path = dir.join("features.tsv");
    let mut values = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (no, line) in data_lines(&read(&feat_path)?) {
        let before = values.len();
        for tok in line.split('\t') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(&feat_path, no, format!("{tok:?} is not a number")))?;
            values.push(v);
        }
        if values.len() - before != d {
            return Err(parse_err(&feat_path, no, format!("expected {d} columns, got {}", values.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Dataset(format!("{} has {rows} rows for {n} nodes", feat_path.display())));
    }

    let labels_path = dir.join("labels.tsv");
    let mut labels = Vec::with_capacity(n);
    for (no, line) in data_lines(&read(&labels_path)?) {
        let y: usize = line
            .parse()
            .map_err(|_| parse_err(&labels_path, no, format!("{line:?} is not a class index")))?;
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, n_classes: k });
        }
        labels.push(y);
    }
    if labels.len() != n {
        return Err(Error::Dataset(format!(
            "{} has {} labels for {n} nodes",
            labels_path.display(),
            labels.len()
        )));
    }

    let mut train_mask = vec![false; n];
    let mut val_mask = vec![false; n];
    let mut test_mask = vec![false; n];
    let splits_path = dir.join("splits.tsv");
    if splits_path.exists() {
        let mut count = 0;
        for (no, line) in data_lines(&read(&splits_path)?) {
            if count >= n {
                return Err(parse_err(&splits_path, no, "more split entries than nodes"));
            }
            match line {
                "train" => train_mask[count] = true,
                "val" => val_mask[count] = true,
                "test" => test_mask[count] = true,
                "none" => {}
                other => return Err(parse_err(&splits_path, no, format!("unknown split {other:?}"))),
            }
            count += 1;
        }
        if count != n {
            return Err(Error::Dataset(format!("{} has {count} entries for {n} nodes", splits_path.display())));
        }
    }

    let ds = GraphDataset {
        name,
        adjacency: adjacency_from_edges(n, &edges)?,
        features: DenseMatrix::from_vec(n, d, values)?,
        labels,
        n_classes: k,
        train_mask,
        val_mask,
        test_mask,
        ood_flags: None,
    };
    ds.validate()?;
    Ok(ds)
}

fn write(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes the directory format. Reals use the shortest representation that
/// parses back to the same bits.
pub fn save(d: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(
        dir.join("meta.txt"),
        format!(
            "name = {}\nn_nodes = {}\nn_classes = {}\nfeature_dim = {}\n",
            d.name,
            d.n_nodes(),
            d.n_classes,
            d.feature_dim()
        ),
    )?;
    let mut edges = String::new();
    for i in 0..d.n_nodes() {
        for &j in d.adjacency.row(i).0 {
            if i <= j {
                edges.push_str(&format!("{i}\t{j}\n"));
            }
        }
    }
    write(dir.join("edges.tsv"), edges)?;
    let mut feats = String::new();
    for row in d.features.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        feats.push_str(&cells.join("\t"));
        feats.push('\n');
    }
    write(dir.join("features.tsv"), feats)?;
    write(
        dir.join("labels.tsv"),
        d.labels.iter().map(|y| format!("{y}\n")).collect(),
    )?;
    if d.train_mask.iter().chain(&d.val_mask).chain(&d.test_mask).any(|&b| b) {
        let splits: String = (0..d.n_nodes())
            .map(|i| {
                if d.train_mask[i] {
                    "train\n"
                } else if d.val_mask[i] {
                    "val\n"
                } else if d.test_mask[i] {
                    "test\n"
                } else {
                    "none\n"
                }
            })
            .collect();
        write(dir.join("splits.tsv"), splits)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.05,
            val_fraction: 0.15,
            test_fraction: 0.80,
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|x| !(*x >= 0.0)) || f.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "split fractions must be non-negative and sum to at most 1, got {f:?}"
            )));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 4] {
        let rest = (1.0 - self.train_fraction - self.val_fraction - self.test_fraction).max(0.0);
        [self.train_fraction, self.val_fraction, self.test_fraction, rest]
    }
}

/// Largest-remainder apportionment of `total` by `fractions`; ties go to the
/// lower index.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let sum: f64 = fractions.iter().sum();
    let quotas: Vec<f64> = fractions.iter().map(|f| f / sum * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[s] += 1;
        left -= 1;
    }
    out
}

/// Per-group counts for each split, each within one node of its quota.
///
/// Split totals follow a global largest-remainder rule. The leftover unit
/// of every group is then placed with a 0/1 matrix matching both margins,
/// built column by column from the groups with the most demand left.
fn stratified_counts(group_sizes: &[usize], fractions: &[f64; 4]) -> Vec<[usize; 4]> {
    let total: usize = group_sizes.iter().sum();
    let split_totals = apportion(total, fractions);
    let quota = |g: usize, s: usize| fractions[s] * group_sizes[g] as f64;
    let mut counts: Vec<[usize; 4]> = (0..group_sizes.len())
        .map(|g| std::array::from_fn(|s| quota(g, s).floor() as usize))
        .collect();
    let mut demand: Vec<usize> = group_sizes
        .iter()
        .zip(&counts)
        .map(|(&n, c)| n - c.iter().sum::<usize>())
        .collect();
    let need: Vec<usize> = (0..4)
        .map(|s| split_totals[s].saturating_sub(counts.iter().map(|c| c[s]).sum()))
        .collect();
    let mut columns: Vec<usize> = (0..4).collect();
    columns.sort_by(|&a, &b| need[b].cmp(&need[a]).then(a.cmp(&b)));
    for s in columns {
        let rem = |g: usize| quota(g, s) - quota(g, s).floor();
        let mut order: Vec<usize> = (0..group_sizes.len()).filter(|&g| demand[g] > 0).collect();
        order.sort_by(|&a, &b| {
            demand[b]
                .cmp(&demand[a])
                .then(rem(b).partial_cmp(&rem(a)).unwrap())
                .then(a.cmp(&b))
        });
        for g in order.into_iter().take(need[s]) {
            counts[g][s] += 1;
            demand[g] -= 1;
        }
    }
    counts
}

/// Assigns train/val/test masks. Nodes of each class (or all nodes when not
/// stratified) are shuffled with the split seed and dealt out in order.
pub fn split(d: &GraphDataset, s: &SplitSpec) -> Result<GraphDataset> {
    s.validate()?;
    let n = d.n_nodes();
    let groups: Vec<Vec<usize>> = if s.stratified {
        let mut g = vec![Vec::new(); d.n_classes];
        for i in 0..n {
            if d.labels[i] < d.n_classes {
                g[d.labels[i]].push(i);
            }
        }
        g.retain(|v| !v.is_empty());
        g
    } else {
        vec![(0..n).collect()]
    };
    let fractions = s.fractions();
    if s.stratified {
        let slots = fractions[..3].iter().filter(|&&f| f > 0.0).count();
        if let Some(g) = groups.iter().find(|g| g.len() < slots) {
            return Err(Error::Dataset(format!(
                "class {} has {} nodes, fewer than the {slots} split slots",
                d.labels[g[0]],
                g.len()
            )));
        }
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let counts = stratified_counts(&sizes, &fractions);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut out = d.clone();
    out.train_mask = vec![false; n];
    out.val_mask = vec![false; n];
    out.test_mask = vec![false; n];
    for (group, c) in groups.iter().zip(&counts) {
        let mut nodes = group.clone();
        nodes.shuffle(&mut rng);
        let mut it = nodes.into_iter();
        for (mask, &k) in [&mut out.train_mask, &mut out.val_mask, &mut out.test_mask].into_iter().zip(c) {
            for i in it.by_ref().take(k) {
                mask[i] = true;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl SbmConfig {
    /// The `sbm-small` preset.
    pub fn small(seed: u64) -> Self {
        Self {
            n_nodes: 500,
            n_classes: 3,
            intra_p: 0.05,
            inter_p: 0.002,
            feature_dim: 16,
            class_separation: 2.0,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "sbm-small" => Ok(Self::small(seed)),
            other => Err(Error::invalid(format!("unknown preset {other:?}; valid presets: sbm-small"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_nodes == 0 || self.n_classes == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("node count, class count and feature dimension must be positive"));
        }
        if !prob(self.intra_p) || !prob(self.inter_p) || self.intra_p <= self.inter_p {
            return Err(Error::invalid(format!(
                "need 0 <= inter_p < intra_p <= 1, got inter {} and intra {}",
                self.inter_p, self.intra_p
            )));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid("class separation must be finite and non-negative"));
        }
        if self.n_classes > 2 * self.feature_dim {
            return Err(Error::invalid(format!(
                "{} classes need at least {} feature dimensions",
                self.n_classes,
                self.n_classes.div_ceil(2)
            )));
        }
        Ok(())
    }
}

/// Class mean: `±(sep/√2)` on one axis, so any two means are `sep` apart.
fn class_mean(k: usize, d: usize, sep: f64) -> Vec<f64> {
    let mut m = vec![0.0; d];
    let sign = if k < d { 1.0 } else { -1.0 };
    m[k % d] = sign * sep / std::f64::consts::SQRT_2;
    m
}

/// Stochastic block model with contiguous, balanced class blocks and
/// unit-variance Gaussian features around per-class means.
pub fn synth_sbm(cfg: &SbmConfig) -> Result<GraphDataset> {
    cfg.validate()?;
    let (n, k, d) = (cfg.n_nodes, cfg.n_classes, cfg.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.intra_p } else { cfg.inter_p };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let means: Vec<Vec<f64>> = (0..k).map(|c| class_mean(c, d, cfg.class_separation)).collect();
    let mut values = Vec::with_capacity(n * d);
    for &y in &labels {
        for m in &means[y] {
            let z: f64 = rng.sample(StandardNormal);
            values.push(m + z);
        }
    }
    Ok(GraphDataset {
        name: format!("sbm-n{n}-k{k}-s{}", cfg.seed),
        adjacency: adjacency_from_edges(n, &edges)?,
        features: DenseMatrix::from_vec(n, d, values)?,
        labels,
        n_classes: k,
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
        ood_flags: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum OodScenario {
    /// `None` leaves out the ⌊K/2⌋ highest class indices.
    LeaveOutClasses { classes: Option<Vec<usize>> },
    BernoulliDropout { keep_prob: f64, node_fraction: f64, seed: u64 },
    GaussianFeatures { node_fraction: f64, seed: u64 },
}

pub const DEFAULT_NODE_FRACTION: f64 = 0.1;
pub const DEFAULT_KEEP_PROB: f64 = 0.5;

impl OodScenario {
    pub const NAMES: [&'static str; 3] = ["leave_out_classes", "bernoulli_dropout", "gaussian_features"];

    pub fn name(&self) -> &'static str {
        match self {
            OodScenario::LeaveOutClasses { .. } => Self::NAMES[0],
            OodScenario::BernoulliDropout { .. } => Self::NAMES[1],
            OodScenario::GaussianFeatures { .. } => Self::NAMES[2],
        }
    }

    /// Scenarios that only perturb features keep the label space, so a model
    /// trained on the clean graph can score them.
    pub fn perturbs_features_only(&self) -> bool {
        !matches!(self, OodScenario::LeaveOutClasses { .. })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            OodScenario::BernoulliDropout { keep_prob, node_fraction, .. } => OodScenario::BernoulliDropout {
                keep_prob,
                node_fraction,
                seed,
            },
            OodScenario::GaussianFeatures { node_fraction, .. } => OodScenario::GaussianFeatures { node_fraction, seed },
            other => other,
        }
    }
}

impl fmt::Display for OodScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OodScenario {
    type Err = Error;

    /// Parses a scenario name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leave_out_classes" => Ok(OodScenario::LeaveOutClasses { classes: None }),
            "bernoulli_dropout" => Ok(OodScenario::BernoulliDropout {
                keep_prob: DEFAULT_KEEP_PROB,
                node_fraction: DEFAULT_NODE_FRACTION,
                seed: 0,
            }),
            "gaussian_features" => Ok(OodScenario::GaussianFeatures {
                node_fraction: DEFAULT_NODE_FRACTION,
                seed: 0,
            }),
            other => Err(Error::invalid(format!(
                "unknown scenario {other:?}; valid scenarios: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

fn pick_perturbed(d: &GraphDataset, node_fraction: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(node_fraction > 0.0 && node_fraction <= 1.0) {
        return Err(Error::invalid(format!("node fraction must lie in (0, 1], got {node_fraction}")));
    }
    let mut pool: Vec<usize> = (0..d.n_nodes()).filter(|&i| !d.train_mask[i]).collect();
    let want = ((node_fraction * d.n_nodes() as f64).round() as usize).min(pool.len());
    pool.shuffle(rng);
    pool.truncate(want);
    pool.sort_unstable();
    Ok(pool)
}

pub fn apply_ood(d: &GraphDataset, s: &OodScenario) -> Result<GraphDataset> {
    let n = d.n_nodes();
    let mut out = d.clone();
    let mut flags = vec![false; n];
    match s {
        OodScenario::LeaveOutClasses { classes } => {
            let k = d.n_classes;
            let left_out: BTreeSet<usize> = match classes {
                Some(c) => c.iter().copied().collect(),
                None => (k - k / 2..k).collect(),
            };
            if left_out.is_empty() {
                return Err(Error::invalid("leave-out scenario needs at least one class"));
            }
            if let Some(&c) = left_out.iter().find(|&&c| c >= k) {
                return Err(Error::LabelOutOfRange { label: c, n_classes: k });
            }
            let kept: Vec<usize> = (0..k).filter(|c| !left_out.contains(c)).collect();
            if kept.len() < 2 {
                return Err(Error::invalid(format!(
                    "leaving out {} of {k} classes leaves fewer than 2 in-distribution classes",
                    left_out.len()
                )));
            }
            let mut remap = vec![0; k];
            for (new, &old) in kept.iter().enumerate() {
                remap[old] = new;
            }
            for (rank, &old) in left_out.iter().enumerate() {
                remap[old] = kept.len() + rank;
            }
            for i in 0..n {
                if d.labels[i] < k {
                    out.labels[i] = remap[d.labels[i]];
                    if left_out.contains(&d.labels[i]) {
                        flags[i] = true;
                        out.train_mask[i] = false;
                        out.val_mask[i] = false;
                    }
                }
            }
            out.n_classes = kept.len();
        }
        OodScenario::BernoulliDropout { keep_prob, node_fraction, seed } => {
            if !(*keep_prob > 0.0 && *keep_prob <= 1.0) {
                return Err(Error::invalid(format!("keep probability must lie in (0, 1], got {keep_prob}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for i in pick_perturbed(d, *node_fraction, &mut rng)? {
                flags[i] = true;
                out.val_mask[i] = false;
                for v in out.features.row_mut(i) {
                    if rng.random::<f64>() >= *keep_prob {
                        *v = 0.0;
                    }
                }
            }
        }
        OodScenario::GaussianFeatures { node_fraction, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for i in pick_perturbed(d, *node_fraction, &mut rng)? {
                flags[i] = true;
                out.val_mask[i] = false;
                for v in out.features.row_mut(i) {
                    *v = rng.sample(StandardNormal);
                }
            }
        }
    }
    out.ood_flags = Some(flags);
    out.name = format!("{}+{}", d.name, s.name());
    Ok(out)
}
