//! The feature-level posterior network and the three graph models built on
//! it: an APPNP baseline, GPN (pseudo-count propagation) and LOP-GPN
//! (opinion pooling of per-node Dirichlets).
//!
//! Every node is embedded by an MLP encoder; each class owns a stack of
//! radial flows over a standard-normal base that scores the embedding. The
//! feature-level pseudo-counts are `α_k = 1 + N · p(z | k) · P(k)`.

pub mod checkpoint;
pub mod losses;
mod posterior;

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use posterior::{forward_appnp, forward_gpn, forward_lop, mixtures_from_rows, NodePosterior};

use crate::datasets::GraphDataset;
use crate::diffmath::{clip_grad_norm, Adam, AdamConfig, SparseOperator, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::propagation::{self, Normalization, PprConfig, DEFAULT_SPARSIFY_DELTA, SPARSIFY_NODE_THRESHOLD};
use crate::second_order::{argmax, UncertaintyReport};
use crate::sparse::{DenseMatrix, SparseMatrix};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Added under the square root of the flow radius to keep it differentiable.
const RADIUS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    AppnpBaseline,
    GpnRw,
    GpnSym,
    LopGpn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::AppnpBaseline, ModelKind::GpnRw, ModelKind::GpnSym, ModelKind::LopGpn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AppnpBaseline => "appnp",
            ModelKind::GpnRw => "gpn_rw",
            ModelKind::GpnSym => "gpn_sym",
            ModelKind::LopGpn => "lop_gpn",
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            ModelKind::GpnSym => Normalization::Symmetric,
            _ => Normalization::RandomWalk,
        }
    }

    pub fn is_second_order(self) -> bool {
        self != ModelKind::AppnpBaseline
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appnp" | "appnp_baseline" => Ok(ModelKind::AppnpBaseline),
            "gpn_rw" | "gpn" => Ok(ModelKind::GpnRw),
            "gpn_sym" => Ok(ModelKind::GpnSym),
            "lop_gpn" | "lop" => Ok(ModelKind::LopGpn),
            other => Err(Error::invalid(format!(
                "unknown model {other:?}; valid models: appnp, gpn_rw, gpn_sym, lop_gpn"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub n_flows: usize,
    pub entropy_weight: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub teleport: f64,
    pub iterations: usize,
    /// `None` turns sparsification on only for graphs above the node threshold.
    pub sparsify_delta: Option<f64>,
    /// `None` uses the number of training nodes.
    pub certainty_budget: Option<f64>,
    /// Added to every class log density before the budget is applied;
    /// `None` uses `0.5 · H · ln 4π`.
    pub log_evidence_scale: Option<f64>,
    /// Upper clamp on `ln(N · p(z|k) · P(k))`.
    pub max_log_evidence: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            latent_dim: 16,
            n_flows: 8,
            entropy_weight: 1e-4,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            max_epochs: 2000,
            patience: 50,
            grad_clip: 10.0,
            teleport: 0.1,
            iterations: 10,
            sparsify_delta: None,
            certainty_budget: None,
            log_evidence_scale: None,
            max_log_evidence: 30.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("hidden and latent dimensions must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::invalid("learning rate and gradient clip must be positive"));
        }
        if !(self.entropy_weight >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("entropy weight and weight decay must be non-negative"));
        }
        if self.log_evidence_scale.is_some_and(|v| !v.is_finite()) {
            return Err(Error::invalid("log evidence scale must be finite"));
        }
        if let Some(b) = self.certainty_budget {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("certainty budget must be finite and non-negative, got {b}")));
            }
        }
        self.ppr(ModelKind::GpnRw, 0).validate()
    }

    pub fn resolved_log_evidence_scale(&self) -> f64 {
        self.log_evidence_scale
            .unwrap_or(0.5 * self.latent_dim as f64 * (4.0 * std::f64::consts::PI).ln())
    }

    /// Propagation settings for `kind` on a graph with `n_nodes` nodes.
    pub fn ppr(&self, kind: ModelKind, n_nodes: usize) -> PprConfig {
        PprConfig {
            teleport: self.teleport,
            iterations: self.iterations,
            sparsify_delta: self
                .sparsify_delta
                .or((n_nodes > SPARSIFY_NODE_THRESHOLD).then_some(DEFAULT_SPARSIFY_DELTA)),
            normalization: kind.normalization(),
        }
    }
}

/// Turns per-class log densities into pseudo-counts
/// `1 + exp(min(ln N + ln P(k) + ln p(z|k), max_log_evidence))`.
pub fn alphas_from_log_density(
    log_density: &DenseMatrix,
    log_budget: f64,
    log_priors: &[f64],
    max_log_evidence: f64,
) -> Result<DenseMatrix> {
    if log_density.n_cols() != log_priors.len() {
        return Err(Error::ShapeMismatch {
            op: "alphas_from_log_density",
            left: log_density.shape(),
            right: (1, log_priors.len()),
        });
    }
    let mut out = log_density.clone();
    for i in 0..out.n_rows() {
        for (k, v) in out.row_mut(i).iter_mut().enumerate() {
            if v.is_nan() {
                return Err(Error::NonFinite {
                    what: "class density",
                    index: i,
                });
            }
            *v = 1.0 + (log_budget + log_priors[k] + *v).min(max_log_evidence).exp();
        }
    }
    Ok(out)
}

/// A trained (or freshly initialized) model with flat named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub hp: Hyperparameters,
    pub n_features: usize,
    pub n_classes: usize,
    pub log_budget: f64,
    pub log_priors: Vec<f64>,
    /// Free-form provenance stored alongside checkpoints (split, scenario, dataset).
    pub metadata: BTreeMap<String, String>,
    params: Vec<(String, Tensor)>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect()).expect("shape")
}

/// Forward pass output, before any loss is attached.
enum Output {
    /// Propagated class probabilities.
    Probs(Var),
    /// Propagated pseudo-counts.
    Aggregated(Var),
    /// Feature-level pseudo-counts; pooling happens inside the loss.
    Pooled(Var),
}

/// Fixed inputs shared by every epoch of one training run.
pub struct Problem {
    features: Tensor,
    operator: Rc<SparseOperator>,
    iterations: usize,
    labels: Vec<usize>,
    train: Vec<usize>,
    val: Vec<usize>,
    pi: Option<SparseMatrix>,
    pi_train: Option<Rc<SparseOperator>>,
    pi_val: Option<Rc<SparseOperator>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Problem {
    pub fn new(kind: ModelKind, hp: &Hyperparameters, d: &GraphDataset) -> Result<Self> {
        let cfg = hp.ppr(kind, d.n_nodes());
        let normalized = propagation::normalize(&d.adjacency, cfg.normalization)?;
        let operator = SparseOperator::new(propagation::a_eps(&normalized, &cfg)?);
        let train = d.train_nodes();
        let val = d.val_nodes();
        let (pi, pi_train, pi_val) = if kind == ModelKind::LopGpn {
            let pi = propagation::ppr_matrix(&normalized, &cfg)?;
            let t = SparseOperator::new(pi.select_rows(&train));
            let v = SparseOperator::new(pi.select_rows(&val));
            (Some(pi), Some(t), Some(v))
        } else {
            (None, None, None)
        };
        Ok(Self {
            features: Tensor::from(&d.features),
            operator,
            iterations: cfg.iterations,
            labels: d.labels.clone(),
            train,
            val,
            pi,
            pi_train,
            pi_val,
        })
    }

    fn nodes(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }
}

/// One row per epoch of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_accuracy)
            ));
        }
        s
    }
}

/// Per-node prediction and uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePrediction {
    pub predicted: usize,
    pub report: UncertaintyReport,
}

impl Model {
    /// Fresh parameters for `kind`. Priors and the default certainty budget
    /// come from the training labels of `d`.
    pub fn init(kind: ModelKind, hp: Hyperparameters, d: &GraphDataset, seed: u64) -> Result<Self> {
        hp.validate()?;
        let train = d.train_nodes();
        if train.is_empty() {
            return Err(Error::Dataset("no training nodes".into()));
        }
        let k = d.n_classes;
        let mut counts = vec![0usize; k];
        for &i in &train {
            let y = d.labels[i];
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y, n_classes: k });
            }
            counts[y] += 1;
        }
        let log_priors = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    f64::MIN_POSITIVE.ln()
                } else {
                    (c as f64 / train.len() as f64).ln()
                }
            })
            .collect();
        let log_budget = hp.certainty_budget.unwrap_or(train.len() as f64).ln();

        let (dim, h) = (d.feature_dim(), hp.latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![
            ("enc.w1".to_string(), glorot(&mut rng, dim, hp.hidden_dim)),
            ("enc.b1".to_string(), Tensor::zeros(1, hp.hidden_dim)),
            ("enc.w2".to_string(), glorot(&mut rng, hp.hidden_dim, h)),
            ("enc.b2".to_string(), Tensor::zeros(1, h)),
        ];
        if kind.is_second_order() {
            for c in 0..k {
                for l in 0..hp.n_flows {
                    let z0 = Tensor::row((0..h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
                    params.push((format!("flow.{c}.{l}.z0"), z0));
                    params.push((format!("flow.{c}.{l}.a"), Tensor::scalar(rng.random_range(-0.5..0.5))));
                    params.push((format!("flow.{c}.{l}.b"), Tensor::scalar(rng.random_range(-0.5..0.5))));
                }
            }
        } else {
            params.push(("head.w".to_string(), glorot(&mut rng, h, k)));
            params.push(("head.b".to_string(), Tensor::zeros(1, k)));
        }
        Ok(Self {
            kind,
            hp,
            n_features: dim,
            n_classes: k,
            log_budget,
            log_priors,
            metadata: BTreeMap::new(),
            params,
        })
    }

    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn parameter_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces every parameter value; shapes must match.
    pub fn set_parameters(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for ((name, old), new) in self.params.iter_mut().zip(values) {
            if old.shape() != new.shape() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, got {:?}",
                    old.shape(),
                    new.shape()
                )));
            }
            *old = new;
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        kind: ModelKind,
        hp: Hyperparameters,
        n_features: usize,
        n_classes: usize,
        log_budget: f64,
        log_priors: Vec<f64>,
        metadata: BTreeMap<String, String>,
        params: Vec<(String, Tensor)>,
    ) -> Self {
        Self {
            kind,
            hp,
            n_features,
            n_classes,
            log_budget,
            log_priors,
            metadata,
            params,
        }
    }

    fn encode(&self, tape: &Tape, p: &[Var], x: Var) -> Result<Var> {
        let h1 = tape.relu(tape.add(tape.matmul(x, p[0])?, p[1])?);
        tape.add(tape.matmul(h1, p[2])?, p[3])
    }

    /// `ln p(z | class)` for every row of `z`, as an `(n, 1)` column.
    fn log_density(&self, tape: &Tape, p: &[Var], z: Var, class: usize, one: Var) -> Result<Var> {
        let h = self.hp.latent_dim as f64;
        let base = 4 + class * self.hp.n_flows * 3;
        let mut cur = z;
        let mut log_det: Option<Var> = None;
        for l in 0..self.hp.n_flows {
            let (z0, a, b) = (p[base + 3 * l], p[base + 3 * l + 1], p[base + 3 * l + 2]);
            let diff = tape.sub(cur, z0)?;
            let r = tape.sqrt(tape.add_scalar(tape.sum_rows(tape.mul(diff, diff)?), RADIUS_EPS))?;
            let alpha = tape.softplus(a);
            let beta = tape.sub(tape.softplus(b), alpha)?;
            let hr = tape.div(one, tape.add(r, alpha)?)?;
            let bh = tape.mul(beta, hr)?;
            cur = tape.add(cur, tape.mul(bh, diff)?)?;
            let t1 = tape.scale(tape.log(tape.add_scalar(bh, 1.0))?, h - 1.0);
            let t2 = tape.log(tape.add_scalar(tape.mul(bh, tape.mul(alpha, hr)?)?, 1.0))?;
            let ld = tape.add(t1, t2)?;
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        let base_lp = tape.add_scalar(tape.scale(tape.sum_rows(tape.mul(cur, cur)?), -0.5), -h * HALF_LN_2PI);
        match log_det {
            Some(ld) => tape.add(base_lp, ld),
            None => Ok(base_lp),
        }
    }

    /// Feature-level pseudo-counts on the tape.
    fn alphas_on_tape(&self, tape: &Tape, p: &[Var], x: Var) -> Result<Var> {
        let z = self.encode(tape, p, x)?;
        let one = tape.constant(Tensor::scalar(1.0));
        let cols = (0..self.n_classes)
            .map(|c| self.log_density(tape, p, z, c, one))
            .collect::<Result<Vec<_>>>()?;
        let log_density = tape.concat_cols(&cols)?;
        if let Some(i) = tape.with_value(log_density, |t| t.data().iter().position(|v| v.is_nan())) {
            return Err(Error::NonFinite {
                what: "class density",
                index: i / self.n_classes,
            });
        }
        let shift = self.log_budget + self.hp.resolved_log_evidence_scale();
        let offsets = tape.constant(Tensor::row(self.log_priors.iter().map(|lp| lp + shift).collect()));
        let log_ev = tape.clamp(tape.add(log_density, offsets)?, f64::NEG_INFINITY, self.hp.max_log_evidence);
        Ok(tape.add_scalar(tape.exp(log_ev), 1.0))
    }

    fn propagate(&self, tape: &Tape, problem: &Problem, v: Var) -> Result<Var> {
        let mut out = v;
        for _ in 0..problem.iterations {
            out = tape.spmm(&problem.operator, out)?;
        }
        Ok(out)
    }

    fn forward(&self, tape: &Tape, p: &[Var], problem: &Problem) -> Result<Output> {
        let x = tape.constant(problem.features.clone());
        match self.kind {
            ModelKind::AppnpBaseline => {
                let z = self.encode(tape, p, x)?;
                let logits = tape.add(tape.matmul(z, p[4])?, p[5])?;
                let probs = tape.softmax_rows(logits)?;
                Ok(Output::Probs(self.propagate(tape, problem, probs)?))
            }
            ModelKind::GpnRw | ModelKind::GpnSym => {
                let a = self.alphas_on_tape(tape, p, x)?;
                Ok(Output::Aggregated(self.propagate(tape, problem, a)?))
            }
            ModelKind::LopGpn => Ok(Output::Pooled(self.alphas_on_tape(tape, p, x)?)),
        }
    }

    fn loss_from(&self, tape: &Tape, out: &Output, problem: &Problem, split: Split) -> Result<Var> {
        let nodes = problem.nodes(split);
        let w = self.hp.entropy_weight;
        match *out {
            Output::Probs(p) => losses::loss_cross_entropy(tape, p, &problem.labels, nodes),
            Output::Aggregated(a) => losses::loss_gpn(tape, a, &problem.labels, nodes, w),
            Output::Pooled(a) => {
                let rows = match split {
                    Split::Train => problem.pi_train.as_ref(),
                    Split::Val => problem.pi_val.as_ref(),
                }
                .expect("pooling rows are built for lop_gpn");
                let ys: Vec<usize> = nodes.iter().map(|&i| problem.labels[i]).collect();
                losses::loss_lop(tape, a, rows, &ys, w)
            }
        }
    }

    /// Builds the training objective over `split` on `tape`, with `vars`
    /// standing in for the parameters (in [`Model::parameters`] order).
    pub fn build_loss(&self, tape: &Tape, vars: &[Var], problem: &Problem, split: Split) -> Result<Var> {
        let out = self.forward(tape, vars, problem)?;
        self.loss_from(tape, &out, problem, split)
    }

    /// Class predictions for `nodes` from a forward pass already on the tape.
    fn predictions(&self, tape: &Tape, out: &Output, problem: &Problem, nodes: &[usize]) -> Vec<usize> {
        match *out {
            Output::Probs(v) | Output::Aggregated(v) => {
                tape.with_value(v, |t| {
                    let k = t.cols();
                    nodes.iter().map(|&i| argmax(&t.data()[i * k..(i + 1) * k])).collect()
                })
            }
            Output::Pooled(a) => tape.with_value(a, |t| {
                let k = t.cols();
                let pi = problem.pi.as_ref().expect("pooling matrix");
                nodes
                    .iter()
                    .map(|&i| {
                        let mut mean = vec![0.0; k];
                        let (cols, vals) = pi.row(i);
                        for (&j, &w) in cols.iter().zip(vals) {
                            let row = &t.data()[j * k..(j + 1) * k];
                            let a0: f64 = row.iter().sum();
                            for (m, a) in mean.iter_mut().zip(row) {
                                *m += w * a / a0;
                            }
                        }
                        argmax(&mean)
                    })
                    .collect()
            }),
        }
    }

    /// Feature-level pseudo-counts `α^ft` for arbitrary feature rows.
    pub fn feature_alphas(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if !self.kind.is_second_order() {
            return Err(Error::invalid("the baseline has no pseudo-counts"));
        }
        self.check_features(features)?;
        let tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let x = tape.constant(Tensor::from(features));
        let a = self.alphas_on_tape(&tape, &p, x)?;
        Ok(tape.value(a).to_dense())
    }

    /// Encoder-head class probabilities before propagation (baseline only).
    pub fn class_probabilities(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if self.kind.is_second_order() {
            return Err(Error::invalid("only the baseline has a softmax head"));
        }
        self.check_features(features)?;
        let tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let x = tape.constant(Tensor::from(features));
        let z = self.encode(&tape, &p, x)?;
        let logits = tape.add(tape.matmul(z, p[4])?, p[5])?;
        Ok(tape.value(tape.softmax_rows(logits)?).to_dense())
    }

    fn check_features(&self, features: &DenseMatrix) -> Result<()> {
        if features.n_cols() != self.n_features {
            return Err(Error::ShapeMismatch {
                op: "features",
                left: (features.n_rows(), self.n_features),
                right: features.shape(),
            });
        }
        Ok(())
    }

    /// Per-node posteriors on the whole graph of `d`.
    pub fn posteriors(&self, d: &GraphDataset) -> Result<Vec<NodePosterior>> {
        let cfg = self.hp.ppr(self.kind, d.n_nodes());
        match self.kind {
            ModelKind::AppnpBaseline => {
                let probs = forward_appnp(&self.class_probabilities(&d.features)?, &d.adjacency, &cfg)?;
                Ok(probs.rows().map(|r| NodePosterior::Categorical(r.to_vec())).collect())
            }
            ModelKind::GpnRw | ModelKind::GpnSym => {
                let a = self.feature_alphas(&d.features)?;
                Ok(forward_gpn(&a, &d.adjacency, &cfg)?
                    .into_iter()
                    .map(NodePosterior::Dirichlet)
                    .collect())
            }
            ModelKind::LopGpn => {
                let a = self.feature_alphas(&d.features)?;
                Ok(forward_lop(&a, &d.adjacency, &cfg)?
                    .into_iter()
                    .map(NodePosterior::Mixture)
                    .collect())
            }
        }
    }
}

/// Predicted class and every uncertainty measure for each node of `d`.
pub fn predict_report(model: &Model, d: &GraphDataset) -> Result<Vec<NodePrediction>> {
    Ok(model
        .posteriors(d)?
        .iter()
        .map(|p| NodePrediction {
            predicted: p.predicted(),
            report: p.report(),
        })
        .collect())
}

fn accuracy(pred: &[usize], nodes: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(nodes).filter(|(p, &i)| **p == labels[i]).count();
    hits as f64 / nodes.len() as f64
}

/// Trains `kind` on the train mask of `d` with Adam, early-stopping on the
/// validation loss. Returns the parameters of the best validation epoch.
pub fn train(kind: ModelKind, d: &GraphDataset, hp: &Hyperparameters, seed: u64) -> Result<(Model, TrainLog)> {
    let mut model = Model::init(kind, *hp, d, seed)?;
    let problem = Problem::new(kind, hp, d)?;
    let mut params = model.parameter_tensors();
    let mut adam = Adam::new(
        AdamConfig {
            lr: hp.learning_rate,
            weight_decay: hp.weight_decay,
            ..Default::default()
        },
        &params.iter().map(Tensor::len).collect::<Vec<_>>(),
    );
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Vec<Tensor>, Option<f64>)> = None;
    let mut since_best = 0usize;
    let has_val = !problem.val.is_empty();

    for epoch in 0..hp.max_epochs {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let diverged = |e: Error| match e {
            Error::NonFinite { what: "loss", .. } => Error::Divergence { epoch },
            other => other,
        };
        let out = model.forward(&tape, &vars, &problem).map_err(diverged)?;
        let train_loss = model.loss_from(&tape, &out, &problem, Split::Train).map_err(diverged)?;
        let (val_loss, val_acc) = if has_val {
            let v = model.loss_from(&tape, &out, &problem, Split::Val).map_err(diverged)?;
            let pred = model.predictions(&tape, &out, &problem, &problem.val);
            (Some(tape.scalar_value(v)), Some(accuracy(&pred, &problem.val, &problem.labels)))
        } else {
            (None, None)
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: tape.scalar_value(train_loss),
            val_loss,
            val_accuracy: val_acc,
        });

        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, epoch, params.clone(), val_acc));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hp.patience {
                    break;
                }
            }
        }

        tape.backward(train_loss)?;
        let mut grads: Vec<Tensor> = vars
            .iter()
            .zip(&params)
            .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
            .collect();
        clip_grad_norm(&mut grads, hp.grad_clip);
        adam.step(&mut params, &grads);
    }

    if let Some((v, epoch, p, acc)) = best {
        params = p;
        log.best_epoch = Some(epoch);
        log.val_loss = Some(v);
        log.val_accuracy = acc;
    } else if let Some(last) = log.epochs.last() {
        log.best_epoch = Some(last.epoch);
    }
    model.set_parameters(params)?;
    Ok((model, log))
}

/// Accuracy of `model` on the test nodes of `d` that are not flagged OOD.
pub fn test_accuracy(model: &Model, d: &GraphDataset) -> Result<f64> {
    let preds = predict_report(model, d)?;
    let nodes: Vec<usize> = d.test_nodes().into_iter().filter(|&i| !d.is_ood(i)).collect();
    if nodes.is_empty() {
        return Err(Error::Dataset("no in-distribution test nodes".into()));
    }
    let pred: Vec<usize> = nodes.iter().map(|&i| preds[i].predicted).collect();
    Ok(accuracy(&pred, &nodes, &d.labels))
}

/// Two triangles joined by one edge, with two-dimensional features that
/// separate the classes. Small enough for exhaustive gradient checks.
pub fn six_node_fixture() -> GraphDataset {
    let edges = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)];
    let features = DenseMatrix::from_rows(&[
        vec![1.0, 0.2],
        vec![0.9, -0.1],
        vec![1.2, 0.0],
        vec![-1.0, 0.1],
        vec![-0.8, -0.2],
        vec![-1.1, 0.3],
    ])
    .expect("rectangular rows");
    GraphDataset {
        name: "six".into(),
        adjacency: crate::datasets::adjacency_from_edges(6, &edges).expect("valid edges"),
        features,
        labels: vec![0, 0, 0, 1, 1, 1],
        n_classes: 2,
        train_mask: vec![true, true, false, true, true, false],
        val_mask: vec![false, false, true, false, false, true],
        test_mask: vec![false; 6],
        ood_flags: None,
    }
}
