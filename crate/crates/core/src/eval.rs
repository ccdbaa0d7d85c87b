//! Accuracy-rejection curves, OOD detection AUC and multi-seed aggregation.

use std::fmt;
use std::str::FromStr;

use crate::datasets::GraphDataset;
use crate::error::{Error, Result};
use crate::models::NodePrediction;
use crate::second_order::UncertaintyReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    Tu,
    Au,
    Eu,
    EuPc,
    EuSo,
}

impl Measure {
    pub const ALL: [Measure; 5] = [Measure::Tu, Measure::Au, Measure::Eu, Measure::EuPc, Measure::EuSo];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Tu => "tu",
            Measure::Au => "au",
            Measure::Eu => "eu",
            Measure::EuPc => "eu_pc",
            Measure::EuSo => "eu_so",
        }
    }

    /// `None` when the report does not carry this measure (first-order models).
    pub fn of(self, r: &UncertaintyReport) -> Option<f64> {
        match self {
            Measure::Tu => Some(r.tu),
            Measure::Au => r.au,
            Measure::Eu => r.eu,
            Measure::EuPc => r.eu_pc,
            Measure::EuSo => r.eu_so,
        }
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Measure>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMeasure {
                name: s.to_string(),
                valid: Measure::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "),
            })
    }
}

/// `{0, 0.01, …, 0.99}`.
pub fn default_grid() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 100.0).collect()
}

/// Number of instances rejected at rate `p` out of `n`: `⌈p·n⌉`, robust to
/// rounding noise in `p·n` (0.07 · 100 rejects 7, not 8).
pub fn rejected_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcCurve {
    pub rejection_rates: Vec<f64>,
    pub accuracies: Vec<f64>,
}

/// Accuracy on the retained instances after rejecting the `⌈p·n⌉` most
/// uncertain ones, for every rate `p` in `grid`. Ties in uncertainty are
/// rejected in ascending instance order.
pub fn arc(uncertainties: &[f64], correct: &[bool], grid: &[f64]) -> Result<ArcCurve> {
    let n = uncertainties.len();
    if n == 0 {
        return Err(Error::invalid("accuracy-rejection curve needs at least one instance"));
    }
    if correct.len() != n {
        return Err(Error::ShapeMismatch {
            op: "arc",
            left: (n, 1),
            right: (correct.len(), 1),
        });
    }
    if let Some(i) = uncertainties.iter().position(|u| u.is_nan()) {
        return Err(Error::NonFinite {
            what: "uncertainty",
            index: i,
        });
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("rejection grid must be strictly increasing"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[b].total_cmp(&uncertainties[a]).then(a.cmp(&b)));
    // suffix[r] = correct count among order[r..]
    let mut suffix = vec![0usize; n + 1];
    for r in (0..n).rev() {
        suffix[r] = suffix[r + 1] + usize::from(correct[order[r]]);
    }
    let mut accuracies = Vec::with_capacity(grid.len());
    for &p in grid {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("rejection rate must lie in [0, 1), got {p}")));
        }
        let r = rejected_count(p, n);
        if r >= n {
            return Err(Error::invalid(format!(
                "rejection rate {p} rejects all {n} instances"
            )));
        }
        accuracies.push(suffix[r] as f64 / (n - r) as f64);
    }
    Ok(ArcCurve {
        rejection_rates: grid.to_vec(),
        accuracies,
    })
}

/// Mann–Whitney AUC with midranks: `P(ood > id) + ½ P(ood = id)`.
pub fn auc_roc(scores_ood: &[f64], scores_id: &[f64]) -> Result<f64> {
    if scores_ood.is_empty() || scores_id.is_empty() {
        return Err(Error::invalid("AUC needs at least one score on each side"));
    }
    if scores_ood.iter().chain(scores_id).any(|s| s.is_nan()) {
        return Err(Error::NonFinite { what: "score", index: 0 });
    }
    let mut all: Vec<(f64, bool)> = scores_ood
        .iter()
        .map(|&s| (s, true))
        .chain(scores_id.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (m, n) = (scores_ood.len() as f64, scores_id.len() as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

/// Mean and standard error (sample standard deviation over √n; 0 for n = 1).
pub fn aggregate(runs: &[f64]) -> Result<(f64, f64)> {
    if runs.is_empty() {
        return Err(Error::invalid("aggregate needs at least one run"));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    if runs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = runs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Uncertainties and correctness on the in-distribution test nodes.
pub fn test_outcomes(preds: &[NodePrediction], d: &GraphDataset, measure: Measure) -> Option<(Vec<f64>, Vec<bool>)> {
    let mut u = Vec::new();
    let mut c = Vec::new();
    for i in d.test_nodes() {
        if d.is_ood(i) {
            continue;
        }
        u.push(measure.of(&preds[i].report)?);
        c.push(preds[i].predicted == d.labels[i]);
    }
    Some((u, c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodResult {
    pub scenario: String,
    /// AUC per measure the model reports.
    pub auc: Vec<(Measure, f64)>,
    pub id_accuracy: f64,
}

/// AUC of flagged against unflagged test nodes for every measure (higher
/// uncertainty means more likely OOD), plus accuracy on unflagged test nodes.
pub fn ood_evaluate(preds: &[NodePrediction], d: &GraphDataset, measures: &[Measure]) -> Result<OodResult> {
    if preds.len() != d.n_nodes() {
        return Err(Error::ShapeMismatch {
            op: "ood_evaluate",
            left: (d.n_nodes(), 1),
            right: (preds.len(), 1),
        });
    }
    if d.ood_flags.is_none() {
        return Err(Error::Dataset("dataset has no OOD flags".into()));
    }
    let test = d.test_nodes();
    let (ood, id): (Vec<usize>, Vec<usize>) = test.iter().partition(|&&i| d.is_ood(i));
    if ood.is_empty() {
        return Err(Error::Dataset("no flagged test nodes".into()));
    }
    if id.is_empty() {
        return Err(Error::Dataset("no in-distribution test nodes".into()));
    }
    let mut auc = Vec::new();
    for &m in measures {
        let s = |nodes: &[usize]| nodes.iter().map(|&i| m.of(&preds[i].report)).collect::<Option<Vec<f64>>>();
        if let (Some(o), Some(i)) = (s(&ood), s(&id)) {
            auc.push((m, auc_roc(&o, &i)?));
        }
    }
    let hits = id.iter().filter(|&&i| preds[i].predicted == d.labels[i]).count();
    Ok(OodResult {
        scenario: d.name.rsplit('+').next().unwrap_or_default().to_string(),
        auc,
        id_accuracy: hits as f64 / id.len() as f64,
    })
}

pub const ARC_HEADER: &str = "dataset,model,measure,seed_count,rejection_rate,acc_mean,acc_se";
pub const OOD_HEADER: &str = "dataset,model,scenario,measure,auc_mean,auc_se,id_acc_mean,id_acc_se";

#[derive(Debug, Clone, PartialEq)]
pub struct ArcRow {
    pub dataset: String,
    pub model: String,
    pub measure: String,
    pub seed_count: usize,
    pub rejection_rate: f64,
    pub acc_mean: f64,
    pub acc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub dataset: String,
    pub model: String,
    pub scenario: String,
    pub measure: String,
    pub auc_mean: f64,
    pub auc_se: f64,
    pub id_acc_mean: f64,
    pub id_acc_se: f64,
}

/// Aggregates one ARC per seed into rows. All curves must share a grid.
pub fn arc_rows(dataset: &str, model: &str, measure: Measure, curves: &[ArcCurve]) -> Result<Vec<ArcRow>> {
    let first = curves.first().ok_or_else(|| Error::invalid("no curves to aggregate"))?;
    if curves.iter().any(|c| c.rejection_rates != first.rejection_rates) {
        return Err(Error::invalid("curves use different rejection grids"));
    }
    first
        .rejection_rates
        .iter()
        .enumerate()
        .map(|(g, &p)| {
            let (acc_mean, acc_se) = aggregate(&curves.iter().map(|c| c.accuracies[g]).collect::<Vec<_>>())?;
            Ok(ArcRow {
                dataset: dataset.to_string(),
                model: model.to_string(),
                measure: measure.name().to_string(),
                seed_count: curves.len(),
                rejection_rate: p,
                acc_mean,
                acc_se,
            })
        })
        .collect()
}

/// Aggregates one result per seed into one row per measure.
pub fn ood_rows(dataset: &str, model: &str, results: &[OodResult]) -> Result<Vec<OodRow>> {
    let first = results.first().ok_or_else(|| Error::invalid("no OOD results to aggregate"))?;
    let (id_acc_mean, id_acc_se) = aggregate(&results.iter().map(|r| r.id_accuracy).collect::<Vec<_>>())?;
    first
        .auc
        .iter()
        .enumerate()
        .map(|(k, &(m, _))| {
            let vals = results
                .iter()
                .map(|r| r.auc.get(k).filter(|a| a.0 == m).map(|a| a.1))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::invalid("OOD results report different measures"))?;
            let (auc_mean, auc_se) = aggregate(&vals)?;
            Ok(OodRow {
                dataset: dataset.to_string(),
                model: model.to_string(),
                scenario: first.scenario.clone(),
                measure: m.name().to_string(),
                auc_mean,
                auc_se,
                id_acc_mean,
                id_acc_se,
            })
        })
        .collect()
}

fn check_field(s: &str) -> &str {
    assert!(!s.contains([',', '\n', '"']), "CSV field {s:?} needs no quoting");
    s
}

pub fn arc_csv(rows: &[ArcRow]) -> String {
    let mut out = format!("{ARC_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            check_field(&r.dataset),
            check_field(&r.model),
            check_field(&r.measure),
            r.seed_count,
            r.rejection_rate,
            r.acc_mean,
            r.acc_se
        ));
    }
    out
}

pub fn ood_csv(rows: &[OodRow]) -> String {
    let mut out = format!("{OOD_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            check_field(&r.dataset),
            check_field(&r.model),
            check_field(&r.scenario),
            check_field(&r.measure),
            r.auc_mean,
            r.auc_se,
            r.id_acc_mean,
            r.id_acc_se
        ));
    }
    out
}

fn csv_records<'a>(text: &'a str, header: &str, width: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let path = std::path::Path::new("<csv>");
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header {header:?}"),
        }),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() == width {
                Ok((i + 1, f))
            } else {
                Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("expected {width} fields, got {}", f.len()),
                })
            }
        })
        .collect()
}

fn field<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        path: "<csv>".into(),
        line,
        msg: format!("bad number {s:?}"),
    })
}

pub fn parse_arc_csv(text: &str) -> Result<Vec<ArcRow>> {
    csv_records(text, ARC_HEADER, 7)?
        .into_iter()
        .map(|(line, f)| {
            Ok(ArcRow {
                dataset: f[0].into(),
                model: f[1].into(),
                measure: f[2].into(),
                seed_count: field(line, f[3])?,
                rejection_rate: field(line, f[4])?,
                acc_mean: field(line, f[5])?,
                acc_se: field(line, f[6])?,
            })
        })
        .collect()
}

pub fn parse_ood_csv(text: &str) -> Result<Vec<OodRow>> {
    csv_records(text, OOD_HEADER, 8)?
        .into_iter()
        .map(|(line, f)| {
            Ok(OodRow {
                dataset: f[0].into(),
                model: f[1].into(),
                scenario: f[2].into(),
                measure: f[3].into(),
                auc_mean: field(line, f[4])?,
                auc_se: field(line, f[5])?,
                id_acc_mean: field(line, f[6])?,
                id_acc_se: field(line, f[7])?,
            })
        })
        .collect()
}
