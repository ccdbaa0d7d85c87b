//! Experiment configuration and the train / ARC / OOD pipeline shared by the
//! command line and the end-to-end tests.
//!
//! A configuration is a flat `key = value` file; every key can also be set
//! individually (the CLI maps its flags onto [`ExperimentConfig::set`]).
//! Runs are keyed by training group (`clean`, or a scenario that changes the
//! training labels), model kind and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::datasets::{self, GraphDataset, OodScenario, SbmConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{self, ArcCurve, Measure, OodResult};
use crate::models::{checkpoint, predict_report, train, Hyperparameters, Model, ModelKind, TrainLog};

pub const CLEAN: &str = "clean";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Synthetic preset, regenerated with each run seed.
    Preset(String),
    /// Dataset directory; split with each run seed unless it ships masks.
    Dir(PathBuf),
}

impl DatasetSource {
    pub fn parse(s: &str) -> Self {
        if SbmConfig::preset(s, 0).is_ok() {
            DatasetSource::Preset(s.to_string())
        } else {
            DatasetSource::Dir(PathBuf::from(s))
        }
    }

    /// Name used in report rows.
    pub fn label(&self) -> String {
        match self {
            DatasetSource::Preset(p) => p.clone(),
            DatasetSource::Dir(d) => d
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_else(|| d.display().to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub models: Vec<ModelKind>,
    pub hp: Hyperparameters,
    /// The seed field is replaced by the run seed.
    pub split: SplitSpec,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<OodScenario>,
    pub measures: Vec<Measure>,
    pub grid: Vec<f64>,
    /// Worker threads for independent runs; 0 uses all available cores.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Preset("sbm-small".into()),
            models: ModelKind::ALL.to_vec(),
            hp: Hyperparameters::default(),
            split: SplitSpec::default(),
            seeds: vec![0],
            scenarios: OodScenario::NAMES.iter().map(|n| n.parse().expect("known")).collect(),
            measures: Measure::ALL.to_vec(),
            grid: eval::default_grid(),
            threads: 0,
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

fn opt_num(key: &str, v: &str) -> Result<Option<f64>> {
    match v {
        "none" | "auto" | "" => Ok(None),
        _ => num(key, v).map(Some),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 29] = [
        "dataset",
        "models",
        "seeds",
        "scenarios",
        "measures",
        "grid",
        "threads",
        "train_fraction",
        "val_fraction",
        "test_fraction",
        "stratified",
        "node_fraction",
        "keep_prob",
        "leave_out",
        "hidden_dim",
        "latent_dim",
        "n_flows",
        "entropy_weight",
        "learning_rate",
        "weight_decay",
        "epochs",
        "patience",
        "grad_clip",
        "teleport",
        "iterations",
        "sparsify_delta",
        "certainty_budget",
        "log_evidence_scale",
        "max_log_evidence",
    ];

    /// Sets one key. Unknown keys are an error listing the valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let hp = &mut self.hp;
        match key {
            "dataset" => self.dataset = DatasetSource::parse(v),
            "models" => self.models = list(v, str::parse)?,
            "seeds" => self.seeds = list(v, |s| num(key, s))?,
            "scenarios" => {
                let old = std::mem::take(&mut self.scenarios);
                self.scenarios = list(v, |s| {
                    let fresh: OodScenario = s.parse()?;
                    // keep parameters set earlier for the same scenario kind
                    Ok(old.iter().find(|o| o.name() == fresh.name()).cloned().unwrap_or(fresh))
                })?;
            }
            "measures" => self.measures = Measure::parse_list(v)?,
            "grid" => self.grid = list(v, |s| num(key, s))?,
            "threads" => self.threads = num(key, v)?,
            "train_fraction" => self.split.train_fraction = num(key, v)?,
            "val_fraction" => self.split.val_fraction = num(key, v)?,
            "test_fraction" => self.split.test_fraction = num(key, v)?,
            "stratified" => self.split.stratified = num(key, v)?,
            "node_fraction" => {
                let f: f64 = num(key, v)?;
                for s in &mut self.scenarios {
                    match s {
                        OodScenario::BernoulliDropout { node_fraction, .. }
                        | OodScenario::GaussianFeatures { node_fraction, .. } => *node_fraction = f,
                        OodScenario::LeaveOutClasses { .. } => {}
                    }
                }
            }
            "keep_prob" => {
                let p: f64 = num(key, v)?;
                for s in &mut self.scenarios {
                    if let OodScenario::BernoulliDropout { keep_prob, .. } = s {
                        *keep_prob = p;
                    }
                }
            }
            "leave_out" => {
                let classes = match v {
                    "default" | "none" | "" => None,
                    _ => Some(list(v, |s| num(key, s))?),
                };
                for s in &mut self.scenarios {
                    if let OodScenario::LeaveOutClasses { classes: c } = s {
                        *c = classes.clone();
                    }
                }
            }
            "hidden_dim" => hp.hidden_dim = num(key, v)?,
            "latent_dim" => hp.latent_dim = num(key, v)?,
            "n_flows" => hp.n_flows = num(key, v)?,
            "entropy_weight" => hp.entropy_weight = num(key, v)?,
            "learning_rate" => hp.learning_rate = num(key, v)?,
            "weight_decay" => hp.weight_decay = num(key, v)?,
            "epochs" => hp.max_epochs = num(key, v)?,
            "patience" => hp.patience = num(key, v)?,
            "grad_clip" => hp.grad_clip = num(key, v)?,
            "teleport" => hp.teleport = num(key, v)?,
            "iterations" => hp.iterations = num(key, v)?,
            "sparsify_delta" => hp.sparsify_delta = opt_num(key, v)?,
            "certainty_budget" => hp.certainty_budget = opt_num(key, v)?,
            "log_evidence_scale" => hp.log_evidence_scale = opt_num(key, v)?,
            "max_log_evidence" => hp.max_log_evidence = num(key, v)?,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown config key {key:?}; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, path: &Path, text: &str) -> Result<()> {
        // `scenarios` first so scenario parameters land on the right list
        let kv = datasets::parse_key_values(path, text)?;
        if let Some(v) = kv.get("scenarios") {
            self.set("scenarios", v)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| k.as_str() != "scenarios") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(path, &text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("at least one model is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.measures.is_empty() {
            return Err(Error::invalid("at least one measure is required"));
        }
        if self.grid.is_empty() || self.grid.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::invalid("rejection grid must be non-empty with rates in [0, 1)"));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("rejection grid must be strictly increasing"));
        }
        self.split.validate()?;
        self.hp.validate()
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let hp = &self.hp;
        let find = |name: &str| self.scenarios.iter().find(|s| s.name() == name);
        let node_fraction = self
            .scenarios
            .iter()
            .find_map(|s| match s {
                OodScenario::BernoulliDropout { node_fraction, .. } | OodScenario::GaussianFeatures { node_fraction, .. } => {
                    Some(*node_fraction)
                }
                OodScenario::LeaveOutClasses { .. } => None,
            })
            .unwrap_or(datasets::DEFAULT_NODE_FRACTION);
        let keep_prob = match find("bernoulli_dropout") {
            Some(OodScenario::BernoulliDropout { keep_prob, .. }) => *keep_prob,
            _ => datasets::DEFAULT_KEEP_PROB,
        };
        let leave_out = match find("leave_out_classes") {
            Some(OodScenario::LeaveOutClasses { classes: Some(c) }) => join(c),
            _ => "default".into(),
        };
        let dataset = match &self.dataset {
            DatasetSource::Preset(p) => p.clone(),
            DatasetSource::Dir(d) => d.display().to_string(),
        };
        let values: [String; 29] = [
            dataset,
            join(&self.models),
            join(&self.seeds),
            join(&self.scenarios),
            join(&self.measures),
            join(&self.grid),
            self.threads.to_string(),
            self.split.train_fraction.to_string(),
            self.split.val_fraction.to_string(),
            self.split.test_fraction.to_string(),
            self.split.stratified.to_string(),
            node_fraction.to_string(),
            keep_prob.to_string(),
            leave_out,
            hp.hidden_dim.to_string(),
            hp.latent_dim.to_string(),
            hp.n_flows.to_string(),
            hp.entropy_weight.to_string(),
            hp.learning_rate.to_string(),
            hp.weight_decay.to_string(),
            hp.max_epochs.to_string(),
            hp.patience.to_string(),
            hp.grad_clip.to_string(),
            hp.teleport.to_string(),
            hp.iterations.to_string(),
            fmt_opt(hp.sparsify_delta),
            fmt_opt(hp.certainty_budget),
            fmt_opt(hp.log_evidence_scale),
            hp.max_log_evidence.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The split, in-distribution dataset for `seed`.
    pub fn clean_dataset(&self, seed: u64) -> Result<GraphDataset> {
        let d = match &self.dataset {
            DatasetSource::Preset(p) => datasets::synth_sbm(&SbmConfig::preset(p, seed)?)?,
            DatasetSource::Dir(dir) => datasets::load(dir)?,
        };
        let has_masks = d.train_mask.iter().any(|&m| m);
        if has_masks {
            Ok(d)
        } else {
            datasets::split(&d, &SplitSpec { seed, ..self.split })
        }
    }

    /// Training groups: the clean split plus every scenario that changes the
    /// label space and therefore needs its own models.
    pub fn training_groups(&self) -> Vec<Option<OodScenario>> {
        std::iter::once(None)
            .chain(self.scenarios.iter().filter(|s| !s.perturbs_features_only()).cloned().map(Some))
            .collect()
    }

    fn group_for(scenario: &OodScenario) -> Option<OodScenario> {
        (!scenario.perturbs_features_only()).then(|| scenario.clone())
    }

    pub fn training_dataset(&self, group: Option<&OodScenario>, seed: u64) -> Result<GraphDataset> {
        let clean = self.clean_dataset(seed)?;
        match group {
            None => Ok(clean),
            Some(s) => datasets::apply_ood(&clean, &s.clone().with_seed(seed)),
        }
    }

    pub fn ood_dataset(&self, scenario: &OodScenario, seed: u64) -> Result<GraphDataset> {
        datasets::apply_ood(&self.clean_dataset(seed)?, &scenario.clone().with_seed(seed))
    }

    fn worker_count(&self, jobs: usize) -> usize {
        let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let t = if self.threads == 0 { avail } else { self.threads };
        t.clamp(1, jobs.max(1))
    }
}

pub fn group_label(group: Option<&OodScenario>) -> &'static str {
    group.map_or(CLEAN, |s| s.name())
}

/// `runs/<group>/<model>/seed<k>.ckpt` under `root`.
pub fn checkpoint_path(root: &Path, group: Option<&OodScenario>, kind: ModelKind, seed: u64) -> PathBuf {
    root.join("runs")
        .join(group_label(group))
        .join(kind.name())
        .join(format!("seed{seed}.ckpt"))
}

/// Training-log CSV next to the checkpoint.
pub fn log_path(root: &Path, group: Option<&OodScenario>, kind: ModelKind, seed: u64) -> PathBuf {
    checkpoint_path(root, group, kind, seed).with_extension("log.csv")
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Key of one trained model.
pub type RunKey = (Option<OodScenario>, ModelKind, u64);

pub struct TrainedRun {
    pub key: RunKey,
    pub model: Model,
    pub log: TrainLog,
}

fn run_sort_key(key: &RunKey) -> (&'static str, ModelKind, u64) {
    (group_label(key.0.as_ref()), key.1, key.2)
}

/// Every (group, model, seed) job implied by `cfg`.
pub fn planned_runs(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut runs = Vec::new();
    for g in cfg.training_groups() {
        for &kind in &cfg.models {
            for &seed in &cfg.seeds {
                runs.push((g.clone(), kind, seed));
            }
        }
    }
    runs
}

/// Trains one model and stamps its provenance into the checkpoint metadata.
pub fn train_run(cfg: &ExperimentConfig, key: &RunKey) -> Result<TrainedRun> {
    let (group, kind, seed) = key;
    let d = cfg.training_dataset(group.as_ref(), *seed)?;
    let (mut model, log) = train(*kind, &d, &cfg.hp, *seed)?;
    let m = &mut model.metadata;
    m.insert("dataset".into(), cfg.dataset.label());
    m.insert("dataset_instance".into(), d.name.clone());
    m.insert("seed".into(), seed.to_string());
    m.insert("group".into(), group_label(group.as_ref()).into());
    m.insert(
        "split".into(),
        format!(
            "{},{},{},{}",
            cfg.split.train_fraction, cfg.split.val_fraction, cfg.split.test_fraction, cfg.split.stratified
        ),
    );
    if let Some(e) = log.best_epoch {
        m.insert("best_epoch".into(), e.to_string());
    }
    Ok(TrainedRun {
        key: key.clone(),
        model,
        log,
    })
}

/// Trains every planned run, in parallel across runs.
pub fn train_all(cfg: &ExperimentConfig) -> Result<Vec<TrainedRun>> {
    cfg.validate()?;
    let jobs = planned_runs(cfg);
    parallel_map(&jobs, cfg.worker_count(jobs.len()), |k| train_run(cfg, k))
        .into_iter()
        .collect()
}

/// Trained models indexed by run key.
pub struct ModelStore {
    models: BTreeMap<(&'static str, ModelKind, u64), Model>,
}

impl ModelStore {
    pub fn from_runs(runs: Vec<TrainedRun>) -> Self {
        Self {
            models: runs.into_iter().map(|r| (run_sort_key(&r.key), r.model)).collect(),
        }
    }

    /// Loads every checkpoint `cfg` expects under `root`.
    pub fn load(cfg: &ExperimentConfig, root: &Path, groups: &[Option<OodScenario>]) -> Result<Self> {
        let mut models = BTreeMap::new();
        for g in groups {
            for &kind in &cfg.models {
                for &seed in &cfg.seeds {
                    let path = checkpoint_path(root, g.as_ref(), kind, seed);
                    if !path.exists() {
                        return Err(Error::Io {
                            path: path.clone(),
                            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing checkpoint"),
                        });
                    }
                    let m = checkpoint::load(&path)?;
                    if m.kind != kind {
                        return Err(Error::Checkpoint(format!(
                            "{} holds a {} model, expected {kind}",
                            path.display(),
                            m.kind
                        )));
                    }
                    models.insert((group_label(g.as_ref()), kind, seed), m);
                }
            }
        }
        Ok(Self { models })
    }

    pub fn get(&self, group: Option<&OodScenario>, kind: ModelKind, seed: u64) -> Result<&Model> {
        self.models
            .get(&(group_label(group), kind, seed))
            .ok_or_else(|| Error::Checkpoint(format!("no {kind} model for seed {seed} in group {}", group_label(group))))
    }
}

/// ARC rows over test nodes of the clean split, aggregated over seeds.
pub fn arc_report(cfg: &ExperimentConfig, store: &ModelStore) -> Result<Vec<eval::ArcRow>> {
    cfg.validate()?;
    let jobs: Vec<(ModelKind, u64)> = cfg
        .models
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let per_run = parallel_map(&jobs, cfg.worker_count(jobs.len()), |&(kind, seed)| -> Result<Vec<Option<ArcCurve>>> {
        let d = cfg.clean_dataset(seed)?;
        let preds = predict_report(store.get(None, kind, seed)?, &d)?;
        cfg.measures
            .iter()
            .map(|&m| match eval::test_outcomes(&preds, &d, m) {
                Some((u, c)) => eval::arc(&u, &c, &cfg.grid).map(Some),
                None => Ok(None),
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let label = cfg.dataset.label();
    let mut rows = Vec::new();
    for (mi, &kind) in cfg.models.iter().enumerate() {
        let runs = &per_run[mi * cfg.seeds.len()..(mi + 1) * cfg.seeds.len()];
        for (k, &measure) in cfg.measures.iter().enumerate() {
            let curves: Option<Vec<ArcCurve>> = runs.iter().map(|r| r[k].clone()).collect();
            if let Some(curves) = curves {
                rows.extend(eval::arc_rows(&label, kind.name(), measure, &curves)?);
            }
        }
    }
    Ok(rows)
}

/// OOD rows for every configured scenario, aggregated over seeds.
pub fn ood_report(cfg: &ExperimentConfig, store: &ModelStore) -> Result<Vec<eval::OodRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, ModelKind, u64)> = (0..cfg.scenarios.len())
        .flat_map(|s| cfg.models.iter().flat_map(move |&k| cfg.seeds.iter().map(move |&seed| (s, k, seed))))
        .collect();
    let results = parallel_map(&jobs, cfg.worker_count(jobs.len()), |&(s, kind, seed)| -> Result<OodResult> {
        let scenario = &cfg.scenarios[s];
        let d = cfg.ood_dataset(scenario, seed)?;
        let model = store.get(ExperimentConfig::group_for(scenario).as_ref(), kind, seed)?;
        let mut r = eval::ood_evaluate(&predict_report(model, &d)?, &d, &cfg.measures)?;
        r.scenario = scenario.name().to_string();
        Ok(r)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let label = cfg.dataset.label();
    let mut rows = Vec::new();
    let per = cfg.seeds.len();
    for (res, job) in results.chunks(per).zip(jobs.chunks(per)) {
        rows.extend(eval::ood_rows(&label, job[0].1.name(), res)?);
    }
    Ok(rows)
}

/// Training groups the OOD report needs models for.
pub fn ood_groups(cfg: &ExperimentConfig) -> Vec<Option<OodScenario>> {
    let mut groups: Vec<Option<OodScenario>> = Vec::new();
    for s in &cfg.scenarios {
        let g = ExperimentConfig::group_for(s);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    groups
}

/// Writes checkpoints and logs for `runs` under `root`.
pub fn save_runs(root: &Path, runs: &[TrainedRun]) -> Result<()> {
    for r in runs {
        let (g, kind, seed) = &r.key;
        let path = checkpoint_path(root, g.as_ref(), *kind, *seed);
        let dir = path.parent().expect("checkpoint has a parent directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&r.model, &path)?;
        let log = log_path(root, g.as_ref(), *kind, *seed);
        std::fs::write(&log, r.log.to_csv()).map_err(|e| Error::io(&log, e))?;
    }
    Ok(())
}

/// In-memory result of a full experiment.
pub struct Reports {
    pub arc_csv: String,
    pub ood_csv: String,
    pub runs: Vec<TrainedRun>,
}

/// Trains everything `cfg` describes and returns both CSV reports.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Reports> {
    let runs = train_all(cfg)?;
    let store = ModelStore {
        models: runs.iter().map(|r| (run_sort_key(&r.key), r.model.clone())).collect(),
    };
    let arc_csv = eval::arc_csv(&arc_report(cfg, &store)?);
    let ood_csv = eval::ood_csv(&ood_report(cfg, &store)?);
    Ok(Reports { arc_csv, ood_csv, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        for (k, v) in [
            ("epochs", "3"),
            ("hidden_dim", "6"),
            ("latent_dim", "3"),
            ("n_flows", "1"),
            ("seeds", "0,1"),
            ("grid", "0,0.5"),
            ("train_fraction", "0.1"),
            ("test_fraction", "0.75"),
        ] {
            c.set(k, v).unwrap();
        }
        c
    }

    #[test]
    fn config_text_round_trips() {
        let mut c = tiny();
        c.set("scenarios", "bernoulli_dropout,leave_out_classes").unwrap();
        c.set("keep_prob", "0.3").unwrap();
        c.set("leave_out", "0").unwrap();
        c.set("sparsify_delta", "0.001").unwrap();
        let text = c.to_text();
        let mut back = ExperimentConfig::default();
        back.apply_text(Path::new("cfg"), &text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let e = ExperimentConfig::default().set("colour", "red").unwrap_err().to_string();
        assert!(e.contains("teleport") && e.contains("seeds"), "{e}");
        assert!(ExperimentConfig::default().set("measures", "tu,bogus").is_err());
    }

    #[test]
    fn training_groups_cover_label_changing_scenarios() {
        let c = ExperimentConfig::default();
        let g = c.training_groups();
        assert_eq!(g.len(), 2);
        assert!(g[0].is_none());
        assert_eq!(g[1].as_ref().unwrap().name(), "leave_out_classes");
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<u64> = (0..50).collect();
        assert_eq!(parallel_map(&v, 4, |x| x * x), v.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_run_is_deterministic_and_thread_independent() {
        let mut c = tiny();
        c.threads = 1;
        let a = run_all(&c).unwrap();
        c.threads = 4;
        let b = run_all(&c).unwrap();
        assert_eq!(a.arc_csv, b.arc_csv);
        assert_eq!(a.ood_csv, b.ood_csv);
        let rows = eval::parse_arc_csv(&a.arc_csv).unwrap();
        // appnp reports only tu; second-order models report all five measures
        assert_eq!(rows.len(), 2 * (1 + 3 * 5));
        assert!(rows.iter().all(|r| r.seed_count == 2));
        let ood = eval::parse_ood_csv(&a.ood_csv).unwrap();
        assert_eq!(ood.len(), 3 * (1 + 3 * 5));
    }
}
