use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lopgpn::datasets::{self, SbmConfig, SplitSpec};
use lopgpn::eval;
use lopgpn::experiment::{self, ExperimentConfig, ModelStore};
use lopgpn::{selfcheck, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "lopgpn", version, about = "Second-order uncertainty for graph node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stochastic-block-model dataset directory.
    Synth(SynthArgs),
    /// Train every configured model and seed; writes runs/ and train.config.txt.
    Train(RunArgs),
    /// Accuracy-rejection curves from trained checkpoints; writes arc.csv.
    Arc(RunArgs),
    /// OOD detection AUC from trained checkpoints; writes ood.csv.
    Ood(RunArgs),
    /// Run the built-in numerical checks; exits nonzero if any fails.
    Selfcheck {
        /// Smaller sample counts (still deterministic).
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Named preset; explicit parameters below override its values.
    #[arg(long, default_value = "sbm-small")]
    preset: String,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    intra_p: Option<f64>,
    #[arg(long)]
    inter_p: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a stratified train/val/test split drawn with --seed.
    #[arg(long)]
    split: bool,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty directory.
    #[arg(long)]
    force: bool,
}

fn default_of(key: &str) -> String {
    if key == "grid" {
        return "0,0.01,...,0.99".into();
    }
    ExperimentConfig::default()
        .to_text()
        .lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
        .unwrap_or_default()
}

fn hint(key: &str, text: &str) -> String {
    format!("{text} [default: {}]", default_of(key))
}

#[derive(Args)]
struct Overrides {
    /// Synthetic preset name or dataset directory.
    #[arg(long, help = hint("dataset", "Synthetic preset name or dataset directory"))]
    dataset: Option<String>,
    #[arg(long, help = hint("models", "Comma-separated model kinds"))]
    models: Option<String>,
    #[arg(long, help = hint("seeds", "Comma-separated seeds"))]
    seeds: Option<String>,
    #[arg(long, help = hint("scenarios", "Comma-separated OOD scenarios"))]
    scenarios: Option<String>,
    #[arg(long, help = hint("measures", "Comma-separated uncertainty measures"))]
    measures: Option<String>,
    #[arg(long, help = hint("grid", "Comma-separated rejection rates"))]
    grid: Option<String>,
    #[arg(long, help = hint("threads", "Worker threads, 0 for all cores"))]
    threads: Option<String>,
    #[arg(long, help = hint("train_fraction", "Training fraction of nodes"))]
    train_fraction: Option<String>,
    #[arg(long, help = hint("val_fraction", "Validation fraction of nodes"))]
    val_fraction: Option<String>,
    #[arg(long, help = hint("test_fraction", "Test fraction of nodes"))]
    test_fraction: Option<String>,
    #[arg(long, help = hint("stratified", "Stratify the split by class"))]
    stratified: Option<String>,
    #[arg(long, help = hint("node_fraction", "Fraction of nodes perturbed by feature scenarios"))]
    node_fraction: Option<String>,
    #[arg(long, help = hint("keep_prob", "Keep probability of bernoulli_dropout"))]
    keep_prob: Option<String>,
    #[arg(long, help = hint("leave_out", "Classes held out by leave_out_classes"))]
    leave_out: Option<String>,
    #[arg(long, help = hint("hidden_dim", "Encoder hidden width"))]
    hidden_dim: Option<String>,
    #[arg(long, help = hint("latent_dim", "Latent dimension"))]
    latent_dim: Option<String>,
    #[arg(long, help = hint("n_flows", "Radial flows per class"))]
    n_flows: Option<String>,
    #[arg(long, help = hint("entropy_weight", "Entropy regularization weight"))]
    entropy_weight: Option<String>,
    #[arg(long, help = hint("learning_rate", "Adam learning rate"))]
    learning_rate: Option<String>,
    #[arg(long, help = hint("weight_decay", "L2 weight decay"))]
    weight_decay: Option<String>,
    #[arg(long, help = hint("epochs", "Maximum training epochs"))]
    epochs: Option<String>,
    #[arg(long, help = hint("patience", "Early-stopping patience in epochs"))]
    patience: Option<String>,
    #[arg(long, help = hint("grad_clip", "Gradient norm clip"))]
    grad_clip: Option<String>,
    #[arg(long, help = hint("teleport", "Teleport probability"))]
    teleport: Option<String>,
    #[arg(long, help = hint("iterations", "Propagation steps"))]
    iterations: Option<String>,
    #[arg(long, help = hint("sparsify_delta", "Propagation sparsification threshold, none = automatic"))]
    sparsify_delta: Option<String>,
    #[arg(long, help = hint("certainty_budget", "Certainty budget, none = training node count"))]
    certainty_budget: Option<String>,
    #[arg(long, help = hint("log_evidence_scale", "Log-evidence offset, none = 0.5 * latent_dim * ln(4 pi)"))]
    log_evidence_scale: Option<String>,
    #[arg(long, help = hint("max_log_evidence", "Upper clamp on log-evidence"))]
    max_log_evidence: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 29] {
        [
            ("dataset", &self.dataset),
            ("models", &self.models),
            ("seeds", &self.seeds),
            ("scenarios", &self.scenarios),
            ("measures", &self.measures),
            ("grid", &self.grid),
            ("threads", &self.threads),
            ("train_fraction", &self.train_fraction),
            ("val_fraction", &self.val_fraction),
            ("test_fraction", &self.test_fraction),
            ("stratified", &self.stratified),
            ("node_fraction", &self.node_fraction),
            ("keep_prob", &self.keep_prob),
            ("leave_out", &self.leave_out),
            ("hidden_dim", &self.hidden_dim),
            ("latent_dim", &self.latent_dim),
            ("n_flows", &self.n_flows),
            ("entropy_weight", &self.entropy_weight),
            ("learning_rate", &self.learning_rate),
            ("weight_decay", &self.weight_decay),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("grad_clip", &self.grad_clip),
            ("teleport", &self.teleport),
            ("iterations", &self.iterations),
            ("sparsify_delta", &self.sparsify_delta),
            ("certainty_budget", &self.certainty_budget),
            ("log_evidence_scale", &self.log_evidence_scale),
            ("max_log_evidence", &self.max_log_evidence),
        ]
    }
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags and --set override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Extra `key=value` override, repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Directory holding runs/ from `train`; defaults to --out.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Allow overwriting existing outputs.
    #[arg(long)]
    force: bool,
}

const TRAIN_CONFIG: &str = "train.config.txt";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, text: &str) -> lopgpn::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn non_empty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

impl RunArgs {
    /// Defaults, then the config file (or the one left by `train` in the runs
    /// directory), then flags, then `--set`.
    fn resolve(&self, inherit_train_config: bool) -> lopgpn::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let base = match &self.config {
            Some(p) => Some(p.clone()),
            None if inherit_train_config => Some(self.runs_dir().join(TRAIN_CONFIG)).filter(|p| p.exists()),
            None => None,
        };
        if let Some(path) = base {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            cfg.apply_text(&path, &text)?;
        }
        let pairs = self.overrides.pairs();
        if let Some((_, Some(v))) = pairs.iter().find(|(k, _)| *k == "scenarios") {
            cfg.set("scenarios", v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| *k != "scenarios") {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn runs_dir(&self) -> PathBuf {
        self.runs.clone().unwrap_or_else(|| self.out.clone())
    }
}

fn cmd_synth(a: &SynthArgs) -> lopgpn::Result<()> {
    if non_empty_dir(&a.out) && !a.force {
        return Err(Error::InvalidParameter(format!(
            "{} is not empty; pass --force to overwrite",
            a.out.display()
        )));
    }
    let base = SbmConfig::preset(&a.preset, a.seed)?;
    let cfg = SbmConfig {
        n_nodes: a.nodes.unwrap_or(base.n_nodes),
        n_classes: a.classes.unwrap_or(base.n_classes),
        intra_p: a.intra_p.unwrap_or(base.intra_p),
        inter_p: a.inter_p.unwrap_or(base.inter_p),
        feature_dim: a.feature_dim.unwrap_or(base.feature_dim),
        class_separation: a.separation.unwrap_or(base.class_separation),
        seed: a.seed,
    };
    let mut d = datasets::synth_sbm(&cfg)?;
    if a.split {
        d = datasets::split(
            &d,
            &SplitSpec {
                seed: a.seed,
                ..SplitSpec::default()
            },
        )?;
    }
    datasets::save(&d, &a.out)?;
    println!(
        "wrote {} ({} nodes, {} classes, {} features, homophily {:.3})",
        a.out.display(),
        d.n_nodes(),
        d.n_classes,
        d.feature_dim(),
        d.homophily()
    );
    Ok(())
}

fn cmd_train(a: &RunArgs) -> lopgpn::Result<()> {
    let cfg = a.resolve(false)?;
    let runs = a.out.join("runs");
    if non_empty_dir(&runs) && !a.force {
        return Err(Error::InvalidParameter(format!(
            "{} already holds runs; pass --force to overwrite",
            runs.display()
        )));
    }
    let trained = experiment::train_all(&cfg)?;
    experiment::save_runs(&a.out, &trained)?;
    write_file(&a.out.join(TRAIN_CONFIG), &cfg.to_text())?;
    for r in &trained {
        let (g, kind, seed) = &r.key;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{} {kind} seed {seed}: best epoch {}, val loss {}, val acc {}",
            experiment::group_label(g.as_ref()),
            r.log.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
            fmt(r.log.val_loss),
            fmt(r.log.val_accuracy)
        );
    }
    Ok(())
}

fn check_output(path: &Path, force: bool) -> lopgpn::Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidParameter(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_arc(a: &RunArgs) -> lopgpn::Result<()> {
    let cfg = a.resolve(true)?;
    let out = a.out.join("arc.csv");
    check_output(&out, a.force)?;
    let store = ModelStore::load(&cfg, &a.runs_dir(), &[None])?;
    let csv = eval::arc_csv(&experiment::arc_report(&cfg, &store)?);
    write_file(&out, &csv)?;
    write_file(&a.out.join("arc.config.txt"), &cfg.to_text())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_ood(a: &RunArgs) -> lopgpn::Result<()> {
    let cfg = a.resolve(true)?;
    let out = a.out.join("ood.csv");
    check_output(&out, a.force)?;
    let store = ModelStore::load(&cfg, &a.runs_dir(), &experiment::ood_groups(&cfg))?;
    let csv = eval::ood_csv(&experiment::ood_report(&cfg, &store)?);
    write_file(&out, &csv)?;
    write_file(&a.out.join("ood.config.txt"), &cfg.to_text())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_selfcheck(quick: bool) -> ExitCode {
    let results = selfcheck::run(quick);
    for r in &results {
        println!("{} {:<36} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NUMERIC)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Checkpoint(_) => EXIT_IO,
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::Domain { .. } | Error::NotRowStochastic { .. } => {
            EXIT_NUMERIC
        }
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Arc(a) => cmd_arc(a),
        Command::Ood(a) => cmd_ood(a),
        Command::Selfcheck { quick } => return cmd_selfcheck(*quick),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
