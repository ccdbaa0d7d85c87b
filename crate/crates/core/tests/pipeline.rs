use lopgpn::datasets::{self, apply_ood, split, synth_sbm, OodScenario, SbmConfig, SplitSpec};
use lopgpn::eval::{self, Measure};
use lopgpn::experiment::{self, ExperimentConfig, ModelStore};
use lopgpn::models::{checkpoint, predict_report, train, Hyperparameters, ModelKind};
use tempfile::TempDir;

fn small_hp() -> Hyperparameters {
    Hyperparameters {
        hidden_dim: 8,
        latent_dim: 4,
        n_flows: 2,
        max_epochs: 30,
        learning_rate: 1e-2,
        ..Default::default()
    }
}

fn small_dataset(seed: u64) -> datasets::GraphDataset {
    let cfg = SbmConfig {
        n_nodes: 120,
        ..SbmConfig::small(seed)
    };
    split(&synth_sbm(&cfg).unwrap(), &SplitSpec { seed, train_fraction: 0.1, test_fraction: 0.75, ..Default::default() }).unwrap()
}

#[test]
fn dataset_directory_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = small_dataset(1);
    datasets::save(&d, dir.path()).unwrap();
    let back = datasets::load(dir.path()).unwrap();
    assert_eq!(back, d);
    assert!(back.validate().is_ok());
}

#[test]
fn checkpoint_file_reproduces_predictions() {
    let dir = TempDir::new().unwrap();
    let d = small_dataset(2);
    for kind in ModelKind::ALL {
        let (m, _) = train(kind, &d, &small_hp(), 4).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        checkpoint::save(&m, &path).unwrap();
        let back = checkpoint::load(&path).unwrap();
        assert_eq!(predict_report(&back, &d).unwrap(), predict_report(&m, &d).unwrap(), "{kind}");
    }
}

#[test]
fn second_order_reports_are_consistent() {
    let d = small_dataset(3);
    for kind in [ModelKind::GpnRw, ModelKind::GpnSym, ModelKind::LopGpn] {
        let (m, _) = train(kind, &d, &small_hp(), 0).unwrap();
        for p in predict_report(&m, &d).unwrap() {
            let r = p.report;
            assert!(p.predicted < d.n_classes);
            assert!(r.tu >= -1e-12 && r.tu <= (d.n_classes as f64).ln() + 1e-12);
            let (au, eu) = (r.au.unwrap(), r.eu.unwrap());
            assert!(au >= -1e-12 && au <= r.tu + 1e-12, "{kind}: au {au} tu {}", r.tu);
            assert!((r.tu - au - eu).abs() < 1e-9);
            assert!(r.eu_pc.unwrap() <= -(d.n_classes as f64) + 1e-9);
        }
    }
}

#[test]
fn leave_out_models_only_predict_in_distribution_classes() {
    let d = small_dataset(4);
    let lo = apply_ood(&d, &OodScenario::LeaveOutClasses { classes: Some(vec![1]) }).unwrap();
    assert_eq!(lo.n_classes, 2);
    let (m, _) = train(ModelKind::LopGpn, &lo, &small_hp(), 1).unwrap();
    let preds = predict_report(&m, &lo).unwrap();
    assert!(preds.iter().all(|p| p.predicted < 2));
    let r = eval::ood_evaluate(&preds, &lo, &Measure::ALL).unwrap();
    assert_eq!(r.scenario, "leave_out_classes");
    assert_eq!(r.auc.len(), 5);
}

#[test]
fn experiment_over_dataset_directory() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    datasets::save(&synth_sbm(&SbmConfig { n_nodes: 150, ..SbmConfig::small(9) }).unwrap(), &data).unwrap();
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("dataset", data.to_str().unwrap()),
        ("models", "appnp,gpn_rw"),
        ("seeds", "0,1"),
        ("epochs", "4"),
        ("hidden_dim", "6"),
        ("latent_dim", "3"),
        ("n_flows", "1"),
        ("grid", "0,0.1"),
        ("scenarios", "gaussian_features"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let runs = experiment::train_all(&cfg).unwrap();
    experiment::save_runs(dir.path(), &runs).unwrap();
    let store = ModelStore::load(&cfg, dir.path(), &[None]).unwrap();
    let arc = eval::arc_csv(&experiment::arc_report(&cfg, &store).unwrap());
    let rows = eval::parse_arc_csv(&arc).unwrap();
    assert!(rows.iter().all(|r| r.dataset == "data"));
    assert_eq!(rows.len(), 2 * (1 + 5));
    let ood = eval::ood_csv(&experiment::ood_report(&cfg, &store).unwrap());
    assert_eq!(eval::parse_ood_csv(&ood).unwrap().len(), 1 + 5);
    // splits differ per seed when the directory carries none
    assert_ne!(cfg.clean_dataset(0).unwrap().train_mask, cfg.clean_dataset(1).unwrap().train_mask);
}
