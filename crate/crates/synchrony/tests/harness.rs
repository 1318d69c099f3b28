use std::fs;
use std::path::{Path, PathBuf};

use synchrony::config::TrainConfig;
use synchrony::formats::read_checkpoint;
use synchrony::harness::{self, evaluate_samples, Arch, CheckpointMeta, Runner};
use synchrony::tables;
use synchrony_core::circuits::{CircuitKind, PhiInit};
use synchrony_core::featuretracker::ConditionTag;

fn write_data(dir: &Path, tag: ConditionTag, n: usize, seed: u64) -> PathBuf {
    let (ds, cfg) = harness::generate(tag, n, seed).unwrap();
    harness::write_generated(dir, &ds, &cfg).unwrap()
}

/// Train and validation files in separate directories of `root`.
fn data(root: &Path, n_train: usize, n_val: usize) -> (PathBuf, PathBuf) {
    let t = write_data(&root.join("train"), ConditionTag::Train, n_train, 1);
    let v = write_data(&root.join("val"), ConditionTag::Train, n_val, 2);
    (t, v)
}

fn mini(train: &Path, val: &Path, out: &Path) -> TrainConfig {
    TrainConfig {
        channels: 4,
        frames: 4,
        batch: 8,
        max_epochs: 2,
        ..TrainConfig::new(train, val, out)
    }
}

#[test]
fn single_batch_overfits() {
    let root = tempfile::tempdir().unwrap();
    let (t, v) = data(root.path(), 64, 8);
    let cfg = TrainConfig {
        circuit: CircuitKind::Int,
        channels: 8,
        batch: 64,
        lr: 1.5e-2,
        max_epochs: 200,
        patience: 200,
        ..mini(&t, &v, &root.path().join("run"))
    };
    let s = harness::train(&cfg).unwrap();
    let best = s.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    let first = s.epochs.iter().position(|e| e.train_loss < 0.05);
    assert!(first.is_some(), "lowest loss after 200 steps: {best}");
}

#[test]
fn log_and_checkpoints_are_written() {
    let root = tempfile::tempdir().unwrap();
    let (t, v) = data(root.path(), 16, 8);
    let out = root.path().join("run");
    let s = harness::train(&mini(&t, &v, &out)).unwrap();
    assert_eq!(s.epochs.len(), 2);
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with(harness::LOG_HEADER));
    let meta = CheckpointMeta::read(&read_checkpoint(&s.last_checkpoint).unwrap()).unwrap();
    assert_eq!(meta.epoch, 2);
    assert_eq!((meta.arch.channels, meta.arch.frames, meta.n_val), (4, 4, 8));
}

#[test]
fn best_checkpoint_reproduces_logged_accuracy() {
    let root = tempfile::tempdir().unwrap();
    let (t, v) = data(root.path(), 16, 24);
    let cfg = TrainConfig { max_epochs: 3, ..mini(&t, &v, &root.path().join("run")) };
    let s = harness::train(&cfg).unwrap();
    let best_logged = s.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    assert_eq!(s.epochs.last().unwrap().best_val_accuracy, best_logged);
    let run = Runner::load(&s.best_checkpoint).unwrap();
    let val = harness::load_dataset(&v, None).unwrap();
    let ev = evaluate_samples(&run, &val.samples, cfg.seed, "best").unwrap();
    assert_eq!(ev.accuracy(), best_logged);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let root = tempfile::tempdir().unwrap();
    let (t, v) = data(root.path(), 16, 8);
    let full = harness::train(&mini(&t, &v, &root.path().join("full"))).unwrap();

    let first = TrainConfig { max_epochs: 1, ..mini(&t, &v, &root.path().join("part")) };
    let s1 = harness::train(&first).unwrap();
    let resumed = TrainConfig { resume: Some(s1.last_checkpoint.clone()), ..mini(&t, &v, &root.path().join("part")) };
    let s2 = harness::train(&resumed).unwrap();
    assert_eq!(s2.epochs.len(), 1);
    assert_eq!(s2.epochs[0].epoch, 2);
    assert_eq!(s2.epochs[0].train_loss.to_bits(), full.epochs[1].train_loss.to_bits());
    assert_eq!(s2.epochs[0], full.epochs[1]);
    assert_eq!(
        fs::read(root.path().join("full/last.ckpt")).unwrap(),
        fs::read(root.path().join("part/last.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(root.path().join("full/log.csv")).unwrap(),
        fs::read_to_string(root.path().join("part/log.csv")).unwrap()
    );
}

#[test]
fn resume_rejects_a_different_model() {
    let root = tempfile::tempdir().unwrap();
    let (t, v) = data(root.path(), 8, 8);
    let s = harness::train(&TrainConfig { max_epochs: 1, ..mini(&t, &v, &root.path().join("a")) }).unwrap();
    let other = TrainConfig { channels: 6, resume: Some(s.last_checkpoint), ..mini(&t, &v, &root.path().join("b")) };
    assert!(harness::train(&other).is_err());
}

#[test]
fn untrained_model_is_at_chance() {
    let root = tempfile::tempdir().unwrap();
    let v = write_data(root.path(), ConditionTag::Train, 2000, 3);
    let val = harness::load_dataset(&v, None).unwrap();
    let run = Runner::new(Arch::new(CircuitKind::CvRnn, PhiInit::RandomUniform, 4, 4), 11).unwrap();
    let ev = evaluate_samples(&run, &val.samples, 0, "untrained").unwrap();
    assert_eq!(ev.n(), 2000);
    assert!((0.45..=0.55).contains(&ev.accuracy()), "accuracy {}", ev.accuracy());
}

#[test]
fn evaluation_lists_missing_conditions() {
    let root = tempfile::tempdir().unwrap();
    write_data(root.path(), ConditionTag::Train, 10, 4);
    write_data(root.path(), ConditionTag::Occlusion, 6, 4);
    let run = Runner::new(Arch::new(CircuitKind::Int, PhiInit::RandomUniform, 4, 4), 0).unwrap();
    let conds = [ConditionTag::Train, ConditionTag::OODColor, ConditionTag::Occlusion];
    let rep = harness::evaluate(&run, root.path(), &conds, None, 0, "int").unwrap();
    assert_eq!(rep.missing.len(), 1);
    assert_eq!(rep.missing[0].0, ConditionTag::OODColor);
    assert_eq!(rep.rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![10, 6]);

    let out = root.path().join("eval");
    harness::write_report(&out, &rep).unwrap();
    let d = tables::read_decisions(&out.join("decisions_Train.csv")).unwrap();
    assert_eq!(d.len(), 10);
    let rows = tables::results_from_json(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(rows, rep.rows);
    let correct = d.iter().filter(|r| r.correct()).count();
    assert_eq!(rows[0].accuracy, correct as f64 / 10.0);
}

#[test]
fn evaluation_is_independent_of_batching_and_order() {
    let root = tempfile::tempdir().unwrap();
    let v = write_data(root.path(), ConditionTag::Train, 12, 5);
    let val = harness::load_dataset(&v, None).unwrap();
    let run = Runner::new(Arch::new(CircuitKind::CvRnn, PhiInit::PerTimestepRandom, 4, 4), 3).unwrap();
    let a = evaluate_samples(&run, &val.samples, 9, "x").unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| evaluate_samples(&run, &val.samples, 9, "x").unwrap());
    assert_eq!(a, b);
}

#[test]
fn agreement_is_reported_for_complex_models_only() {
    let root = tempfile::tempdir().unwrap();
    let v = write_data(root.path(), ConditionTag::Train, 6, 6);
    let val = harness::load_dataset(&v, None).unwrap();
    let int = Runner::new(Arch::new(CircuitKind::Int, PhiInit::RandomUniform, 4, 4), 0).unwrap();
    assert_eq!(harness::mean_agreement(&int, &val.samples, 0).unwrap(), None);
    let cv = Runner::new(Arch::new(CircuitKind::CvRnn, PhiInit::RandomUniform, 4, 4), 0).unwrap();
    if let Some(a) = harness::mean_agreement(&cv, &val.samples, 0).unwrap() {
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn phi_ablation_trains_each_mode() {
    let root = tempfile::tempdir().unwrap();
    let (t, v) = data(root.path(), 8, 8);
    let base = TrainConfig { max_epochs: 1, ..mini(&t, &v, &root.path().join("abl")) };
    let modes = [PhiInit::RandomUniform, PhiInit::Segmentation];
    let rows = harness::ablate_phi(&base, &modes, |_, _| {}).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(root.path().join("abl/segmentation/best.ckpt").exists());
    let csv = String::from_utf8(harness::ablation_csv(&rows).unwrap()).unwrap();
    assert!(csv.starts_with("phi_init,epochs,n_val,accuracy,ci95,agreement\nrandom_uniform,1,8,"));
}

#[test]
fn corrupted_dataset_is_a_clean_error() {
    let root = tempfile::tempdir().unwrap();
    let p = write_data(root.path(), ConditionTag::Train, 2, 0);
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    let err = harness::load_dataset(&p, None).unwrap_err();
    assert!(format!("{err:#}").contains("truncated"), "{err:#}");
}
