//! Training loop with early stopping and resumable checkpoints, evaluation
//! across conditions, and phase agreement statistics.
//!
//! Per-video gradients are computed in parallel and summed in index order, so
//! results do not depend on the thread count.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use synchrony_core::circuits::{CircuitKind, PhiInit};
use synchrony_core::featuretracker::{generate_video, ConditionTag, GeneratorConfig, VideoSample, FRAMES};
use synchrony_core::losses::SynchronyConfig;
use synchrony_core::metrics::DecisionRecord;
use synchrony_core::model::{frame_indices, predict, train_sample, video_tensor, ModelConfig, Prediction, VideoModel};
use synchrony_core::optim::Adam;
use synchrony_core::params::{accumulate, ParamStore};
use synchrony_core::rng::{stream, stream3};
use synchrony_core::viz::agreement_series;

use crate::config::TrainConfig;
use crate::formats::{self, load_into, meta, read_checkpoint, read_dataset, store_tensors, Dataset, Manifest, NamedTensor};
use crate::tables::{self, ResultRow};

/// Key of the evaluation rng streams; training uses small keys.
const EVAL_STREAM: u64 = u64::MAX;
const SHUFFLE_STREAM: u64 = 1;

pub const LOG_HEADER: &str = "epoch,train_loss,train_bce,train_synchrony,val_accuracy,best_val_accuracy\n";

/// Generates videos `0..n` of a condition, in parallel.
pub fn generate(tag: ConditionTag, n: usize, seed: u64) -> Result<(Dataset, GeneratorConfig)> {
    let cfg = GeneratorConfig::new(tag, seed, n);
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| generate_video(&cfg, i).map(|(v, _)| v))
        .collect::<synchrony_core::Result<Vec<_>>>()?;
    Ok((Dataset { condition: tag, samples }, cfg))
}

/// Writes `<dir>/<condition>.ftrk` and its manifest; returns the data path.
pub fn write_generated(dir: &Path, ds: &Dataset, cfg: &GeneratorConfig) -> Result<PathBuf> {
    let name = format!("{}.ftrk", ds.condition.name());
    let path = dir.join(&name);
    formats::write_dataset(&path, ds).with_context(|| format!("writing {}", path.display()))?;
    let manifest = Manifest::new(cfg, ds, &name);
    tables::write_file(&dir.join(format!("{}.manifest.json", ds.condition.name())), manifest.to_json().as_bytes())?;
    Ok(path)
}

/// A model ready to run: architecture, weights and frame selection.
#[derive(Debug, Clone)]
pub struct Runner {
    pub model: VideoModel,
    pub store: ParamStore,
    pub frames: Vec<usize>,
}

/// Everything needed to rebuild a video model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    pub kind: CircuitKind,
    pub phi_init: PhiInit,
    pub channels: usize,
    /// Frames fed to the model.
    pub frames: usize,
    pub gate_kernel: usize,
}

impl Arch {
    pub fn new(kind: CircuitKind, phi_init: PhiInit, channels: usize, frames: usize) -> Self {
        Self { kind, phi_init, channels, frames, gate_kernel: 1 }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self { kind: cfg.circuit, phi_init: cfg.phi_init, channels: cfg.channels, frames: cfg.frames, gate_kernel: cfg.gate_kernel }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.kind, self.channels).with_phi_init(self.phi_init);
        cfg.circuit.gate_kernel = self.gate_kernel;
        cfg
    }
}

impl Runner {
    /// Fresh model initialized from `seed`.
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = VideoModel::new(arch.model_config(), &mut store, &mut stream(seed, 0))?;
        Ok(Self { model, store, frames: frame_indices(FRAMES, arch.frames)? })
    }

    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Self::new(Arch::from_config(cfg), cfg.seed)
    }

    /// Rebuilds the model recorded in a checkpoint and loads its weights.
    pub fn from_checkpoint(tensors: &[NamedTensor]) -> Result<Self> {
        let m = CheckpointMeta::read(tensors)?;
        let mut r = Self::new(m.arch, 0)?;
        load_into(&mut r.store, tensors)?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ts = read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_checkpoint(&ts).with_context(|| format!("loading checkpoint {}", path.display()))
    }

    pub fn masks<'a>(&self, s: &'a VideoSample) -> Vec<&'a [u8]> {
        self.frames.iter().map(|&t| s.mask(t)).collect()
    }

    /// Inference on one video; `index` keys the phase-initialization rng.
    pub fn predict(&self, s: &VideoSample, seed: u64, index: u64, keep_states: bool) -> Result<Prediction> {
        let video = video_tensor(s, &self.frames);
        let mask0 = s.mask(self.frames[0]);
        Ok(predict(&self.model, &self.store, &video, Some(mask0), keep_states, &mut stream3(seed, EVAL_STREAM, index))?)
    }
}

/// Training state stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub arch: Arch,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_correct: usize,
    pub n_val: usize,
    pub stop: EarlyStop,
}

impl CheckpointMeta {
    fn tensors(&self) -> Vec<NamedTensor> {
        let kind = match self.arch.kind {
            CircuitKind::Int => 0.0,
            CircuitKind::CvRnn => 1.0,
        };
        let prev = self.stop.prev.map(|p| p as f32).unwrap_or(-1.0);
        vec![
            NamedTensor::scalar("meta.kind", kind),
            NamedTensor::scalar("meta.phi_init", self.arch.phi_init.code() as f32),
            NamedTensor::scalar("meta.channels", self.arch.channels as f32),
            NamedTensor::scalar("meta.frames", self.arch.frames as f32),
            NamedTensor::scalar("meta.gate_kernel", self.arch.gate_kernel as f32),
            NamedTensor::scalar("meta.epoch", self.epoch as f32),
            NamedTensor::scalar("meta.best_epoch", self.best_epoch as f32),
            NamedTensor::scalar("meta.best_correct", self.best_correct as f32),
            NamedTensor::scalar("meta.n_val", self.n_val as f32),
            NamedTensor::scalar("meta.patience", self.stop.patience as f32),
            NamedTensor::scalar("meta.prev_correct", prev),
            NamedTensor::scalar("meta.decreases", self.stop.decreases as f32),
        ]
    }

    pub fn read(ts: &[NamedTensor]) -> Result<Self> {
        let int = |name: &str| -> Result<usize> {
            let v = meta(ts, name)?;
            if v < 0.0 || v.fract() != 0.0 {
                bail!("{name} = {v} is not a count");
            }
            Ok(v as usize)
        };
        let kind = match int("meta.kind")? {
            0 => CircuitKind::Int,
            1 => CircuitKind::CvRnn,
            k => bail!("unknown circuit code {k}"),
        };
        let code = int("meta.phi_init")?;
        let phi_init = PhiInit::from_code(code as u8).with_context(|| format!("unknown phase init code {code}"))?;
        let prev = meta(ts, "meta.prev_correct")?;
        Ok(Self {
            arch: Arch {
                kind,
                phi_init,
                channels: int("meta.channels")?,
                frames: int("meta.frames")?,
                gate_kernel: int("meta.gate_kernel")?,
            },
            epoch: int("meta.epoch")?,
            best_epoch: int("meta.best_epoch")?,
            best_correct: int("meta.best_correct")?,
            n_val: int("meta.n_val")?,
            stop: EarlyStop {
                patience: int("meta.patience")?,
                prev: if prev < 0.0 { None } else { Some(prev as usize) },
                decreases: int("meta.decreases")?,
            },
        })
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best_correct as f64 / self.n_val.max(1) as f64
    }
}

/// Stops after `patience` consecutive epochs whose validation score is lower
/// than the epoch before.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub prev: Option<usize>,
    pub decreases: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self { patience, prev: None, decreases: 0 }
    }

    /// Records one epoch's score; true when training should stop.
    pub fn update(&mut self, correct: usize) -> bool {
        self.decreases = match self.prev {
            Some(p) if correct < p => self.decreases + 1,
            _ => 0,
        };
        self.prev = Some(correct);
        self.decreases >= self.patience
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_bce: f64,
    pub train_synchrony: f64,
    pub val_accuracy: f64,
    pub best_val_accuracy: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            self.epoch, self.train_loss, self.train_bce, self.train_synchrony, self.val_accuracy, self.best_val_accuracy
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLog>,
    pub meta: CheckpointMeta,
    pub stopped_early: bool,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

#[derive(Debug, thiserror::Error)]
#[error("non-finite loss in epoch {epoch}; batch videos {ids:?} (dump in {dump})")]
pub struct NonFiniteLoss {
    pub epoch: usize,
    pub ids: Vec<usize>,
    pub dump: String,
}

/// Loads a dataset and keeps its first `limit` videos.
pub fn load_dataset(path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let mut ds = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if let Some(n) = limit {
        if n > ds.samples.len() {
            bail!("{} holds {} videos, {n} requested", path.display(), ds.samples.len());
        }
        ds.samples.truncate(n);
    }
    if ds.samples.is_empty() {
        bail!("{} holds no videos", path.display());
    }
    Ok(ds)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainSummary> {
    train_with(cfg, |_| {})
}

/// Trains per `cfg`, calling `on_epoch` after each epoch.
pub fn train_with(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainSummary> {
    let train_ds = load_dataset(&cfg.train_data, cfg.n_train)?;
    let val_ds = load_dataset(&cfg.val_data, cfg.n_val)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut run = Runner::from_config(cfg)?;
    let mut adam = Adam::new(&run.store, cfg.lr);
    let mut meta = CheckpointMeta {
        arch: Arch::from_config(cfg),
        epoch: 0,
        best_epoch: 0,
        best_correct: 0,
        n_val: val_ds.samples.len(),
        stop: EarlyStop::new(cfg.patience),
    };
    if let Some(path) = &cfg.resume {
        let ts = read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let m = CheckpointMeta::read(&ts)?;
        if (m.arch, m.n_val) != (meta.arch, meta.n_val) {
            bail!("checkpoint {} was written for a different model or validation set", path.display());
        }
        load_into(&mut run.store, &ts)?;
        restore_adam(&mut adam, &run.store, &ts)?;
        meta = CheckpointMeta { stop: EarlyStop { patience: cfg.patience, ..m.stop }, ..m };
    }

    let best_path = cfg.out.join("best.ckpt");
    let last_path = cfg.out.join("last.ckpt");
    let log_path = cfg.out.join("log.csv");
    if cfg.resume.is_none() || !log_path.exists() {
        fs::write(&log_path, LOG_HEADER)?;
    }
    let syn = SynchronyConfig { splay: cfg.splay, ..SynchronyConfig::default() };
    let n = train_ds.samples.len();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    while meta.epoch < cfg.max_epochs {
        let epoch = meta.epoch;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream3(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        let (mut loss, mut bce, mut sync) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch) {
            let outs = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_ds.samples[i];
                    let video = video_tensor(s, &run.frames);
                    let masks = run.masks(s);
                    let mut rng = stream3(cfg.seed, 2 + epoch as u64, i as u64);
                    train_sample(&run.model, &run.store, &video, &masks, s.label, &syn, &mut rng)
                })
                .collect::<synchrony_core::Result<Vec<_>>>()?;
            let mut grads: Vec<Vec<f64>> = Vec::new();
            let mut batch_loss = 0.0;
            for o in &outs {
                batch_loss += o.loss;
                bce += o.bce;
                sync += o.synchrony;
                accumulate(&mut grads, &o.grads);
            }
            let finite = batch_loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                let dump = cfg.out.join("nonfinite_batch.txt");
                let mut f = fs::File::create(&dump)?;
                writeln!(f, "epoch {epoch}")?;
                for (&i, o) in batch.iter().zip(&outs) {
                    writeln!(f, "video {i} loss {:?} logit {:?}", o.loss, o.logit)?;
                }
                return Err(NonFiniteLoss { epoch: epoch + 1, ids: batch.to_vec(), dump: dump.display().to_string() }.into());
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.step(&mut run.store, &grads)?;
            loss += batch_loss;
        }

        let val = evaluate_samples(&run, &val_ds.samples, cfg.seed, "val")?;
        meta.epoch += 1;
        if meta.epoch == 1 || val.correct > meta.best_correct {
            meta.best_correct = val.correct;
            meta.best_epoch = meta.epoch;
            formats::write_checkpoint(&best_path, &checkpoint(&run.store, &adam, &meta))?;
        }
        stopped_early = meta.stop.update(val.correct);
        let row = EpochLog {
            epoch: meta.epoch,
            train_loss: loss / n as f64,
            train_bce: bce / n as f64,
            train_synchrony: sync / n as f64,
            val_accuracy: val.accuracy(),
            best_val_accuracy: meta.best_accuracy(),
        };
        fs::OpenOptions::new().append(true).open(&log_path)?.write_all(row.csv_row().as_bytes())?;
        formats::write_checkpoint(&last_path, &checkpoint(&run.store, &adam, &meta))?;
        on_epoch(&row);
        epochs.push(row);
        if stopped_early {
            break;
        }
    }
    Ok(TrainSummary { epochs, meta, stopped_early, best_checkpoint: best_path, last_checkpoint: last_path })
}

fn checkpoint(store: &ParamStore, adam: &Adam, meta: &CheckpointMeta) -> Vec<NamedTensor> {
    let mut ts = store_tensors(store);
    for ((p, m), v) in store.iter().zip(&adam.m).zip(&adam.v) {
        ts.push(NamedTensor { name: format!("adam.m.{}", p.name), shape: p.shape.clone(), data: m.clone() });
        ts.push(NamedTensor { name: format!("adam.v.{}", p.name), shape: p.shape.clone(), data: v.clone() });
    }
    // the step count is split so it stays exact in f32
    ts.push(NamedTensor { name: "adam.step".into(), shape: vec![2], data: split_u32(adam.step) });
    ts.extend(meta.tensors());
    ts
}

fn split_u32(x: u64) -> Vec<f32> {
    vec![(x >> 16) as f32, (x & 0xffff) as f32]
}

fn restore_adam(adam: &mut Adam, store: &ParamStore, ts: &[NamedTensor]) -> Result<()> {
    for (i, p) in store.iter().enumerate() {
        for (kind, dst) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
            let name = format!("adam.{kind}.{}", p.name);
            let t = formats::find(ts, &name).with_context(|| format!("checkpoint lacks {name}"))?;
            if t.data.len() != dst.len() {
                bail!("{name} has {} values, expected {}", t.data.len(), dst.len());
            }
            dst.copy_from_slice(&t.data);
        }
    }
    let step = formats::find(ts, "adam.step").context("checkpoint lacks adam.step")?;
    if step.data.len() != 2 {
        bail!("adam.step must hold two values");
    }
    adam.step = ((step.data[0] as u64) << 16) | step.data[1] as u64;
    Ok(())
}

/// Decisions and loss on one set of videos.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub loss_sum: f64,
    pub decisions: Vec<DecisionRecord>,
}

impl Evaluation {
    pub fn n(&self) -> usize {
        self.decisions.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n().max(1) as f64
    }
}

/// Classifies every video; decision `video` ids are dataset indices.
pub fn evaluate_samples(run: &Runner, samples: &[VideoSample], seed: u64, observer: &str) -> Result<Evaluation> {
    let logits = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| run.predict(s, seed, i as u64, false).map(|p| p.logit))
        .collect::<Result<Vec<f64>>>()?;
    let mut ev = Evaluation { correct: 0, loss_sum: 0.0, decisions: Vec::with_capacity(samples.len()) };
    for (i, (s, &z)) in samples.iter().zip(&logits).enumerate() {
        let pred = (z > 0.0) as u8;
        ev.correct += (pred == s.label) as usize;
        ev.loss_sum += bce_with_logit(z, s.label);
        ev.decisions.push(DecisionRecord { observer: observer.into(), video: i as u64, pred, label: s.label });
    }
    Ok(ev)
}

fn bce_with_logit(z: f64, label: u8) -> f64 {
    let y = label as f64;
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Accuracy table and decisions over several conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ResultRow>,
    pub decisions: Vec<(ConditionTag, Vec<DecisionRecord>)>,
    /// Conditions whose dataset file was absent.
    pub missing: Vec<(ConditionTag, PathBuf)>,
}

/// Evaluates on `<data_dir>/<condition>.ftrk` for each condition, skipping
/// absent files.
pub fn evaluate(
    run: &Runner,
    data_dir: &Path,
    conditions: &[ConditionTag],
    limit: Option<usize>,
    seed: u64,
    observer: &str,
) -> Result<EvalReport> {
    let mut report = EvalReport { rows: Vec::new(), decisions: Vec::new(), missing: Vec::new() };
    for &c in conditions {
        let path = data_dir.join(format!("{}.ftrk", c.name()));
        if !path.exists() {
            report.missing.push((c, path));
            continue;
        }
        let ds = load_dataset(&path, limit)?;
        if ds.condition != c {
            bail!("{} holds {} videos, not {}", path.display(), ds.condition, c);
        }
        let ev = evaluate_samples(run, &ds.samples, seed, observer)?;
        report.rows.push(ResultRow::new(c.name(), ev.correct, ev.n(), ev.loss_sum / ev.n() as f64));
        report.decisions.push((c, ev.decisions));
    }
    Ok(report)
}

/// Writes the results table and one `decisions_<condition>.csv` per
/// evaluated condition.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    tables::write_results(dir, &report.rows)?;
    for (c, d) in &report.decisions {
        tables::write_decisions(&dir.join(format!("decisions_{}.csv", c.name())), d)?;
    }
    Ok(())
}

/// Mean segmentation agreement over the steps of the videos the model
/// classifies correctly. `None` for circuits without phases or when no step
/// has two groups.
pub fn mean_agreement(run: &Runner, samples: &[VideoSample], seed: u64) -> Result<Option<f64>> {
    if run.model.kind() != CircuitKind::CvRnn {
        return Ok(None);
    }
    let per = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<Vec<f64>> {
            let p = run.predict(s, seed, i as u64, false)?;
            if p.label() != s.label {
                return Ok(Vec::new());
            }
            Ok(agreement_series(&p.thetas, &run.masks(s))?.into_iter().flatten().collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = per.into_iter().flatten().collect();
    Ok((!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64))
}

/// Result of training one phase-initialization mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub phi_init: PhiInit,
    pub epochs: usize,
    pub n_val: usize,
    pub accuracy: f64,
    pub ci95: f64,
    pub agreement: Option<f64>,
}

/// Trains one model per mode under `<out>/<mode>` and scores each best
/// checkpoint on the validation set.
pub fn ablate_phi(base: &TrainConfig, modes: &[PhiInit], mut on_epoch: impl FnMut(PhiInit, &EpochLog)) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        let cfg = TrainConfig { phi_init: mode, out: base.out.join(mode.name()), resume: None, ..base.clone() };
        let summary = train_with(&cfg, |e| on_epoch(mode, e))?;
        let run = Runner::load(&summary.best_checkpoint)?;
        let val = load_dataset(&cfg.val_data, cfg.n_val)?;
        let ev = evaluate_samples(&run, &val.samples, cfg.seed, mode.name())?;
        let row = ResultRow::new(mode.name(), ev.correct, ev.n(), 0.0);
        rows.push(AblationRow {
            phi_init: mode,
            epochs: summary.epochs.len(),
            n_val: ev.n(),
            accuracy: row.accuracy,
            ci95: row.ci95,
            agreement: mean_agreement(&run, &val.samples, cfg.seed)?,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phi_init", "epochs", "n_val", "accuracy", "ci95", "agreement"])?;
    for r in rows {
        w.write_record([
            r.phi_init.name().to_string(),
            r.epochs.to_string(),
            r.n_val.to_string(),
            format!("{:?}", r.accuracy),
            format!("{:?}", r.ci95),
            r.agreement.map(|a| format!("{a:?}")).unwrap_or_default(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Seconds for one training step on one full-length video, used to project
/// run times.
pub fn time_one_sample(kind: CircuitKind, channels: usize, frames: usize) -> Result<f64> {
    let run = Runner::new(Arch::new(kind, PhiInit::RandomUniform, channels, frames), 0)?;
    let (ds, _) = generate(ConditionTag::Train, 1, 0)?;
    let s = &ds.samples[0];
    let video = video_tensor(s, &run.frames);
    let masks = run.masks(s);
    let t0 = Instant::now();
    train_sample(&run.model, &run.store, &video, &masks, s.label, &SynchronyConfig::default(), &mut stream(0, 0))?;
    Ok(t0.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_counts_consecutive_decreases() {
        let mut s = EarlyStop::new(5);
        // a plateau or rise resets the count
        for c in [10, 9, 8, 8, 7, 6, 5, 4] {
            assert!(!s.update(c));
        }
        assert_eq!(s.decreases, 4);
        assert!(s.update(3));
        let mut t = EarlyStop::new(5);
        let stops: Vec<bool> = [9, 8, 7, 6, 5, 4].iter().map(|&c| t.update(c)).collect();
        assert_eq!(stops, vec![false, false, false, false, false, true]);
    }

    #[test]
    fn logit_bce_matches_the_direct_formula() {
        for z in [-3.0f64, -0.1, 0.0, 2.5] {
            let p = 1.0 / (1.0 + (-z).exp());
            assert!((bce_with_logit(z, 1) + p.ln()).abs() < 1e-12);
            assert!((bce_with_logit(z, 0) + (1.0 - p).ln()).abs() < 1e-12);
        }
        assert!(bce_with_logit(800.0, 0).is_finite());
    }

    #[test]
    fn adam_step_split_is_exact() {
        for x in [0u64, 1, 65_535, 65_536, 1 << 30] {
            let v = split_u32(x);
            assert_eq!(((v[0] as u64) << 16) | v[1] as u64, x);
        }
    }

    #[test]
    fn meta_round_trip() {
        let m = CheckpointMeta {
            arch: Arch { gate_kernel: 3, ..Arch::new(CircuitKind::CvRnn, PhiInit::Learnable, 8, 6) },
            epoch: 3,
            best_epoch: 2,
            best_correct: 17,
            n_val: 20,
            stop: EarlyStop { patience: 5, prev: Some(15), decreases: 1 },
        };
        assert_eq!(CheckpointMeta::read(&m.tensors()).unwrap(), m);
        let none = CheckpointMeta { stop: EarlyStop::new(5), ..m };
        assert_eq!(CheckpointMeta::read(&none.tensors()).unwrap(), none);
    }
}
