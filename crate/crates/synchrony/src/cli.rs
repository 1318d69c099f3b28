//! Command-line entry point. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use synchrony_core::circuits::PhiInit;
use synchrony_core::featuretracker::ConditionTag;
use synchrony_core::metrics::kappa_matrix;
use synchrony_core::shellgame::{ShellTrainConfig, ShellVariant};

use crate::config::{keys_help, TrainConfig};
use crate::harness::{self, Runner};
use crate::tables::{self, group_by_observer, KappaTable};
use crate::{shell, vizout};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CVRNN_OUT";
pub const DEFAULT_OUT: &str = "out";
pub const SHELL_EPOCHS: usize = 100;
pub const SHELL_LR: f64 = 1e-3;

/// Error that should end the process with the usage exit code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "synchrony", version, about = "Phase-synchrony object tracking: data, training, evaluation and figures")]
pub struct Cli {
    /// Worker threads; 1 forces single-threaded execution.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate FeatureTracker videos for one or more conditions.
    Gen(GenArgs),
    /// Train a model from a key = value config file.
    #[command(after_help = keys_help())]
    Train(TrainArgs),
    /// Evaluate a checkpoint on generated conditions.
    Eval(EvalArgs),
    /// Render phase maps of one video as PNG sequences.
    VizPhase(VizArgs),
    /// Error-consistency matrix between the observers of decision files.
    Kappa(KappaArgs),
    /// Train shell-game variants over several seeds.
    Shellgame(ShellArgs),
    /// Train one model per phase initialization and compare them.
    AblatePhi(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Condition tags separated by commas, or `all`.
    #[arg(long, value_parser = parse_conditions)]
    pub condition: Conditions,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $CVRNN_OUT/data].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from a checkpoint; overrides `resume` in the config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides `max_epochs` in the config.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Condition tags separated by commas, or `all`.
    #[arg(long, value_parser = parse_conditions)]
    pub conditions: Conditions,
    /// Directory holding `<condition>.ftrk` files [default: $CVRNN_OUT/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Evaluate only the first n videos of each condition.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observer name in the decision files [default: checkpoint file stem].
    #[arg(long)]
    pub observer: Option<String>,
    /// Output directory [default: $CVRNN_OUT/eval].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub video_id: u64,
    /// Dataset file [default: $CVRNN_OUT/data/Train.ftrk].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output root; images go to `<out>/viz/<video-id>/` [default: $CVRNN_OUT].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Decision CSV files; observers are pooled across files.
    #[arg(long, num_args = 1.., required = true)]
    pub decisions: Vec<PathBuf>,
    /// Where to write the matrix [default: $CVRNN_OUT/kappa.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShellArgs {
    /// real_ff, real_rnn, complex_cvrnn, or all.
    #[arg(long, value_parser = parse_variants)]
    pub variant: Variants,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = SHELL_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = SHELL_LR)]
    pub lr: f64,
    /// Output directory [default: $CVRNN_OUT/shellgame].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Phase initializations separated by commas, or `all`.
    #[arg(long, value_parser = parse_modes)]
    pub modes: Modes,
    /// Base training config; each mode trains under `<out>/<mode>`.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Conditions(pub Vec<ConditionTag>);
#[derive(Debug, Clone)]
pub struct Variants(pub Vec<ShellVariant>);
#[derive(Debug, Clone)]
pub struct Modes(pub Vec<PhiInit>);

fn parse_list<T: std::str::FromStr>(s: &str, all: &[T]) -> Result<Vec<T>, String>
where
    T: Clone,
    T::Err: std::fmt::Display,
{
    if s == "all" {
        return Ok(all.to_vec());
    }
    let items: Vec<T> = s.split(',').map(|x| x.trim().parse::<T>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn parse_conditions(s: &str) -> Result<Conditions, String> {
    parse_list(s, &ConditionTag::ALL).map(Conditions)
}

fn parse_variants(s: &str) -> Result<Variants, String> {
    parse_list(s, &ShellVariant::ALL).map(Variants)
}

fn parse_modes(s: &str) -> Result<Modes, String> {
    parse_list(s, &PhiInit::ALL).map(Modes)
}

/// `$CVRNN_OUT`, or `out` when unset.
pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT.into())
}

/// Parses `args` (without the program name handling done by clap) and runs
/// the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, which leaves results unchanged
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::VizPhase(a) => viz(a),
        Command::Kappa(a) => kappa(a),
        Command::Shellgame(a) => shellgame(a),
        Command::AblatePhi(a) => ablate(a),
    }
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let out = a.out.unwrap_or_else(|| out_root().join("data"));
    for tag in a.condition.0 {
        let (ds, cfg) = harness::generate(tag, a.n, a.seed)?;
        let path = harness::write_generated(&out, &ds, &cfg)?;
        println!("{tag}: {} videos -> {}", ds.samples.len(), path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    TrainConfig::parse(&text, base, &out_root().join("train")).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    if a.resume.is_some() {
        cfg.resume = a.resume;
    }
    if let Some(m) = a.max_epochs {
        cfg.max_epochs = m;
    }
    let s = harness::train_with(&cfg, |e| {
        eprintln!("epoch {} loss {:.4} val {:.4} best {:.4}", e.epoch, e.train_loss, e.val_accuracy, e.best_val_accuracy)
    })?;
    println!(
        "trained {} epochs{}; best validation accuracy {:.4} at epoch {} -> {}",
        s.meta.epoch,
        if s.stopped_early { " (early stop)" } else { "" },
        s.meta.best_accuracy(),
        s.meta.best_epoch,
        s.best_checkpoint.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let run = Runner::load(&a.ckpt)?;
    let data = a.data.unwrap_or_else(|| out_root().join("data"));
    let out = a.out.unwrap_or_else(|| out_root().join("eval"));
    let observer = a.observer.unwrap_or_else(|| {
        a.ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
    });
    let report = harness::evaluate(&run, &data, &a.conditions.0, a.n, a.seed, &observer)?;
    harness::write_report(&out, &report)?;
    for r in &report.rows {
        println!("{}: accuracy {:.4} ± {:.4} on {} videos", r.condition, r.accuracy, r.ci95, r.n);
    }
    for (c, p) in &report.missing {
        eprintln!("skipped {c}: {} not found", p.display());
    }
    Ok(if report.missing.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn viz(a: VizArgs) -> Result<ExitCode> {
    let run = Runner::load(&a.ckpt)?;
    let data = a.data.unwrap_or_else(|| out_root().join("data").join(format!("{}.ftrk", ConditionTag::Train.name())));
    let ds = harness::load_dataset(&data, None)?;
    let sample = ds.samples.get(a.video_id as usize).with_context(|| {
        format!("video {} out of range; {} holds {} videos", a.video_id, data.display(), ds.samples.len())
    })?;
    let out = a.out.unwrap_or_else(out_root);
    let (dir, agreement) = vizout::write_phase_maps(&run, sample, a.video_id, a.seed, &out)?;
    let vals: Vec<f64> = agreement.iter().flatten().copied().collect();
    let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
    println!("{} frames -> {}; mean agreement {mean:.4}", agreement.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn kappa(a: KappaArgs) -> Result<ExitCode> {
    let mut records = Vec::new();
    for p in &a.decisions {
        records.extend(tables::read_decisions(p)?);
    }
    let groups = group_by_observer(records);
    let observers: Vec<String> = groups.iter().map(|(o, _)| o.clone()).collect();
    let sets: Vec<_> = groups.into_iter().map(|(_, r)| r).collect();
    let table = KappaTable { observers, values: kappa_matrix(&sets) };
    let bytes = table.to_csv()?;
    let out = a.out.unwrap_or_else(|| out_root().join("kappa.csv"));
    tables::write_file(&out, &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(ExitCode::SUCCESS)
}

fn shellgame(a: ShellArgs) -> Result<ExitCode> {
    if a.seeds == 0 || a.n == 0 || a.epochs == 0 {
        return Err(usage("--seeds, --n and --epochs must be positive"));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(usage("--lr must be positive"));
    }
    let out = a.out.unwrap_or_else(|| out_root().join("shellgame"));
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let base = ShellTrainConfig { epochs: a.epochs, lr: a.lr, ..ShellTrainConfig::default() };
    let reports = shell::run(&a.variant.0, &seeds, a.n, &base, |v, s, e, l| {
        if (e + 1) % 10 == 0 {
            eprintln!("{v} seed {s} epoch {} loss {l:.4}", e + 1)
        }
    })?;
    tables::write_file(&out.join("shellgame.csv"), &shell::to_csv(&reports)?)?;
    for &v in &a.variant.0 {
        if let Some(m) = shell::mean_per_class(&reports, v) {
            println!("{v}: mean per-class accuracy {:.3} {:.3} {:.3}", m[0], m[1], m[2]);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let cfg = load_config(&a.config)?;
    let rows = harness::ablate_phi(&cfg, &a.modes.0, |m, e| {
        eprintln!("{m} epoch {} loss {:.4} val {:.4}", e.epoch, e.train_loss, e.val_accuracy)
    })?;
    let bytes = harness::ablation_csv(&rows)?;
    tables::write_file(&cfg.out.join("ablate_phi.csv"), &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(ExitCode::SUCCESS)
}
