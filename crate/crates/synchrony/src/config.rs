//! Flat `key = value` training configuration. Blank lines and lines starting
//! with `#` are ignored; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use synchrony_core::circuits::{CircuitKind, PhiInit};
use synchrony_core::losses::Splay;
use synchrony_core::optim::DEFAULT_LR;

/// Every recognised key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("train_data", "(required)", "FTRK file with the training videos"),
    ("val_data", "(required)", "FTRK file with the held-out validation videos"),
    ("out", "$CVRNN_OUT/train", "directory for checkpoints and the training log"),
    ("circuit", "cvrnn", "recurrent circuit: cvrnn or int"),
    ("phi_init", "random_uniform", "phase initialization: random_uniform, segmentation, learnable, per_timestep_random, no_synch_loss_control"),
    ("channels", "32", "channels of the recurrent circuit"),
    ("frames", "32", "frames fed to the model, spread evenly over the video and always keeping the first and last"),
    ("gate_kernel", "1", "odd kernel size of the gate convolutions"),
    ("lr", "3e-4", "Adam learning rate"),
    ("batch", "64", "videos per optimizer step"),
    ("max_epochs", "200", "upper bound on training epochs"),
    ("patience", "5", "stop after this many consecutive epochs of falling validation accuracy"),
    ("seed", "0", "seed for initialization, shuffling, phase draws and evaluation"),
    ("n_train", "all", "use only the first n training videos"),
    ("n_val", "all", "use only the first n validation videos"),
    ("splay", "fundamental", "synchrony loss splay harmonics: fundamental or all"),
    ("resume", "(none)", "checkpoint written by an earlier run to continue from"),
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("missing required key '{0}'")]
    Missing(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub train_data: PathBuf,
    pub val_data: PathBuf,
    pub out: PathBuf,
    pub circuit: CircuitKind,
    pub phi_init: PhiInit,
    pub channels: usize,
    pub frames: usize,
    pub gate_kernel: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub splay: Splay,
    pub resume: Option<PathBuf>,
}

impl TrainConfig {
    /// Defaults with the given data files and output directory.
    pub fn new(train_data: impl Into<PathBuf>, val_data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            train_data: train_data.into(),
            val_data: val_data.into(),
            out: out.into(),
            circuit: CircuitKind::CvRnn,
            phi_init: PhiInit::RandomUniform,
            channels: 32,
            frames: 32,
            gate_kernel: 1,
            lr: DEFAULT_LR,
            batch: 64,
            max_epochs: 200,
            patience: 5,
            seed: 0,
            n_train: None,
            n_val: None,
            splay: Splay::Fundamental,
            resume: None,
        }
    }

    /// Desk-scale profile: 10,000 training and 2,000 validation videos, at
    /// most 30 epochs.
    pub fn desk(train_data: impl Into<PathBuf>, val_data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self { n_train: Some(10_000), n_val: Some(2_000), max_epochs: 30, ..Self::new(train_data, val_data, out) }
    }

    /// Parses a config file body. Relative paths are resolved against
    /// `base`; `default_out` applies when `out` is absent.
    pub fn parse(text: &str, base: &Path, default_out: &Path) -> Result<Self, ConfigError> {
        let mut seen: Vec<&str> = Vec::new();
        let mut cfg = Self::new("", "", default_out);
        let (mut train, mut val) = (None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            let Some(&(key, _, _)) = KEYS.iter().find(|(name, _, _)| *name == k) else {
                return Err(ConfigError::UnknownKey { line, key: k.into() });
            };
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            seen.push(key);
            let bad = |msg: String| ConfigError::Value { line, key: key.into(), msg };
            let path = |v: &str| if v.is_empty() { Err(bad("empty path".into())) } else { Ok(base.join(v)) };
            match key {
                "train_data" => train = Some(path(v)?),
                "val_data" => val = Some(path(v)?),
                "out" => cfg.out = path(v)?,
                "resume" => cfg.resume = Some(path(v)?),
                "circuit" => cfg.circuit = v.parse().map_err(|e| bad(format!("{e}")))?,
                "phi_init" => cfg.phi_init = v.parse().map_err(|e| bad(format!("{e}")))?,
                "channels" => cfg.channels = positive(v).map_err(bad)?,
                "frames" => cfg.frames = positive(v).map_err(bad)?,
                "gate_kernel" => {
                    cfg.gate_kernel = positive(v).map_err(bad)?;
                    if cfg.gate_kernel % 2 == 0 {
                        return Err(bad("must be odd".into()));
                    }
                }
                "batch" => cfg.batch = positive(v).map_err(bad)?,
                "max_epochs" => cfg.max_epochs = positive(v).map_err(bad)?,
                "patience" => cfg.patience = positive(v).map_err(bad)?,
                "n_train" => cfg.n_train = Some(positive(v).map_err(bad)?),
                "n_val" => cfg.n_val = Some(positive(v).map_err(bad)?),
                "seed" => cfg.seed = v.parse().map_err(|e| bad(format!("{e}")))?,
                "lr" => {
                    cfg.lr = v.parse().map_err(|e| bad(format!("{e}")))?;
                    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
                        return Err(bad("must be positive".into()));
                    }
                }
                "splay" => {
                    cfg.splay = match v {
                        "fundamental" => Splay::Fundamental,
                        "all" => Splay::AllHarmonics,
                        _ => return Err(bad("expected fundamental or all".into())),
                    }
                }
                _ => unreachable!("every key in KEYS is handled"),
            }
        }
        cfg.train_data = train.ok_or(ConfigError::Missing("train_data"))?;
        cfg.val_data = val.ok_or(ConfigError::Missing("val_data"))?;
        if cfg.frames > synchrony_core::featuretracker::FRAMES {
            return Err(ConfigError::Value {
                line: 0,
                key: "frames".into(),
                msg: format!("at most {}", synchrony_core::featuretracker::FRAMES),
            });
        }
        Ok(cfg)
    }

    /// Serializes every key; parsing the result with the same base gives
    /// back this config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<usize>| v.map(|n| n.to_string());
        let splay = match self.splay {
            Splay::Fundamental => "fundamental",
            Splay::AllHarmonics => "all",
        };
        let pairs: Vec<(&str, Option<String>)> = vec![
            ("train_data", Some(self.train_data.display().to_string())),
            ("val_data", Some(self.val_data.display().to_string())),
            ("out", Some(self.out.display().to_string())),
            ("circuit", Some(self.circuit.name().into())),
            ("phi_init", Some(self.phi_init.name().into())),
            ("channels", Some(self.channels.to_string())),
            ("frames", Some(self.frames.to_string())),
            ("gate_kernel", Some(self.gate_kernel.to_string())),
            ("lr", Some(format!("{:?}", self.lr))),
            ("batch", Some(self.batch.to_string())),
            ("max_epochs", Some(self.max_epochs.to_string())),
            ("patience", Some(self.patience.to_string())),
            ("seed", Some(self.seed.to_string())),
            ("n_train", opt(self.n_train)),
            ("n_val", opt(self.n_val)),
            ("splay", Some(splay.into())),
            ("resume", self.resume.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

fn positive(v: &str) -> Result<usize, String> {
    match v.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("config keys (key = value, one per line, # starts a comment):\n");
    for (k, d, m) in KEYS {
        let _ = writeln!(s, "  {k:<12} {m} [default: {d}]");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(t: &str) -> Result<TrainConfig, ConfigError> {
        TrainConfig::parse(t, Path::new("/base"), Path::new("/out"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse("train_data = a.ftrk\nval_data=/abs/b.ftrk\n").unwrap();
        assert_eq!(c.train_data, Path::new("/base/a.ftrk"));
        assert_eq!(c.val_data, Path::new("/abs/b.ftrk"));
        assert_eq!(c.out, Path::new("/out"));
        assert_eq!((c.lr, c.batch, c.max_epochs, c.patience), (3e-4, 64, 200, 5));
        assert_eq!(c.circuit, CircuitKind::CvRnn);
    }

    #[test]
    fn all_keys_parse_and_round_trip() {
        let text = "# comment\n\ntrain_data = t\nval_data = v\nout = o\ncircuit = int\nphi_init = per_timestep_random\n\
                    channels = 8\nframes = 8\ngate_kernel = 3\nlr = 0.001\nbatch = 4\nmax_epochs = 3\npatience = 2\nseed = 9\n\
                    n_train = 10\nn_val = 6\nsplay = all\nresume = r.ckpt\n";
        let c = parse(text).unwrap();
        assert_eq!(c.circuit, CircuitKind::Int);
        assert_eq!(c.phi_init, PhiInit::PerTimestepRandom);
        assert_eq!((c.channels, c.frames, c.batch, c.seed, c.n_train, c.n_val), (8, 8, 4, 9, Some(10), Some(6)));
        assert_eq!(c.splay, Splay::AllHarmonics);
        assert_eq!(c.gate_kernel, 3);
        assert_eq!(parse(&c.to_text()).unwrap(), c);
        for (k, _, _) in KEYS {
            assert!(text.contains(&format!("{k} =")), "{k} untested");
            assert!(keys_help().contains(k));
        }
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(parse("train_data\n"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(parse("x = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(parse("seed = 1\nseed = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(parse("batch = 0"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("lr = -1"), Err(ConfigError::Value { .. })));
        assert!(matches!(parse("circuit = lstm"), Err(ConfigError::Value { .. })));
        assert_eq!(parse("val_data = v"), Err(ConfigError::Missing("train_data")));
        assert!(parse("train_data=t\nval_data=v\nframes=33").is_err());
        assert!(matches!(parse("gate_kernel = 2"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn desk_profile() {
        let c = TrainConfig::desk("t", "v", "o");
        assert_eq!((c.n_train, c.n_val, c.max_epochs), (Some(10_000), Some(2_000), 30));
    }
}
