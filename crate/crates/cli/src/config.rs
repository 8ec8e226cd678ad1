//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use
//! snake_case and match the long command-line flags with `-` replaced by
//! `_`. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use specbpp::curriculum::{Schedule, PHASES};
use specbpp::model::ModelConfig;
use specbpp::train::{FinetuneConfig, PretextMode, PretrainConfig, StopRule};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Finetune,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    /// 0 means `SPECBPP_THREADS` or all cores.
    pub threads: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub patience: usize,
    pub clip_norm: Option<f64>,
    pub freeze_encoder: bool,
    pub mode: String,
    pub segments: usize,
    pub thresholds: [f64; PHASES],
    pub t_min: f64,
    pub t_max: f64,
    pub phase_length: usize,
    pub stop_accuracy: Option<f64>,
    pub val_fraction: f64,
    pub split: (f64, f64, f64),
    pub attn_dim: usize,
    pub attn_heads: usize,
    pub ms_channels: usize,
    pub embed_dim: usize,
    pub ca_ratio: usize,
    pub sa_kernel: usize,
    pub ms_activation: bool,
    pub input_norm: bool,
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "dataset path (.sbpp container or .csv)"),
    ("out", "parent directory for run directories"),
    ("checkpoint", "checkpoint directory to start from"),
    ("seed", "root random seed"),
    ("threads", "worker threads, 0 = SPECBPP_THREADS or all cores"),
    ("epochs", "training epochs"),
    ("batch_size", "samples per optimization step"),
    ("lr", "initial learning rate"),
    ("momentum", "SGD momentum"),
    ("patience", "fine-tuning early-stopping patience in epochs"),
    ("clip_norm", "fine-tuning gradient norm limit per step (none = off)"),
    ("freeze_encoder", "fine-tune only the regression head"),
    ("mode", "pretraining mode: curriculum or direct"),
    ("segments", "segment count in direct mode"),
    ("thresholds", "curriculum accuracy gates, one value or five comma-separated"),
    ("t_min", "lowest sampling temperature"),
    ("t_max", "highest sampling temperature"),
    ("phase_length", "epochs for the temperature ramp within a phase"),
    ("stop_accuracy", "stop pretraining once validation exact-match reaches this at the current phase (none = off)"),
    ("val_fraction", "pretraining validation fraction"),
    ("split", "fine-tuning train,val,test fractions"),
    ("attn_dim", "spectral attention token width"),
    ("attn_heads", "spectral attention heads"),
    ("ms_channels", "channels per multi-scale branch"),
    ("embed_dim", "embedding size"),
    ("ca_ratio", "channel-attention reduction ratio"),
    ("sa_kernel", "spatial-attention kernel size"),
    ("ms_activation", "ReLU on multi-scale branches"),
    ("input_norm", "standardize each pixel spectrum"),
];

impl RunConfig {
    pub fn defaults(cmd: Command) -> Self {
        let model = ModelConfig::default();
        let pre = PretrainConfig::default();
        let fine = FinetuneConfig::default();
        let schedule = Schedule::default();
        let (epochs, lr) = match cmd {
            Command::Pretrain => (pre.epochs, pre.lr),
            Command::Finetune | Command::Eval => (fine.epochs, fine.lr),
        };
        Self {
            data: None,
            out: PathBuf::from("runs"),
            checkpoint: None,
            seed: 0,
            threads: 0,
            epochs,
            batch_size: pre.batch_size,
            lr,
            momentum: pre.momentum,
            patience: fine.patience,
            clip_norm: fine.clip_norm,
            freeze_encoder: false,
            mode: "curriculum".into(),
            segments: 3,
            thresholds: [0.99; PHASES],
            t_min: schedule.t_min,
            t_max: schedule.t_max,
            phase_length: schedule.phase_length_hint,
            stop_accuracy: None,
            val_fraction: 0.15,
            split: (0.7, 0.15, 0.15),
            attn_dim: model.attn_dim,
            attn_heads: model.attn_heads,
            ms_channels: model.ms_channels,
            embed_dim: model.embed_dim,
            ca_ratio: model.ca_ratio,
            sa_kernel: model.sa_kernel,
            ms_activation: model.ms_activation,
            input_norm: model.input_norm,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let bad = |what: &str| CliError::config(format!("{key}: expected {what}, got {v:?}"));
        let num = |_: ()| v.parse::<f64>().ok().filter(|x| x.is_finite());
        let int = |_: ()| v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let real = |_: ()| num(()).ok_or_else(|| bad("a number"));
        let flag = |_: ()| match v {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(bad("true or false")),
        };
        let path = |_: ()| if v.is_empty() { Err(bad("a path")) } else { Ok(PathBuf::from(v)) };
        match key {
            "data" => self.data = Some(path(())?),
            "out" => self.out = path(())?,
            "checkpoint" => self.checkpoint = Some(path(())?),
            "seed" => self.seed = v.parse().map_err(|_| bad("an unsigned integer"))?,
            "threads" => self.threads = int(())?,
            "epochs" => self.epochs = int(())?,
            "batch_size" => self.batch_size = int(())?,
            "lr" => self.lr = real(())?,
            "momentum" => self.momentum = real(())?,
            "patience" => self.patience = int(())?,
            "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(real(())?) },
            "freeze_encoder" => self.freeze_encoder = flag(())?,
            "mode" => match v {
                "curriculum" | "direct" => self.mode = v.to_string(),
                _ => return Err(bad("curriculum or direct")),
            },
            "segments" => self.segments = int(())?,
            "thresholds" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|_| bad("comma-separated numbers")))
                    .collect::<CliResult<_>>()?;
                self.thresholds = match parts.len() {
                    1 => [parts[0]; PHASES],
                    PHASES => parts.try_into().expect("length checked"),
                    _ => return Err(bad("one or five values")),
                };
            }
            "t_min" => self.t_min = real(())?,
            "t_max" => self.t_max = real(())?,
            "phase_length" => self.phase_length = int(())?,
            "stop_accuracy" => {
                self.stop_accuracy = if v == "none" { None } else { Some(real(())?) }
            }
            "val_fraction" => self.val_fraction = real(())?,
            "split" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|_| bad("three comma-separated fractions")))
                    .collect::<CliResult<_>>()?;
                let [a, b, c] = parts[..] else { return Err(bad("three comma-separated fractions")) };
                self.split = (a, b, c);
            }
            "attn_dim" => self.attn_dim = int(())?,
            "attn_heads" => self.attn_heads = int(())?,
            "ms_channels" => self.ms_channels = int(())?,
            "embed_dim" => self.embed_dim = int(())?,
            "ca_ratio" => self.ca_ratio = int(())?,
            "sa_kernel" => self.sa_kernel = int(())?,
            "ms_activation" => self.ms_activation = flag(())?,
            "input_norm" => self.input_norm = flag(())?,
            _ => return Err(CliError::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a config file.
    pub fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| {
                CliError::config(format!("{}:{}: {}", path.display(), i + 1, e.message))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::config(msg.to_string())) };
        check(self.epochs > 0, "epochs must be positive")?;
        check(self.batch_size > 0, "batch_size must be positive")?;
        check(self.lr > 0.0, "lr must be positive")?;
        check((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)")?;
        check(self.patience > 0, "patience must be positive")?;
        check(self.clip_norm.is_none_or(|c| c > 0.0), "clip_norm must be positive")?;
        check((3..=8).contains(&self.segments), "segments must be in [3, 8]")?;
        check(self.thresholds.iter().all(|t| (0.0..=1.0).contains(t)), "thresholds must be in [0, 1]")?;
        check(self.t_min > 0.0 && self.t_min <= self.t_max, "need 0 < t_min <= t_max")?;
        check(self.phase_length > 0, "phase_length must be positive")?;
        check(
            self.stop_accuracy.is_none_or(|a| (0.0..=1.0).contains(&a)),
            "stop_accuracy must be in [0, 1]",
        )?;
        check(self.val_fraction > 0.0 && self.val_fraction < 1.0, "val_fraction must be in (0, 1)")?;
        let (a, b, c) = self.split;
        check(
            [a, b, c].iter().all(|f| (0.0..=1.0).contains(f)) && (a + b + c - 1.0).abs() < 1e-9 && a > 0.0 && b > 0.0,
            "split must be three fractions summing to 1 with non-empty train and validation parts",
        )?;
        Ok(())
    }

    pub fn model_config(&self, height: usize, width: usize, bands: usize) -> ModelConfig {
        ModelConfig {
            bands,
            height,
            width,
            attn_dim: self.attn_dim,
            attn_heads: self.attn_heads,
            ms_channels: self.ms_channels,
            embed_dim: self.embed_dim,
            ca_ratio: self.ca_ratio,
            sa_kernel: self.sa_kernel,
            ms_activation: self.ms_activation,
            input_norm: self.input_norm,
        }
    }

    pub fn pretrain_config(&self, threads: usize) -> PretrainConfig {
        let mode = if self.mode == "direct" {
            PretextMode::Direct { n: self.segments }
        } else {
            PretextMode::Curriculum {
                thresholds: self.thresholds,
                schedule: Schedule {
                    t_min: self.t_min,
                    t_max: self.t_max,
                    phase_length_hint: self.phase_length,
                },
            }
        };
        let stop = self.stop_accuracy.map(|acc| StopRule {
            phase_n: if self.mode == "direct" { self.segments } else { 3 },
            exact_acc: acc,
        });
        PretrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            threads,
            val_seed: self.seed.wrapping_add(1),
            mode,
            stop,
        }
    }

    pub fn finetune_config(&self, threads: usize) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            patience: self.patience,
            freeze_encoder: self.freeze_encoder,
            clip_norm: self.clip_norm,
            threads,
        }
    }

    /// The resolved configuration in the same format it is read from.
    pub fn render(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into());
        let th: Vec<String> = self.thresholds.iter().map(|t| t.to_string()).collect();
        let values = [
            opt_path(&self.data),
            self.out.display().to_string(),
            opt_path(&self.checkpoint),
            self.seed.to_string(),
            self.threads.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.momentum.to_string(),
            self.patience.to_string(),
            self.clip_norm.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
            self.freeze_encoder.to_string(),
            self.mode.clone(),
            self.segments.to_string(),
            th.join(","),
            self.t_min.to_string(),
            self.t_max.to_string(),
            self.phase_length.to_string(),
            self.stop_accuracy.map(|a| a.to_string()).unwrap_or_else(|| "none".into()),
            self.val_fraction.to_string(),
            format!("{},{},{}", self.split.0, self.split.1, self.split.2),
            self.attn_dim.to_string(),
            self.attn_heads.to_string(),
            self.ms_channels.to_string(),
            self.embed_dim.to_string(),
            self.ca_ratio.to_string(),
            self.sa_kernel.to_string(),
            self.ms_activation.to_string(),
            self.input_norm.to_string(),
        ];
        let mut out = String::new();
        for ((k, _), v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
