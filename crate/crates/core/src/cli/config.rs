use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec, Pooling};
use crate::train::{Selection, TrainConfig};

/// Everything a command needs, read from `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub min_count: usize,

    pub model: ModelKind,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub conv_widths: Vec<usize>,
    pub conv_channels: usize,
    pub attn_fc_dim: usize,
    pub ffnn_hidden: usize,
    pub ffnn_pooling: Pooling,
    pub dropout: f64,
    pub max_len: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub shuffle: bool,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ModelSpec::new(ModelKind::Proposed, 2);
        let train = TrainConfig::default();
        Self {
            train: None,
            val: None,
            test: None,
            embeddings: None,
            output_dir: PathBuf::from("runs"),
            checkpoint: None,
            min_count: 1,
            model: spec.kind,
            embed_dim: spec.embed_dim,
            lstm_hidden: spec.lstm_hidden,
            conv_widths: spec.conv_widths,
            conv_channels: spec.conv_channels,
            attn_fc_dim: spec.attn_fc_dim,
            ffnn_hidden: spec.ffnn_hidden,
            ffnn_pooling: spec.ffnn_pooling,
            dropout: spec.dropout,
            max_len: spec.max_len,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr0,
            plateau_factor: train.plateau_factor,
            plateau_patience: train.plateau_patience,
            shuffle: train.shuffle,
            selection: train.selection,
            seed: train.seed,
        }
    }
}

pub const KEYS: &[&str] = &[
    "train",
    "val",
    "test",
    "embeddings",
    "output_dir",
    "checkpoint",
    "min_count",
    "model",
    "embed_dim",
    "lstm_hidden",
    "conv_widths",
    "conv_channels",
    "attn_fc_dim",
    "ffnn_hidden",
    "ffnn_pooling",
    "dropout",
    "max_len",
    "epochs",
    "batch_size",
    "lr",
    "plateau_factor",
    "plateau_patience",
    "shuffle",
    "selection",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value \"{value}\" for {key}"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Defaults overlaid with the entries of `text`. `origin` names the
    /// source in diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    origin,
                    i + 1,
                    format!("expected key=value, found \"{line}\""),
                )
            })?;
            cfg.try_set(key.trim(), value.trim())
                .map_err(|msg| Error::parse(origin, i + 1, msg))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, entry: &str) -> Result<()> {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override \"{entry}\" is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.try_set(key, value).map_err(Error::Config)
    }

    fn try_set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "train" => self.train = path(value),
            "val" => self.val = path(value),
            "test" => self.test = path(value),
            "embeddings" => self.embeddings = path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = path(value),
            "min_count" => self.min_count = num(key, value)?,
            "model" => self.model = value.parse().map_err(|e: Error| e.to_string())?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "lstm_hidden" => self.lstm_hidden = num(key, value)?,
            "conv_widths" => {
                self.conv_widths = value
                    .split(',')
                    .map(|w| num(key, w.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "conv_channels" => self.conv_channels = num(key, value)?,
            "attn_fc_dim" => self.attn_fc_dim = num(key, value)?,
            "ffnn_hidden" => self.ffnn_hidden = num(key, value)?,
            "ffnn_pooling" => {
                self.ffnn_pooling = value.parse().map_err(|e: Error| e.to_string())?
            }
            "dropout" => self.dropout = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "plateau_factor" => self.plateau_factor = num(key, value)?,
            "plateau_patience" => self.plateau_patience = num(key, value)?,
            "shuffle" => self.shuffle = num(key, value)?,
            "selection" => self.selection = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(format!("unknown key \"{key}\"")),
        }
        Ok(())
    }

    pub fn model_spec(
        &self,
        kind: ModelKind,
        vocab_size: usize,
        num_classes: usize,
    ) -> Result<ModelSpec> {
        let spec = ModelSpec {
            kind,
            vocab_size,
            embed_dim: self.embed_dim,
            lstm_hidden: self.lstm_hidden,
            conv_widths: self.conv_widths.clone(),
            conv_channels: self.conv_channels,
            attn_fc_dim: self.attn_fc_dim,
            ffnn_hidden: self.ffnn_hidden,
            ffnn_pooling: self.ffnn_pooling,
            dropout: self.dropout,
            num_classes,
            max_len: self.max_len,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
            seed: self.seed,
            shuffle: self.shuffle,
            selection: self.selection,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Where `train` writes and `evaluate`/`predict` read the model.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.atnf"))
    }

    pub fn require(&self, which: &str) -> Result<&Path> {
        let p = match which {
            "train" => &self.train,
            "val" => &self.val,
            "test" => &self.test,
            _ => &None,
        };
        p.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "config key \"{which}\" is required for this command"
            ))
        })
    }
}
