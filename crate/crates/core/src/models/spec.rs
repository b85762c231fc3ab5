use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::check_dropout_rate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// BiLSTM and convolution bank in parallel, fused by attention.
    Proposed,
    Ffnn,
    Cnn,
    /// BiLSTM with max-pooling over time.
    Bilstm,
    /// BiLSTM with self-attention and no convolutional context.
    BilstmAttn,
    /// Convolution bank stacked on the BiLSTM output.
    SerialBilstmCnn,
    SerialBilstmCnnAttn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Proposed,
        ModelKind::Ffnn,
        ModelKind::Cnn,
        ModelKind::Bilstm,
        ModelKind::BilstmAttn,
        ModelKind::SerialBilstmCnn,
        ModelKind::SerialBilstmCnnAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Proposed => "proposed",
            ModelKind::Ffnn => "ffnn",
            ModelKind::Cnn => "cnn",
            ModelKind::Bilstm => "bilstm",
            ModelKind::BilstmAttn => "bilstm_attn",
            ModelKind::SerialBilstmCnn => "serial_bilstm_cnn",
            ModelKind::SerialBilstmCnnAttn => "serial_bilstm_cnn_attn",
        }
    }

    pub fn uses_lstm(self) -> bool {
        !matches!(self, ModelKind::Ffnn | ModelKind::Cnn)
    }

    pub fn uses_conv(self) -> bool {
        matches!(
            self,
            ModelKind::Proposed
                | ModelKind::Cnn
                | ModelKind::SerialBilstmCnn
                | ModelKind::SerialBilstmCnnAttn
        )
    }

    pub fn uses_attention(self) -> bool {
        matches!(
            self,
            ModelKind::Proposed | ModelKind::BilstmAttn | ModelKind::SerialBilstmCnnAttn
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind \"{s}\"")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::Config(format!(
                "unknown pooling \"{s}\" (expected mean or max)"
            ))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        })
    }
}

/// Architecture and size of a model. Parameters are a pure function of the
/// spec (including `seed`) unless an embedding table is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub conv_widths: Vec<usize>,
    pub conv_channels: usize,
    pub attn_fc_dim: usize,
    pub ffnn_hidden: usize,
    pub ffnn_pooling: Pooling,
    pub dropout: f64,
    pub num_classes: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelSpec {
    /// Full-size defaults for the given kind and vocabulary.
    pub fn new(kind: ModelKind, vocab_size: usize) -> Self {
        Self {
            kind,
            vocab_size,
            embed_dim: 300,
            lstm_hidden: 128,
            conv_widths: vec![3, 4, 5],
            conv_channels: 256,
            attn_fc_dim: 128,
            ffnn_hidden: 128,
            ffnn_pooling: Pooling::Mean,
            dropout: 0.3,
            num_classes: 4,
            max_len: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("conv_channels", self.conv_channels),
            ("attn_fc_dim", self.attn_fc_dim),
            ("ffnn_hidden", self.ffnn_hidden),
            ("num_classes", self.num_classes),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "vocab_size must cover <pad> and <unk>".into(),
            ));
        }
        if self.conv_widths.is_empty()
            || self.conv_widths[0] == 0
            || self.conv_widths.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(format!(
                "conv widths must be positive and strictly increasing, got {:?}",
                self.conv_widths
            )));
        }
        if self.kind.uses_conv() && self.max_len < *self.conv_widths.last().expect("non-empty") {
            return Err(Error::Config(format!(
                "max_len {} is shorter than the widest filter",
                self.max_len
            )));
        }
        check_dropout_rate(self.dropout)
    }

    /// Width of the BiLSTM output sequence.
    pub fn seq_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    /// Width of the pooled convolution output.
    pub fn conv_dim(&self) -> usize {
        self.conv_widths.len() * self.conv_channels
    }
}
