//! Differentiable building blocks: embedding, BiLSTM, convolution bank,
//! attention fusion, dense heads and dropout.
//!
//! Every sequence layer takes a [`SeqMask`] and treats padded positions as
//! absent, so outputs are unchanged when a document gains trailing padding.

mod attention;
mod basic;
mod conv;
mod params;
mod recurrent;

pub use attention::{attention_fuse, AttentionOutput, AttentionParams};
pub use basic::{
    check_dropout_rate, dense, dropout, dropout_mask, embed, masked_max_over_time,
    masked_mean_over_time, Activation,
};
pub use conv::{conv_bank, ConvBankParams};
pub use params::{glorot, glorot_bound, ParamNodes, ParamStore};
pub use recurrent::{bilstm, lstm, LstmParams};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::textpipe::EncodedBatch;

/// Row-major `[B×L]` 0/1 mask whose rows are prefixes of 1s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqMask {
    batch: usize,
    len: usize,
    mask: Vec<u8>,
}

impl SeqMask {
    pub fn new(batch: usize, len: usize, mask: Vec<u8>) -> Result<Self> {
        if mask.len() != batch * len || len == 0 {
            return Err(Error::Dimension(format!(
                "mask of {} entries cannot be [{batch}×{len}]",
                mask.len()
            )));
        }
        for row in mask.chunks(len) {
            let real = row.iter().take_while(|&&m| m == 1).count();
            if row[real..].iter().any(|&m| m != 0) {
                return Err(Error::Contract("mask row is not a prefix of 1s".into()));
            }
        }
        Ok(Self { batch, len, mask })
    }

    /// Mask with every position real.
    pub fn full(batch: usize, len: usize) -> Self {
        Self {
            batch,
            len,
            mask: vec![1; batch * len],
        }
    }

    pub fn from_batch(batch: &EncodedBatch) -> Self {
        Self {
            batch: batch.batch_size(),
            len: batch.max_len(),
            mask: batch.mask().to_vec(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.mask
    }

    pub fn is_real(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.len + t] == 1
    }

    /// Real-token count per row.
    pub fn lengths(&self) -> Vec<usize> {
        self.mask
            .chunks(self.len)
            .map(|r| r.iter().filter(|&&m| m == 1).count())
            .collect()
    }

    /// Mask entries at timestep `t`, one per row.
    pub fn column(&self, t: usize) -> Vec<u8> {
        (0..self.batch)
            .map(|b| self.mask[b * self.len + t])
            .collect()
    }

    /// Flags for a `[B×L×width]` tensor, repeating each mask entry `width` times.
    pub fn keep_flags(&self, width: usize) -> Vec<bool> {
        self.mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m == 1, width))
            .collect()
    }

    /// The mask as a `[B×L×width]` tensor of 0s and 1s.
    pub fn expand(&self, width: usize) -> Tensor {
        let data = self
            .mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(f64::from(m), width))
            .collect();
        Tensor::new(vec![self.batch, self.len, width], data).expect("shape matches data")
    }
}
