use rand::Rng;

use super::basic::{dense, Activation};
use super::params::{glorot, ParamNodes, ParamStore};
use super::SeqMask;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};

/// Graph handles for additive attention with an optional pooled context.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    /// `[1×D]`, scores each timestep of the sequence.
    pub w1: NodeId,
    /// `[1×C]`, scores the pooled context; absent for plain self-attention.
    pub w2: Option<NodeId>,
    /// `[1]`
    pub b: NodeId,
    /// `[D×F]` reduction applied to the attended vector.
    pub fc_w: NodeId,
    /// `[F]`
    pub fc_b: NodeId,
}

impl AttentionParams {
    /// Pass `context = 0` to omit `w2`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        seq_dim: usize,
        context: usize,
        fc_dim: usize,
        rng: &mut R,
    ) -> Result<()> {
        store.insert(format!("{prefix}.w1"), glorot(1, seq_dim, rng))?;
        if context > 0 {
            store.insert(format!("{prefix}.w2"), glorot(1, context, rng))?;
        }
        store.insert(format!("{prefix}.b"), Tensor::zeros(&[1]))?;
        store.insert(format!("{prefix}.fc.w"), glorot(seq_dim, fc_dim, rng))?;
        store.insert(format!("{prefix}.fc.b"), Tensor::zeros(&[fc_dim]))
    }

    pub fn bind(nodes: &ParamNodes, prefix: &str, with_context: bool) -> Result<Self> {
        Ok(Self {
            w1: nodes.get(&format!("{prefix}.w1"))?,
            w2: if with_context {
                Some(nodes.get(&format!("{prefix}.w2"))?)
            } else {
                None
            },
            b: nodes.get(&format!("{prefix}.b"))?,
            fc_w: nodes.get(&format!("{prefix}.fc.w"))?,
            fc_b: nodes.get(&format!("{prefix}.fc.b"))?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[B×F]` after the ReLU reduction.
    pub output: NodeId,
    /// `[B×D]` attention-weighted mean of the sequence.
    pub attended: NodeId,
    /// `[B×L]` weights; zero at padded positions.
    pub alpha: NodeId,
}

/// Scores `u_t = tanh(w1·h_t + w2·c + b)`, softmax over real timesteps,
/// weighted mean of `h`, then `ReLU(fc(·))`.
///
/// `h: [B×L×D]`, `c: [B×C]`. The context is the same for every timestep.
pub fn attention_fuse(
    g: &mut Graph,
    h: NodeId,
    c: Option<NodeId>,
    mask: &SeqMask,
    p: &AttentionParams,
) -> Result<AttentionOutput> {
    let &[b, l, d] = g.shape(h) else {
        return Err(Error::Dimension(format!(
            "attention input must be [B×L×D], got {:?}",
            g.shape(h)
        )));
    };
    if (b, l) != (mask.batch(), mask.len()) {
        return Err(Error::Dimension(format!(
            "attention input [{b}×{l}] does not match mask [{}×{}]",
            mask.batch(),
            mask.len()
        )));
    }
    if mask.lengths().contains(&0) {
        return Err(Error::Contract(
            "attention over a document with no real tokens".into(),
        ));
    }

    let flat = g.reshape(h, &[b * l, d])?;
    let w1t = g.transpose(p.w1)?;
    let seq_score = g.matmul(flat, w1t)?;
    let mut score = g.reshape(seq_score, &[b, l])?;
    match (c, p.w2) {
        (Some(c), Some(w2)) => {
            let w2t = g.transpose(w2)?;
            let ctx = g.matmul(c, w2t)?;
            let ones = g.constant(Tensor::ones(&[1, l]));
            let ctx = g.matmul(ctx, ones)?;
            score = g.add(score, ctx)?;
        }
        (None, None) => {}
        _ => {
            return Err(Error::Contract(
                "context vector and w2 must be supplied together".into(),
            ))
        }
    }
    let score = g.add(score, p.b)?;
    let score = g.tanh(score);
    let score = g.mask_fill(score, &mask.keep_flags(1))?;
    let alpha = g.softmax(score, 1)?;

    let a3 = g.reshape(alpha, &[b, 1, l])?;
    let attended = g.batch_matmul(a3, h)?;
    let attended = g.reshape(attended, &[b, d])?;
    let output = dense(g, attended, p.fc_w, p.fc_b, Activation::Relu)?;
    Ok(AttentionOutput {
        output,
        attended,
        alpha,
    })
}
