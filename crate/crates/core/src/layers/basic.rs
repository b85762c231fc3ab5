use rand::Rng;

use super::SeqMask;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ReduceKind, Tensor};
use crate::textpipe::EncodedBatch;

/// Embedding lookup `[B×L]` ids → `[B×L×d]`. PAD embeds to zero whatever row
/// 0 holds, and row 0 is never updated.
pub fn embed(g: &mut Graph, table: NodeId, batch: &EncodedBatch) -> Result<NodeId> {
    g.gather_rows(
        table,
        batch.ids(),
        &[batch.batch_size(), batch.max_len()],
        true,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

/// `activation(x·w + b)` for `x: [B×p]`, `w: [p×q]`, `b: [q]`.
pub fn dense(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    let z = g.add(xw, b)?;
    Ok(match activation {
        Activation::None => z,
        Activation::Relu => g.relu(z),
        Activation::Softmax => g.softmax(z, 1)?,
    })
}

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// otherwise `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let scale = 1.0 / (1.0 - rate);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        if rng.random::<f64>() >= rate {
            *v = scale;
        }
    }
    t
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted dropout in training mode; identity otherwise.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: NodeId,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.shape(x), rate, rng);
    let m = g.constant(mask);
    g.mul(x, m)
}

/// Maximum over real timesteps of `[B×L×D]` → `[B×D]`.
pub fn masked_max_over_time(g: &mut Graph, x: NodeId, mask: &SeqMask) -> Result<NodeId> {
    let d = *g.shape(x).last().expect("rank 3");
    let keep = mask.keep_flags(d);
    let filled = g.mask_fill(x, &keep)?;
    g.reduce(ReduceKind::Max, filled, 1)
}

/// Mean over real timesteps of `[B×L×D]` → `[B×D]`.
pub fn masked_mean_over_time(g: &mut Graph, x: NodeId, mask: &SeqMask) -> Result<NodeId> {
    let d = *g.shape(x).last().expect("rank 3");
    let m = g.constant(mask.expand(d));
    let kept = g.mul(x, m)?;
    let total = g.reduce(ReduceKind::Sum, kept, 1)?;
    let mut inv = Tensor::zeros(&[mask.batch(), d]);
    for (b, &n) in mask.lengths().iter().enumerate() {
        inv.row_mut(b).fill(1.0 / n.max(1) as f64);
    }
    let inv = g.constant(inv);
    g.mul(total, inv)
}
