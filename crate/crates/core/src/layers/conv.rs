use rand::Rng;

use super::params::{glorot, ParamNodes, ParamStore};
use super::SeqMask;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ReduceKind, Tensor};

/// Graph handles for a bank of 1-D convolutions, one `(weight, bias)` pair
/// per width. Weights are `[k·d × C]`, so a window of `k` stacked rows maps
/// to `C` channels.
#[derive(Debug, Clone)]
pub struct ConvBankParams {
    pub widths: Vec<usize>,
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

impl ConvBankParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        input: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<()> {
        check_widths(widths)?;
        for &k in widths {
            store.insert(format!("{prefix}.w{k}"), glorot(k * input, channels, rng))?;
            store.insert(format!("{prefix}.b{k}"), Tensor::zeros(&[channels]))?;
        }
        Ok(())
    }

    pub fn bind(nodes: &ParamNodes, prefix: &str, widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let mut weights = Vec::with_capacity(widths.len());
        let mut biases = Vec::with_capacity(widths.len());
        for &k in widths {
            weights.push(nodes.get(&format!("{prefix}.w{k}"))?);
            biases.push(nodes.get(&format!("{prefix}.b{k}"))?);
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.is_empty() || widths[0] == 0 || widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "conv widths must be positive and strictly increasing, got {widths:?}"
        )));
    }
    Ok(())
}

/// Valid convolution per width, ReLU, then max over live windows; branches
/// concatenated in width order. `[B×L×d]` → `[B×(n·C)]`.
///
/// A window starting at `j` is live when it lies entirely inside the real
/// tokens. A document shorter than the width keeps only its first window,
/// which then overlaps padding; padded inputs are zero rows.
pub fn conv_bank(g: &mut Graph, x: NodeId, p: &ConvBankParams, mask: &SeqMask) -> Result<NodeId> {
    let &[b, l, d] = g.shape(x) else {
        return Err(Error::Dimension(format!(
            "conv input must be [B×L×d], got {:?}",
            g.shape(x)
        )));
    };
    if (b, l) != (mask.batch(), mask.len()) {
        return Err(Error::Dimension(format!(
            "conv input [{b}×{l}] does not match mask [{}×{}]",
            mask.batch(),
            mask.len()
        )));
    }
    let widest = *p.widths.last().expect("validated non-empty");
    if l < widest {
        return Err(Error::Contract(format!(
            "sequence length {l} is shorter than the widest filter {widest}"
        )));
    }
    let lengths = mask.lengths();
    let mut pooled = Vec::with_capacity(p.widths.len());
    for ((&k, &w), &bias) in p.widths.iter().zip(&p.weights).zip(&p.biases) {
        let channels = *g.shape(w).last().expect("rank 2");
        if g.shape(w) != [k * d, channels] {
            return Err(Error::Dimension(format!(
                "width-{k} filter {:?} does not fit input dim {d}",
                g.shape(w)
            )));
        }
        let windows = l - k + 1;
        let unfolded = g.unfold(x, k)?;
        let flat = g.reshape(unfolded, &[b * windows, k * d])?;
        let z = g.matmul(flat, w)?;
        let z = g.add(z, bias)?;
        let z = g.relu(z);
        let z = g.reshape(z, &[b, windows, channels])?;
        let mut keep = Vec::with_capacity(b * windows * channels);
        for &n in &lengths {
            for j in 0..windows {
                keep.extend(std::iter::repeat_n(j == 0 || j + k <= n, channels));
            }
        }
        let z = g.mask_fill(z, &keep)?;
        pooled.push(g.reduce(ReduceKind::Max, z, 1)?);
    }
    g.concat(&pooled, 1)
}
