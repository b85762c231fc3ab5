use super::{Model, ModelKind, ModelSpec, Pooling};
use crate::error::Result;
use crate::numerics::{grad_samples, GradSample, DEFAULT_EPS};
use crate::rng::{seeded, Stream};
use crate::textpipe::EncodedBatch;

/// Small configuration for gradient checking: `|V| = 20`, `d = 8`, `H = 4`,
/// three channels per width, `L = 8`.
pub fn toy_spec(kind: ModelKind, seed: u64) -> ModelSpec {
    ModelSpec {
        kind,
        vocab_size: 20,
        embed_dim: 8,
        lstm_hidden: 4,
        conv_widths: vec![3, 4, 5],
        conv_channels: 3,
        attn_fc_dim: 4,
        ffnn_hidden: 6,
        ffnn_pooling: Pooling::Mean,
        dropout: 0.3,
        num_classes: 4,
        max_len: 8,
        seed,
    }
}

/// Two documents of lengths 8 and 6 for [`toy_spec`] models.
pub fn toy_batch() -> EncodedBatch {
    EncodedBatch::from_id_rows(
        &[vec![2, 5, 7, 3, 9, 11, 17, 1], vec![4, 1, 13, 6, 19, 8]],
        vec![1, 3],
        8,
    )
    .expect("valid toy batch")
}

/// Derivatives below this size are at or under the resolution of an
/// `eps = 1e-5` central difference on an O(1) loss in f64, which is about
/// `ulp(1)/(2·eps) ≈ 1e-11`.
pub const FD_RESOLVED: f64 = 1e-6;

/// Per-element comparison of backpropagated and central-difference
/// gradients of the batch cross-entropy.
#[derive(Debug, Clone)]
pub struct ModelGradReport {
    pub names: Vec<String>,
    pub samples: Vec<GradSample>,
}

impl ModelGradReport {
    /// Worst [`GradSample::rel_error`] over every scalar parameter.
    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, GradSample::rel_error)
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }

    /// Worst relative error among derivatives of magnitude at least
    /// [`FD_RESOLVED`].
    pub fn resolved_max_rel_error(&self) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.analytic.abs().max(s.numeric.abs()) >= FD_RESOLVED)
            .map(GradSample::rel_error)
            .fold(0.0, f64::max)
    }

    /// Worst absolute error among derivatives smaller than [`FD_RESOLVED`].
    pub fn unresolved_max_abs_error(&self) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.analytic.abs().max(s.numeric.abs()) < FD_RESOLVED)
            .map(GradSample::abs_error)
            .fold(0.0, f64::max)
    }

    pub fn param_name(&self, s: &GradSample) -> &str {
        &self.names[s.param]
    }
}

/// Checks every parameter of `model` on `batch`. With `dropout_seed`,
/// dropout is active and each evaluation replays the same masks.
pub fn grad_check_model(
    model: &Model,
    batch: &EncodedBatch,
    dropout_seed: Option<u64>,
) -> Result<ModelGradReport> {
    let tensors = model.params.tensors();
    let samples = grad_samples(&tensors, DEFAULT_EPS, |g, ids| {
        let nodes = model.params.bind(ids.to_vec());
        let mut rng = seeded(dropout_seed.unwrap_or(0), Stream::Custom(7));
        let out = model.forward_graph(g, &nodes, batch, dropout_seed.is_some(), &mut rng)?;
        g.nll(out.probs, batch.labels())
    })?;
    Ok(ModelGradReport {
        names: model.params.names().map(String::from).collect(),
        samples,
    })
}
