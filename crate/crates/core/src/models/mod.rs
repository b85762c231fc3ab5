//! The proposed parallel architecture and six neural baselines behind one
//! forward-pass interface.

mod check;
mod spec;

pub use check::{grad_check_model, toy_batch, toy_spec, ModelGradReport, FD_RESOLVED};
pub use spec::{ModelKind, ModelSpec, Pooling};

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{
    attention_fuse, bilstm, conv_bank, dense, dropout, embed, masked_max_over_time,
    masked_mean_over_time, Activation, AttentionParams, ConvBankParams, LstmParams, ParamNodes,
    ParamStore, SeqMask,
};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::rng::{seeded, Stream};
use crate::textpipe::{random_embeddings, EncodedBatch};

pub const EMBEDDING: &str = "embedding.weight";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `[B×C]` pre-softmax scores.
    pub logits: NodeId,
    /// `[B×C]` class probabilities.
    pub probs: NodeId,
    /// `[B×L]` attention weights, for kinds with an attention layer.
    pub alpha: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// `[B×C]`
    pub probs: Tensor,
    /// Per-document weights over the padded length.
    pub attention: Option<Vec<Vec<f64>>>,
}

impl Model {
    /// Builds with the seeded random embedding table.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let table = random_embeddings(spec.vocab_size, spec.embed_dim, spec.seed);
        Self::with_embeddings(spec, table)
    }

    /// Builds around a prepared `[|V|×d]` embedding table; every other
    /// parameter is drawn from the spec's seed.
    pub fn with_embeddings(spec: ModelSpec, table: Tensor) -> Result<Self> {
        spec.validate()?;
        if table.shape() != [spec.vocab_size, spec.embed_dim] {
            return Err(Error::Dimension(format!(
                "embedding table {:?} does not match [{}×{}]",
                table.shape(),
                spec.vocab_size,
                spec.embed_dim
            )));
        }
        let rng = &mut seeded(spec.seed, Stream::Init);
        let mut params = ParamStore::new();
        params.insert(EMBEDDING, table)?;
        let (d, seq, ctx) = (spec.embed_dim, spec.seq_dim(), spec.conv_dim());
        let kind = spec.kind;
        if kind.uses_lstm() {
            LstmParams::init(&mut params, "lstm.fwd", d, spec.lstm_hidden, rng)?;
            LstmParams::init(&mut params, "lstm.bwd", d, spec.lstm_hidden, rng)?;
        }
        if kind.uses_conv() {
            let input = if kind == ModelKind::Proposed || kind == ModelKind::Cnn {
                d
            } else {
                seq
            };
            ConvBankParams::init(
                &mut params,
                "conv",
                &spec.conv_widths,
                input,
                spec.conv_channels,
                rng,
            )?;
        }
        if kind.uses_attention() {
            let context = if kind == ModelKind::BilstmAttn {
                0
            } else {
                ctx
            };
            AttentionParams::init(
                &mut params,
                "attention",
                seq,
                context,
                spec.attn_fc_dim,
                rng,
            )?;
        }
        if kind == ModelKind::Ffnn {
            params.insert("ffnn.w", crate::layers::glorot(d, spec.ffnn_hidden, rng))?;
            params.insert("ffnn.b", Tensor::zeros(&[spec.ffnn_hidden]))?;
        }
        let head_in = head_input(&spec);
        params.insert(
            "head.w",
            crate::layers::glorot(head_in, spec.num_classes, rng),
        )?;
        params.insert("head.b", Tensor::zeros(&[spec.num_classes]))?;
        Ok(Self { spec, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// The same parameters under a different padded length.
    pub fn with_max_len(&self, max_len: usize) -> Result<Self> {
        let mut m = self.clone();
        m.spec.max_len = max_len;
        m.spec.validate()?;
        Ok(m)
    }

    /// Wires the architecture onto `g` using already-registered parameters.
    /// Dropout draws from `rng` only when `training` is set.
    pub fn forward_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        nodes: &ParamNodes,
        batch: &EncodedBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardNodes> {
        let spec = &self.spec;
        let rate = spec.dropout;
        let mask = SeqMask::from_batch(batch);
        let e = embed(g, nodes.get(EMBEDDING)?, batch)?;
        let lstm = |g: &mut Graph, rng: &mut R| -> Result<NodeId> {
            let fwd = LstmParams::bind(nodes, "lstm.fwd")?;
            let bwd = LstmParams::bind(nodes, "lstm.bwd")?;
            let h = bilstm(g, e, &fwd, &bwd, &mask)?;
            dropout(g, h, rate, training, rng)
        };
        let conv = |g: &mut Graph, x: NodeId, rng: &mut R| -> Result<NodeId> {
            let bank = ConvBankParams::bind(nodes, "conv", &spec.conv_widths)?;
            let c = conv_bank(g, x, &bank, &mask)?;
            dropout(g, c, rate, training, rng)
        };

        let mut alpha = None;
        let features = match spec.kind {
            ModelKind::Proposed => {
                let h = lstm(g, rng)?;
                let c = conv(g, e, rng)?;
                let att = attention_fuse(
                    g,
                    h,
                    Some(c),
                    &mask,
                    &AttentionParams::bind(nodes, "attention", true)?,
                )?;
                alpha = Some(att.alpha);
                att.output
            }
            ModelKind::Ffnn => {
                let pooled = match spec.ffnn_pooling {
                    Pooling::Mean => masked_mean_over_time(g, e, &mask)?,
                    Pooling::Max => masked_max_over_time(g, e, &mask)?,
                };
                let hidden = dense(
                    g,
                    pooled,
                    nodes.get("ffnn.w")?,
                    nodes.get("ffnn.b")?,
                    Activation::Relu,
                )?;
                dropout(g, hidden, rate, training, rng)?
            }
            ModelKind::Cnn => conv(g, e, rng)?,
            ModelKind::Bilstm => {
                let h = lstm(g, rng)?;
                masked_max_over_time(g, h, &mask)?
            }
            ModelKind::BilstmAttn => {
                let h = lstm(g, rng)?;
                let att = attention_fuse(
                    g,
                    h,
                    None,
                    &mask,
                    &AttentionParams::bind(nodes, "attention", false)?,
                )?;
                alpha = Some(att.alpha);
                att.output
            }
            ModelKind::SerialBilstmCnn => {
                let h = lstm(g, rng)?;
                conv(g, h, rng)?
            }
            ModelKind::SerialBilstmCnnAttn => {
                let h = lstm(g, rng)?;
                let c = conv(g, h, rng)?;
                let att = attention_fuse(
                    g,
                    h,
                    Some(c),
                    &mask,
                    &AttentionParams::bind(nodes, "attention", true)?,
                )?;
                alpha = Some(att.alpha);
                att.output
            }
        };
        let logits = dense(
            g,
            features,
            nodes.get("head.w")?,
            nodes.get("head.b")?,
            Activation::None,
        )?;
        let probs = g.softmax(logits, 1)?;
        Ok(ForwardNodes {
            logits,
            probs,
            alpha,
        })
    }

    fn check_batch(&self, batch: &EncodedBatch) -> Result<()> {
        if batch.max_len() != self.spec.max_len {
            return Err(Error::Contract(format!(
                "batch padded to {} but the model expects {}",
                batch.max_len(),
                self.spec.max_len
            )));
        }
        if let Some(&bad) = batch.ids().iter().find(|&&i| i >= self.spec.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.spec.vocab_size
            )));
        }
        Ok(())
    }

    /// Inference-mode graph: the parameters enter as constants.
    fn inference(&self, batch: &EncodedBatch) -> Result<(Graph, ForwardNodes)> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let ids = self
            .params
            .tensors_arc()
            .into_iter()
            .map(|t| g.constant(t))
            .collect();
        let nodes = self.params.bind(ids);
        // no randomness is consumed when training is false
        let mut rng = seeded(0, Stream::Custom(0));
        let out = self.forward_graph(&mut g, &nodes, batch, false, &mut rng)?;
        Ok((g, out))
    }

    /// Class probabilities `[B×C]` with dropout disabled.
    pub fn forward(&self, batch: &EncodedBatch) -> Result<Tensor> {
        let (g, out) = self.inference(batch)?;
        Ok(g.value(out.probs).clone())
    }

    /// Pre-softmax scores `[B×C]` with dropout disabled.
    pub fn logits(&self, batch: &EncodedBatch) -> Result<Tensor> {
        let (g, out) = self.inference(batch)?;
        Ok(g.value(out.logits).clone())
    }

    pub fn predict(&self, batch: &EncodedBatch) -> Result<Prediction> {
        let (g, out) = self.inference(batch)?;
        let probs = g.value(out.probs).clone();
        let labels = (0..batch.batch_size())
            .map(|b| argmax(probs.row(b)))
            .collect();
        let attention = out.alpha.map(|a| {
            let a = g.value(a);
            (0..batch.batch_size()).map(|b| a.row(b).to_vec()).collect()
        });
        Ok(Prediction {
            labels,
            probs,
            attention,
        })
    }
}

fn head_input(spec: &ModelSpec) -> usize {
    match spec.kind {
        ModelKind::Proposed | ModelKind::BilstmAttn | ModelKind::SerialBilstmCnnAttn => {
            spec.attn_fc_dim
        }
        ModelKind::Ffnn => spec.ffnn_hidden,
        ModelKind::Cnn | ModelKind::SerialBilstmCnn => spec.conv_dim(),
        ModelKind::Bilstm => spec.seq_dim(),
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch8() -> EncodedBatch {
        EncodedBatch::from_id_rows(
            &[vec![2, 5, 7, 3, 9, 11], vec![4, 1, 13, 6, 19]],
            vec![1, 3],
            8,
        )
        .unwrap()
    }

    #[test]
    fn full_size_parameter_registry() {
        let m = Model::build(ModelSpec::new(ModelKind::Proposed, 50)).unwrap();
        assert_eq!(m.params.get("attention.w1").unwrap().shape(), &[1, 256]);
        assert_eq!(m.params.get("attention.w2").unwrap().shape(), &[1, 768]);
        assert_eq!(
            m.params.num_scalars_with_prefix("attention."),
            256 + 768 + 1 + 256 * 128 + 128
        );
        assert_eq!(m.params.get("head.w").unwrap().shape(), &[128, 4]);
        let lstm = 2 * (300 * 512 + 128 * 512 + 512);
        assert_eq!(m.params.num_scalars_with_prefix("lstm."), lstm);
        let conv: usize = [3, 4, 5].iter().map(|k| k * 300 * 256 + 256).sum();
        assert_eq!(m.params.num_scalars_with_prefix("conv."), conv);
    }

    #[test]
    fn baseline_registries_are_structural() {
        let names = |kind| {
            let m = Model::build(toy_spec(kind, 0)).unwrap();
            m.params.names().map(String::from).collect::<Vec<_>>()
        };
        let bl = names(ModelKind::Bilstm);
        assert!(bl
            .iter()
            .all(|n| !n.starts_with("conv.") && !n.starts_with("attention.")));
        let ba = names(ModelKind::BilstmAttn);
        assert!(ba.iter().any(|n| n == "attention.w1") && !ba.iter().any(|n| n == "attention.w2"));
        let serial = Model::build(toy_spec(ModelKind::SerialBilstmCnn, 0)).unwrap();
        assert_eq!(serial.params.get("conv.w3").unwrap().shape(), &[3 * 8, 3]);
        let ffnn = names(ModelKind::Ffnn);
        assert!(ffnn.iter().all(|n| !n.starts_with("lstm.")));
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        for kind in ModelKind::ALL {
            let a = Model::build(toy_spec(kind, 9)).unwrap();
            let b = Model::build(toy_spec(kind, 9)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, Model::build(toy_spec(kind, 10)).unwrap());
        }
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let m = Model::build(toy_spec(ModelKind::Bilstm, 0)).unwrap();
        let b = m.params.get("lstm.fwd.bias").unwrap().data();
        assert_eq!(&b[..4], &[0.0; 4]);
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert_eq!(&b[8..], &[0.0; 8]);
    }

    #[test]
    fn forward_rows_are_distributions_and_inference_is_repeatable() {
        for kind in ModelKind::ALL {
            let m = Model::build(toy_spec(kind, 1)).unwrap();
            let p = m.forward(&toy_batch8()).unwrap();
            assert_eq!(p.shape(), &[2, 4]);
            for r in 0..2 {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(p, m.forward(&toy_batch8()).unwrap());
        }
    }

    #[test]
    fn trailing_padding_leaves_probabilities_unchanged() {
        for kind in ModelKind::ALL {
            let m = Model::build(toy_spec(kind, 2)).unwrap();
            let base = m.forward(&toy_batch8()).unwrap();
            for extra in [1, 7, 20] {
                let longer = m.with_max_len(8 + extra).unwrap();
                let p = longer
                    .forward(&toy_batch8().repad(8 + extra).unwrap())
                    .unwrap();
                assert!(p.max_abs_diff(&base) < 1e-10, "{kind} +{extra}");
            }
        }
    }

    #[test]
    fn batch_length_must_match_spec() {
        let m = Model::build(toy_spec(ModelKind::Cnn, 0)).unwrap();
        assert!(matches!(
            m.forward(&toy_batch8().repad(9).unwrap()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn every_kind_agrees_with_finite_differences_where_resolvable() {
        let check = |m: &Model, dropout: Option<u64>| {
            let r = grad_check_model(m, &toy_batch(), dropout).unwrap();
            assert!(
                r.resolved_max_rel_error() < 1e-4,
                "{}: {}",
                m.kind(),
                r.resolved_max_rel_error()
            );
            assert!(
                r.unresolved_max_abs_error() < 1e-10,
                "{}: {}",
                m.kind(),
                r.unresolved_max_abs_error()
            );
        };
        for kind in ModelKind::ALL {
            let m = Model::build(toy_spec(kind, 6)).unwrap();
            check(&m, Some(11));
            check(&m, None);
        }
        let mut spec = toy_spec(ModelKind::Ffnn, 6);
        spec.ffnn_pooling = Pooling::Max;
        check(&Model::build(spec).unwrap(), None);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.6, 0.2, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn attention_is_exposed_and_masked() {
        let m = Model::build(toy_spec(ModelKind::Proposed, 3)).unwrap();
        let pred = m.predict(&toy_batch8()).unwrap();
        let att = pred.attention.unwrap();
        assert_eq!(att.len(), 2);
        assert!(att[0][6..].iter().all(|&a| a == 0.0));
        assert!(att[1][5..].iter().all(|&a| a == 0.0));
        assert!(att[1][..5].iter().all(|&a| a > 0.0));
        let cnn = Model::build(toy_spec(ModelKind::Cnn, 3)).unwrap();
        assert!(cnn.predict(&toy_batch8()).unwrap().attention.is_none());
    }

    #[test]
    fn temperature_scaling_keeps_labels() {
        for kind in ModelKind::ALL {
            let m = Model::build(toy_spec(kind, 4)).unwrap();
            let batch = toy_batch8();
            let labels = m.predict(&batch).unwrap().labels;
            let logits = m.logits(&batch).unwrap();
            for t in [0.1, 0.5, 3.0, 50.0] {
                let mut g = Graph::new();
                let z = g.constant(logits.map(|v| v / t));
                let p = g.softmax(z, 1).unwrap();
                let scaled: Vec<usize> = (0..2).map(|r| argmax(g.value(p).row(r))).collect();
                assert_eq!(scaled, labels);
            }
        }
    }
}
