//! Loss, optimizer, plateau schedule, the epoch loop and evaluation metrics.

mod metrics;
mod optim;

pub use metrics::{
    compute_metrics, confusion_matrix, format_class_report, format_summary_row, summary_header,
    Metrics,
};
pub use optim::{AdamState, PlateauScheduler};

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax, Model};
use crate::numerics::{Graph, NodeId, Tensor, PROB_FLOOR};
use crate::rng::{seeded, Stream};
use crate::textpipe::{Dataset, EncodedDataset, Vocabulary};

/// Mean negative log-likelihood of `labels` under `probs` (`[B×C]`).
pub fn cross_entropy(g: &mut Graph, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.nll(probs, labels)
}

/// Which validation score picks the retained checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ValLoss,
    WeightedF1,
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val_loss" => Ok(Selection::ValLoss),
            "weighted_f1" => Ok(Selection::WeightedF1),
            _ => Err(Error::Config(format!(
                "unknown selection \"{s}\" (expected val_loss or weighted_f1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 128,
            lr0: 0.001,
            plateau_factor: 0.1,
            plateau_patience: 2,
            seed: 0,
            shuffle: true,
            selection: Selection::ValLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        PlateauScheduler::new(self.lr0, self.plateau_factor, self.plateau_patience).map(|_| ())
    }
}

/// One row of the training history. `lr` is the rate used during the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_wf1: f64,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_acc,val_wf1,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.val_wf1, r.lr
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch selected by [`TrainConfig::selection`].
    pub best: Model,
    /// 1-based epoch of `best`.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Loss and scores of a model over a dataset, dropout disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metrics: Metrics,
    pub predictions: Vec<usize>,
}

/// Runs the whole batch through one training step and returns the batch loss
/// measured before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &crate::textpipe::EncodedBatch,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    let grads = {
        let mut g = Graph::new();
        let nodes = model.params.register(&mut g);
        let out = model.forward_graph(&mut g, &nodes, batch, true, rng)?;
        let loss = cross_entropy(&mut g, out.probs, batch.labels())?;
        let loss_value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let tensors: Vec<Tensor> = nodes
            .ids()
            .iter()
            .map(|&id| grads.take(id).expect("every parameter leaf has a gradient"))
            .collect();
        (tensors, loss_value)
    };
    adam.step(&mut model.params, &grads.0)?;
    Ok(grads.1)
}

/// Trains from `model`'s current parameters, calling `on_epoch` after each
/// epoch's validation pass.
pub fn train_with(
    model: &Model,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let classes = model.spec.num_classes;
    if let Some(&bad) = train
        .labels
        .iter()
        .chain(&val.labels)
        .find(|&&l| l >= classes)
    {
        return Err(Error::Contract(format!(
            "label {bad} outside the model's {classes} classes"
        )));
    }
    for (name, data) in [("training", train), ("validation", val)] {
        if data.max_len != model.spec.max_len {
            return Err(Error::Contract(format!(
                "{name} set encoded to length {} but the model expects {}",
                data.max_len, model.spec.max_len
            )));
        }
    }

    let mut current = model.clone();
    let mut adam = AdamState::new(&current.params, cfg.lr0)?;
    let mut sched = PlateauScheduler::new(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model, usize, f64)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        adam.lr = lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut seeded(cfg.seed, Stream::Shuffle(epoch)));
        }
        let mut drop_rng = seeded(cfg.seed, Stream::Dropout(epoch));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.batch(chunk)?;
            loss_sum +=
                chunk.len() as f64 * train_step(&mut current, &mut adam, &batch, &mut drop_rng)?;
        }
        let eval = evaluate(&current, val, cfg.batch_size)?;
        sched.observe(eval.loss);

        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: eval.loss,
            val_acc: eval.metrics.accuracy,
            val_wf1: eval.metrics.weighted_f1,
            lr,
        };
        on_epoch(&record);
        let score = match cfg.selection {
            Selection::ValLoss => eval.loss,
            Selection::WeightedF1 => -eval.metrics.weighted_f1,
        };
        if best.as_ref().is_none_or(|(_, _, s)| score < *s) {
            best = Some((current.clone(), epoch, score));
        }
        history.push(record);
    }
    let (best, best_epoch, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

pub fn train(
    model: &Model,
    train: &EncodedDataset,
    val: &EncodedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train, val, cfg, |_| {})
}

/// Mean cross-entropy, predictions and metrics over `data`.
pub fn evaluate(model: &Model, data: &EncodedDataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for batch in data.batches(batch_size) {
        let batch = batch?;
        let probs = model.forward(&batch)?;
        for (b, &label) in batch.labels().iter().enumerate() {
            let row = probs.row(b);
            if label >= row.len() {
                return Err(Error::Contract(format!(
                    "label {label} outside {} classes",
                    row.len()
                )));
            }
            loss -= row[label].max(PROB_FLOOR).ln();
            predictions.push(argmax(row));
        }
    }
    let confusion = confusion_matrix(&data.labels, &predictions, model.spec.num_classes)?;
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        metrics: compute_metrics(&confusion)?,
        predictions,
    })
}

/// Encodes a raw dataset at the model's padded length and evaluates it.
pub fn evaluate_dataset(
    model: &Model,
    data: &Dataset,
    vocab: &Vocabulary,
    batch_size: usize,
) -> Result<Evaluation> {
    evaluate(
        model,
        &EncodedDataset::new(data, vocab, model.spec.max_len),
        batch_size,
    )
}
