use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::{grad_check_model, toy_batch, toy_spec, Model, ModelKind};
use crate::nb::{mnb_fit, mnb_predict, text_ids, FeatureMode, Featurizer};
use crate::textpipe::{
    build_vocab, load_dataset, load_dataset_with_labels, load_embeddings, Dataset, EncodedBatch,
    EncodedDataset,
};
use crate::train::{
    compute_metrics, confusion_matrix, evaluate, format_class_report, format_summary_row,
    history_csv, summary_header, train_with, Metrics,
};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Prepare,
    Train,
    Evaluate,
    Predict,
    Gradcheck,
    Baselines,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Prepare,
        Command::Train,
        Command::Evaluate,
        Command::Predict,
        Command::Gradcheck,
        Command::Baselines,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Predict => "predict",
            Command::Gradcheck => "gradcheck",
            Command::Baselines => "baselines",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command \"{s}\"")))
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Executes `cmd`. Returns `Ok(false)` when the command ran but its check
/// failed, which the binary turns into a nonzero exit.
pub fn run(
    cmd: Command,
    cfg: &RunConfig,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<bool> {
    match cmd {
        Command::Prepare => prepare(cfg, out).map(|_| true),
        Command::Train => train_cmd(cfg, out).map(|_| true),
        Command::Evaluate => evaluate_cmd(cfg, out).map(|_| true),
        Command::Predict => predict(cfg, input, out).map(|_| true),
        Command::Gradcheck => gradcheck(out),
        Command::Baselines => baselines(cfg, out).map(|_| true),
    }
}

fn prepare(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let train = load_dataset(cfg.require("train")?)?;
    let vocab = build_vocab(&train, cfg.min_count)?;
    let mut splits = vec![("train", train.label_counts())];
    for (name, path) in [("val", &cfg.val), ("test", &cfg.test)] {
        if let Some(p) = path {
            splits.push((
                name,
                load_dataset_with_labels(p, &train.label_names)?.label_counts(),
            ));
        }
    }
    let width = train
        .label_names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(8);
    let mut header = format!("{:<width$}", "label");
    for (name, _) in &splits {
        header.push_str(&format!(" {name:>14}"));
    }
    writeln!(out, "{header}").map_err(io_err)?;
    for (c, label) in train.label_names.iter().enumerate() {
        let mut row = format!("{label:<width$}");
        for (_, counts) in &splits {
            let total: usize = counts.iter().sum();
            row.push_str(&format!(
                " {:>6} ({:>5.2}%)",
                counts[c],
                100.0 * counts[c] as f64 / total as f64
            ));
        }
        writeln!(out, "{row}").map_err(io_err)?;
    }
    let mut totals = format!("{:<width$}", "total");
    for (_, counts) in &splits {
        totals.push_str(&format!(" {:>14}", counts.iter().sum::<usize>()));
    }
    writeln!(out, "{totals}").map_err(io_err)?;
    writeln!(
        out,
        "vocabulary: {} entries (min_count {})",
        vocab.len(),
        cfg.min_count
    )
    .map_err(io_err)?;
    Ok(())
}

struct Corpus {
    train: Dataset,
    val: Dataset,
    /// Held-out split used for reporting: `test` when configured, else `val`.
    eval: Dataset,
    vocab: crate::textpipe::Vocabulary,
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let train = load_dataset(cfg.require("train")?)?;
    let val = load_dataset_with_labels(cfg.require("val")?, &train.label_names)?;
    let eval = match &cfg.test {
        Some(p) => load_dataset_with_labels(p, &train.label_names)?,
        None => val.clone(),
    };
    let vocab = build_vocab(&train, cfg.min_count)?;
    Ok(Corpus {
        train,
        val,
        eval,
        vocab,
    })
}

fn fresh_model(cfg: &RunConfig, kind: ModelKind, corpus: &Corpus) -> Result<Model> {
    let spec = cfg.model_spec(kind, corpus.vocab.len(), corpus.train.num_classes())?;
    let table = load_embeddings(
        cfg.embeddings.as_deref(),
        &corpus.vocab,
        spec.embed_dim,
        spec.seed,
    )?;
    Model::with_embeddings(spec, table)
}

fn fit(
    cfg: &RunConfig,
    kind: ModelKind,
    corpus: &Corpus,
    out: &mut dyn Write,
    verbose: bool,
) -> Result<crate::train::TrainOutcome> {
    let model = fresh_model(cfg, kind, corpus)?;
    let tc = cfg.train_config()?;
    let train = EncodedDataset::new(&corpus.train, &corpus.vocab, cfg.max_len);
    let val = EncodedDataset::new(&corpus.val, &corpus.vocab, cfg.max_len);
    let mut write_err = None;
    let outcome = train_with(&model, &train, &val, &tc, |r| {
        if verbose && write_err.is_none() {
            if let Err(e) = writeln!(
                out,
                "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  val_wf1 {:.4}  lr {:e}",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.val_wf1, r.lr
            ) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    Ok(outcome)
}

fn train_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let outcome = fit(cfg, cfg.model, &corpus, out, true)?;
    let ckpt = Checkpoint::new(outcome.best, corpus.vocab, corpus.train.label_names)?;
    let ckpt_path = cfg.checkpoint_path();
    ckpt.save(&ckpt_path)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let hist_path = cfg.output_dir.join("history.csv");
    fs::write(&hist_path, history_csv(&outcome.history)).map_err(|e| Error::io(&hist_path, e))?;
    writeln!(
        out,
        "best epoch {} saved to {}\nhistory written to {}",
        outcome.best_epoch,
        ckpt_path.display(),
        hist_path.display()
    )
    .map_err(io_err)
}

fn evaluate_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(cfg.checkpoint_path())?;
    let path = match &cfg.test {
        Some(p) => p.as_path(),
        None => cfg.require("val")?,
    };
    let data = load_dataset_with_labels(path, &ckpt.label_names)?;
    let encoded = EncodedDataset::new(&data, &ckpt.vocab, ckpt.model.spec.max_len);
    let eval = evaluate(&ckpt.model, &encoded, cfg.batch_size)?;
    write!(
        out,
        "{}",
        format_class_report(&eval.metrics, &ckpt.label_names)
    )
    .map_err(io_err)?;
    writeln!(out).map_err(io_err)?;
    writeln!(out, "{}", summary_header()).map_err(io_err)?;
    writeln!(
        out,
        "{}",
        format_summary_row(ckpt.model.kind().name(), &eval.metrics)
    )
    .map_err(io_err)
}

fn predict(cfg: &RunConfig, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(cfg.checkpoint_path())?;
    let max_len = ckpt.model.spec.max_len;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        line_no += 1;
        let n = input
            .read_line(&mut line)
            .map_err(|e| Error::parse("<stdin>", line_no, e.to_string()))?;
        if n == 0 {
            return Ok(());
        }
        let text = line.trim_end_matches(['\n', '\r']);
        let batch = EncodedBatch::from_texts(&[text], vec![0], &ckpt.vocab, max_len)?;
        let pred = ckpt.model.predict(&batch)?;
        let probs: Vec<String> = pred
            .probs
            .row(0)
            .iter()
            .map(|p| format!("{p:.6}"))
            .collect();
        writeln!(
            out,
            "{}\t{}",
            ckpt.label_names[pred.labels[0]],
            probs.join(",")
        )
        .map_err(io_err)?;
        out.flush().map_err(io_err)?;
    }
}

fn gradcheck(out: &mut dyn Write) -> Result<bool> {
    writeln!(
        out,
        "{:<24} {:>12} {:>14} {:>16}  worst parameter",
        "model", "max rel err", "resolved rel", "unresolved abs"
    )
    .map_err(io_err)?;
    let batch = toy_batch();
    let mut ok = true;
    for kind in ModelKind::ALL {
        let model = Model::build(toy_spec(kind, 0))?;
        let report = grad_check_model(&model, &batch, None)?;
        let worst = report.worst().map_or("-", |s| report.param_name(s));
        let max = report.max_rel_error();
        ok &= max < GRADCHECK_TOLERANCE;
        writeln!(
            out,
            "{:<24} {:>12.3e} {:>14.3e} {:>16.3e}  {worst}",
            kind.name(),
            max,
            report.resolved_max_rel_error(),
            report.unresolved_max_abs_error()
        )
        .map_err(io_err)?;
    }
    writeln!(
        out,
        "{}: max relative error {} {GRADCHECK_TOLERANCE:e}",
        if ok { "PASS" } else { "FAIL" },
        if ok { "<" } else { "≥" }
    )
    .map_err(io_err)?;
    Ok(ok)
}

fn mnb_metrics(corpus: &Corpus, mode: FeatureMode) -> Result<Metrics> {
    let texts = |d: &Dataset| {
        d.documents
            .iter()
            .map(|doc| doc.text.clone())
            .collect::<Vec<_>>()
    };
    let train_ids = text_ids(&texts(&corpus.train), &corpus.vocab);
    let eval_ids = text_ids(&texts(&corpus.eval), &corpus.vocab);
    let featurizer = Featurizer::fit(&train_ids, corpus.vocab.len(), mode)?;
    let classes = corpus.train.num_classes();
    let model = mnb_fit(
        &featurizer.transform(&train_ids)?,
        &corpus.train.labels(),
        classes,
    )?;
    let pred = mnb_predict(&model, &featurizer.transform(&eval_ids)?)?;
    compute_metrics(&confusion_matrix(&corpus.eval.labels(), &pred, classes)?)
}

fn baselines(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let mut rows = Vec::new();
    for mode in [FeatureMode::Bow, FeatureMode::Tfidf] {
        rows.push((format!("mnb_{mode}"), mnb_metrics(&corpus, mode)?));
    }
    let eval = EncodedDataset::new(&corpus.eval, &corpus.vocab, cfg.max_len);
    for kind in ModelKind::ALL {
        let outcome = fit(cfg, kind, &corpus, out, false)?;
        rows.push((
            kind.name().to_owned(),
            evaluate(&outcome.best, &eval, cfg.batch_size)?.metrics,
        ));
    }
    writeln!(out, "{}", summary_header()).map_err(io_err)?;
    for (name, m) in &rows {
        writeln!(out, "{}", format_summary_row(name, m)).map_err(io_err)?;
    }
    Ok(())
}
