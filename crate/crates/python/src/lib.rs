//! Python bindings: tokenization, vocabularies, models, training, the
//! checkpoint format and the Naive Bayes baselines.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use textfuse::cli::{Checkpoint, RunConfig};
use textfuse::models::{grad_check_model, toy_batch, toy_spec, Model, ModelKind};
use textfuse::nb::{mnb_fit, mnb_predict, text_ids, FeatureMode, Featurizer};
use textfuse::textpipe::{self, Dataset, Document, EncodedBatch, EncodedDataset};
use textfuse::train::{self, compute_metrics as core_metrics, confusion_matrix, Metrics};

fn to_py(e: textfuse::Error) -> PyErr {
    match e {
        textfuse::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse().map_err(to_py)
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("weighted_f1", m.weighted_f1)?;
    d.set_item("precision", &m.precision)?;
    d.set_item("recall", &m.recall)?;
    d.set_item("f1", &m.f1)?;
    d.set_item("support", &m.support)?;
    d.set_item("confusion", &m.confusion)?;
    Ok(d)
}

/// Splits on whitespace and trims edge punctuation.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    textpipe::tokenize(text)
}

#[pyclass(module = "textfuse_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Vocabulary {
    inner: textpipe::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    /// Builds from raw texts; ids 0 and 1 are PAD and UNK.
    #[staticmethod]
    #[pyo3(signature = (texts, min_count = 1))]
    fn build(texts: Vec<String>, min_count: usize) -> PyResult<Self> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| textpipe::tokenize(t)).collect();
        let inner = textpipe::Vocabulary::build(&docs, min_count).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn id(&self, token: &str) -> usize {
        self.inner.id(token)
    }

    fn token(&self, id: usize) -> Option<String> {
        self.inner.token(id).map(String::from)
    }

    /// `(ids, mask)` padded or truncated to `max_len`.
    fn encode(&self, text: &str, max_len: usize) -> (Vec<usize>, Vec<usize>) {
        let (ids, mask) = textpipe::encode(&textpipe::tokenize(text), &self.inner, max_len);
        (ids, mask.into_iter().map(usize::from).collect())
    }
}

#[pyclass(module = "textfuse_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Classifier {
    inner: Checkpoint,
}

impl Classifier {
    fn batch(&self, texts: &[String]) -> PyResult<EncodedBatch> {
        EncodedBatch::from_texts(
            texts,
            vec![0; texts.len()],
            &self.inner.vocab,
            self.inner.model.spec.max_len,
        )
        .map_err(to_py)
    }
}

#[pymethods]
impl Classifier {
    /// Untrained model over `vocab` with the given label names. Keyword
    /// arguments are run-configuration keys such as `embed_dim` or `seed`.
    #[new]
    #[pyo3(signature = (kind, vocab, labels, **options))]
    fn new(
        kind: &str,
        vocab: &Vocabulary,
        labels: Vec<String>,
        options: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(options) = options {
            for (k, v) in options.iter() {
                let value = if let Ok(b) = v.cast::<PyBool>() {
                    b.is_true().to_string()
                } else if let Ok(list) = v.extract::<Vec<usize>>() {
                    list.iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join(",")
                } else {
                    v.str()?.to_string()
                };
                cfg.set(&k.extract::<String>()?, &value).map_err(to_py)?;
            }
        }
        let spec = cfg
            .model_spec(parse_kind(kind)?, vocab.inner.len(), labels.len())
            .map_err(to_py)?;
        let model = Model::build(spec).map_err(to_py)?;
        let inner = Checkpoint::new(model, vocab.inner.clone(), labels).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.model.kind().name()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.label_names.clone()
    }

    #[getter]
    fn max_len(&self) -> usize {
        self.inner.model.spec.max_len
    }

    fn num_parameters(&self) -> usize {
        self.inner.model.params.num_scalars()
    }

    /// Class probabilities per text.
    fn predict_proba(&self, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let probs = self
            .inner
            .model
            .forward(&self.batch(&texts)?)
            .map_err(to_py)?;
        Ok((0..texts.len()).map(|b| probs.row(b).to_vec()).collect())
    }

    /// Label names, one per text.
    fn predict(&self, texts: Vec<String>) -> PyResult<Vec<String>> {
        let pred = self
            .inner
            .model
            .predict(&self.batch(&texts)?)
            .map_err(to_py)?;
        Ok(pred
            .labels
            .iter()
            .map(|&l| self.inner.label_names[l].clone())
            .collect())
    }

    /// Per-text attention weights over the padded length, or `None` for
    /// kinds without attention.
    fn attention(&self, texts: Vec<String>) -> PyResult<Option<Vec<Vec<f64>>>> {
        Ok(self
            .inner
            .model
            .predict(&self.batch(&texts)?)
            .map_err(to_py)?
            .attention)
    }

    /// Scores on labelled `(text, label)` pairs.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        pairs: Vec<(String, String)>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let data = labelled(&pairs, &self.inner.label_names)?;
        let eval = train::evaluate_dataset(&self.inner.model, &data, &self.inner.vocab, 128)
            .map_err(to_py)?;
        let d = metrics_dict(py, &eval.metrics)?;
        d.set_item("loss", eval.loss)?;
        Ok(d)
    }
}

fn labelled(pairs: &[(String, String)], names: &[String]) -> PyResult<Dataset> {
    let documents = pairs
        .iter()
        .map(|(text, label)| {
            let id = names
                .iter()
                .position(|n| n == label)
                .ok_or_else(|| PyValueError::new_err(format!("unknown label \"{label}\"")))?;
            Ok(Document {
                text: text.clone(),
                label: id,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Dataset::new(documents, names.to_vec()).map_err(to_py)
}

/// Trains a model on `(text, label)` pairs and returns the retained
/// classifier with the per-epoch history. `overrides` are `key=value`
/// run-configuration entries.
#[pyfunction]
#[pyo3(signature = (train_pairs, val_pairs, overrides = Vec::new()))]
fn fit(
    py: Python<'_>,
    train_pairs: Vec<(String, String)>,
    val_pairs: Vec<(String, String)>,
    overrides: Vec<String>,
) -> PyResult<(Classifier, Vec<HashMap<String, f64>>)> {
    let mut cfg = RunConfig::default();
    for o in &overrides {
        cfg.apply_override(o).map_err(to_py)?;
    }
    let train_set = Dataset::from_pairs(&train_pairs);
    let val_set = labelled(&val_pairs, &train_set.label_names)?;
    let vocab = textpipe::build_vocab(&train_set, cfg.min_count).map_err(to_py)?;
    let spec = cfg
        .model_spec(cfg.model, vocab.len(), train_set.num_classes())
        .map_err(to_py)?;
    let table =
        textpipe::load_embeddings(cfg.embeddings.as_deref(), &vocab, spec.embed_dim, spec.seed)
            .map_err(to_py)?;
    let model = Model::with_embeddings(spec, table).map_err(to_py)?;
    let tc = cfg.train_config().map_err(to_py)?;
    let tr = EncodedDataset::new(&train_set, &vocab, cfg.max_len);
    let va = EncodedDataset::new(&val_set, &vocab, cfg.max_len);
    let outcome = py
        .detach(|| train::train(&model, &tr, &va, &tc))
        .map_err(to_py)?;
    let history = outcome
        .history
        .iter()
        .map(|r| {
            HashMap::from([
                ("epoch".to_string(), r.epoch as f64),
                ("train_loss".to_string(), r.train_loss),
                ("val_loss".to_string(), r.val_loss),
                ("val_acc".to_string(), r.val_acc),
                ("val_wf1".to_string(), r.val_wf1),
                ("lr".to_string(), r.lr),
            ])
        })
        .collect();
    let inner = Checkpoint::new(outcome.best, vocab, train_set.label_names).map_err(to_py)?;
    Ok((Classifier { inner }, history))
}

/// Accuracy, per-class precision/recall/F1 and weighted F1 of a confusion
/// matrix (rows true, columns predicted).
#[pyfunction]
fn compute_metrics(py: Python<'_>, confusion: Vec<Vec<u64>>) -> PyResult<Bound<'_, PyDict>> {
    metrics_dict(py, &core_metrics(&confusion).map_err(to_py)?)
}

/// Multinomial Naive Bayes on `bow` or `tfidf` features: fits on
/// `train_pairs` and scores `eval_pairs`.
#[pyfunction]
#[pyo3(signature = (train_pairs, eval_pairs, mode = "bow", min_count = 1))]
fn naive_bayes<'py>(
    py: Python<'py>,
    train_pairs: Vec<(String, String)>,
    eval_pairs: Vec<(String, String)>,
    mode: &str,
    min_count: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mode: FeatureMode = mode.parse().map_err(to_py)?;
    let train_set = Dataset::from_pairs(&train_pairs);
    let eval_set = labelled(&eval_pairs, &train_set.label_names)?;
    let vocab = textpipe::build_vocab(&train_set, min_count).map_err(to_py)?;
    let texts = |d: &Dataset| {
        d.documents
            .iter()
            .map(|x| x.text.clone())
            .collect::<Vec<_>>()
    };
    let train_ids = text_ids(&texts(&train_set), &vocab);
    let eval_ids = text_ids(&texts(&eval_set), &vocab);
    let featurizer = Featurizer::fit(&train_ids, vocab.len(), mode).map_err(to_py)?;
    let classes = train_set.num_classes();
    let x = featurizer.transform(&train_ids).map_err(to_py)?;
    let model = mnb_fit(&x, &train_set.labels(), classes).map_err(to_py)?;
    let pred =
        mnb_predict(&model, &featurizer.transform(&eval_ids).map_err(to_py)?).map_err(to_py)?;
    let conf = confusion_matrix(&eval_set.labels(), &pred, classes).map_err(to_py)?;
    metrics_dict(py, &core_metrics(&conf).map_err(to_py)?)
}

/// Finite-difference check of one model kind at toy size.
#[pyfunction]
#[pyo3(signature = (kind, seed = 0))]
fn grad_check(py: Python<'_>, kind: &str, seed: u64) -> PyResult<HashMap<String, f64>> {
    let model = Model::build(toy_spec(parse_kind(kind)?, seed)).map_err(to_py)?;
    let report = py
        .detach(|| grad_check_model(&model, &toy_batch(), None))
        .map_err(to_py)?;
    Ok(HashMap::from([
        ("max_rel_error".to_string(), report.max_rel_error()),
        (
            "resolved_max_rel_error".to_string(),
            report.resolved_max_rel_error(),
        ),
        (
            "unresolved_max_abs_error".to_string(),
            report.unresolved_max_abs_error(),
        ),
    ]))
}

#[pymodule]
pub fn textfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(naive_bayes, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add(
        "MODEL_KINDS",
        ModelKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
