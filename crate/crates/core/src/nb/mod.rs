//! Bag-of-words and TF-IDF features with Multinomial Naive Bayes.
//!
//! Feature columns are the real vocabulary tokens in id order followed by a
//! single `<unk>` column, so out-of-vocabulary tokens are still counted.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::argmax;
use crate::numerics::Tensor;
use crate::textpipe::{tokenize, Vocabulary, PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Bow,
    Tfidf,
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(FeatureMode::Bow),
            "tfidf" => Ok(FeatureMode::Tfidf),
            _ => Err(Error::Config(format!(
                "unknown feature mode \"{s}\" (expected bow or tfidf)"
            ))),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Bow => "bow",
            FeatureMode::Tfidf => "tfidf",
        })
    }
}

/// Column of a vocabulary id.
fn column(id: usize, width: usize) -> usize {
    if id == UNK {
        width - 1
    } else {
        id - 2
    }
}

/// Maps id sequences to feature rows. TF-IDF weights are fitted on one
/// corpus and reused for any other.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    mode: FeatureMode,
    width: usize,
    idf: Option<Vec<f64>>,
}

impl Featurizer {
    /// `vocab_len` counts the reserved ids.
    pub fn fit(docs: &[Vec<usize>], vocab_len: usize, mode: FeatureMode) -> Result<Self> {
        if vocab_len < 2 {
            return Err(Error::Config(
                "vocabulary must contain <pad> and <unk>".into(),
            ));
        }
        let width = vocab_len - 1;
        let idf = match mode {
            FeatureMode::Bow => None,
            FeatureMode::Tfidf => {
                let mut df = vec![0usize; width];
                let mut seen = vec![usize::MAX; width];
                for (d, doc) in docs.iter().enumerate() {
                    for &id in doc {
                        check_id(id, vocab_len)?;
                        let c = column(id, width);
                        if seen[c] != d {
                            seen[c] = d;
                            df[c] += 1;
                        }
                    }
                }
                let n = docs.len() as f64;
                Some(
                    df.iter()
                        .map(|&k| ((1.0 + n) / (1.0 + k as f64)).ln() + 1.0)
                        .collect(),
                )
            }
        };
        Ok(Self { mode, width, idf })
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn idf(&self) -> Option<&[f64]> {
        self.idf.as_deref()
    }

    /// `[docs × width]` counts, or L2-normalised TF-IDF rows. Empty documents
    /// give zero rows.
    pub fn transform(&self, docs: &[Vec<usize>]) -> Result<Tensor> {
        if docs.is_empty() {
            return Err(Error::Config(
                "cannot featurize an empty document list".into(),
            ));
        }
        let mut data = vec![0.0; docs.len() * self.width];
        for (d, doc) in docs.iter().enumerate() {
            let row = &mut data[d * self.width..(d + 1) * self.width];
            for &id in doc {
                check_id(id, self.width + 1)?;
                row[column(id, self.width)] += 1.0;
            }
            if let Some(idf) = &self.idf {
                for (v, w) in row.iter_mut().zip(idf) {
                    *v *= w;
                }
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        Tensor::new(vec![docs.len(), self.width], data)
    }
}

fn check_id(id: usize, vocab_len: usize) -> Result<()> {
    if id == PAD || id >= vocab_len {
        return Err(Error::Contract(format!(
            "token id {id} is not a feature id"
        )));
    }
    Ok(())
}

/// Full-length id sequences for raw texts; no truncation or padding.
pub fn text_ids<S: AsRef<str>>(texts: &[S], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    texts
        .iter()
        .map(|t| {
            tokenize(t.as_ref())
                .iter()
                .map(|tok| vocab.id(tok))
                .collect()
        })
        .collect()
}

/// Fits on `texts` and transforms the same texts.
pub fn featurize<S: AsRef<str>>(
    texts: &[S],
    vocab: &Vocabulary,
    mode: FeatureMode,
) -> Result<Tensor> {
    let ids = text_ids(texts, vocab);
    Featurizer::fit(&ids, vocab.len(), mode)?.transform(&ids)
}

/// Log-priors and Laplace-smoothed log-likelihoods per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MnbModel {
    pub log_prior: Vec<f64>,
    /// `[classes × features]`
    pub log_likelihood: Vec<Vec<f64>>,
}

/// Smoothing `α = 1`. Classes without documents get prior 0 and are never
/// predicted.
pub fn mnb_fit(x: &Tensor, labels: &[usize], num_classes: usize) -> Result<MnbModel> {
    let &[n, width] = x.shape() else {
        return Err(Error::Dimension(format!(
            "feature matrix must be 2-D, got {:?}",
            x.shape()
        )));
    };
    if labels.is_empty() {
        return Err(Error::Config(
            "cannot fit Naive Bayes on an empty training set".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Contract(format!(
            "label {bad} outside {num_classes} classes"
        )));
    }
    let mut counts = vec![0usize; num_classes];
    let mut mass = vec![vec![0.0; width]; num_classes];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (m, v) in mass[c].iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let log_prior = counts.iter().map(|&k| (k as f64 / n as f64).ln()).collect();
    let log_likelihood = mass
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + width as f64;
            row.iter().map(|m| ((m + 1.0) / total).ln()).collect()
        })
        .collect();
    Ok(MnbModel {
        log_prior,
        log_likelihood,
    })
}

impl MnbModel {
    /// Unnormalised log-posterior of every class for one feature row.
    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(p, ll)| {
                p + row
                    .iter()
                    .zip(ll)
                    .filter(|(x, _)| **x != 0.0)
                    .map(|(x, l)| x * l)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Highest-scoring class per row; ties go to the lowest index.
pub fn mnb_predict(m: &MnbModel, x: &Tensor) -> Result<Vec<usize>> {
    let width = m.log_likelihood.first().map_or(0, Vec::len);
    let &[n, w] = x.shape() else {
        return Err(Error::Dimension(format!(
            "feature matrix must be 2-D, got {:?}",
            x.shape()
        )));
    };
    if w != width {
        return Err(Error::Dimension(format!(
            "model has {width} features, matrix has {w}"
        )));
    }
    Ok((0..n).map(|i| argmax(&m.scores(x.row(i)))).collect())
}
