use super::tokenize::tokenize;
use super::vocab::{encode, Vocabulary, PAD, UNK};
use super::Dataset;
use crate::error::{Error, Result};

/// Padded id matrix `[B×L]` with its mask and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    ids: Vec<usize>,
    mask: Vec<u8>,
    labels: Vec<usize>,
    max_len: usize,
}

impl EncodedBatch {
    /// Validates the post-padding invariant: each mask row is a prefix of 1s,
    /// and PAD appears exactly where the mask is 0.
    pub fn new(ids: Vec<usize>, mask: Vec<u8>, labels: Vec<usize>, max_len: usize) -> Result<Self> {
        if max_len == 0 || ids.len() != labels.len() * max_len || mask.len() != ids.len() {
            return Err(Error::Dimension(format!(
                "batch of {} ids / {} mask entries does not fit {} rows of length {max_len}",
                ids.len(),
                mask.len(),
                labels.len()
            )));
        }
        for (row_ids, row_mask) in ids.chunks(max_len).zip(mask.chunks(max_len)) {
            let real = row_mask.iter().take_while(|&&m| m == 1).count();
            if row_mask[real..].iter().any(|&m| m != 0) {
                return Err(Error::Contract("mask row is not a prefix of 1s".into()));
            }
            if row_ids
                .iter()
                .zip(row_mask)
                .any(|(&i, &m)| (m == 0) != (i == PAD))
            {
                return Err(Error::Contract(
                    "PAD ids must coincide with mask zeros".into(),
                ));
            }
        }
        Ok(Self {
            ids,
            mask,
            labels,
            max_len,
        })
    }

    /// Encodes already-mapped id sequences. An empty sequence becomes a lone
    /// UNK so every row has at least one real token.
    pub fn from_id_rows<R: AsRef<[usize]>>(
        rows: &[R],
        labels: Vec<usize>,
        max_len: usize,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let mut ids = Vec::with_capacity(rows.len() * max_len);
        let mut mask = Vec::with_capacity(rows.len() * max_len);
        for row in rows {
            let row = row.as_ref();
            let real: &[usize] = if row.is_empty() { &[UNK] } else { row };
            let n = real.len().min(max_len);
            ids.extend_from_slice(&real[..n]);
            ids.resize(ids.len() + max_len - n, PAD);
            mask.extend(std::iter::repeat_n(1u8, n));
            mask.extend(std::iter::repeat_n(0u8, max_len - n));
        }
        Self::new(ids, mask, labels, max_len)
    }

    /// Tokenizes and encodes raw texts.
    pub fn from_texts<S: AsRef<str>>(
        texts: &[S],
        labels: Vec<usize>,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let rows: Vec<Vec<usize>> = texts
            .iter()
            .map(|t| encode_text(t.as_ref(), vocab, max_len))
            .collect();
        Self::from_id_rows(&rows, labels, max_len)
    }

    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row_ids(&self, b: usize) -> &[usize] {
        &self.ids[b * self.max_len..(b + 1) * self.max_len]
    }

    pub fn row_mask(&self, b: usize) -> &[u8] {
        &self.mask[b * self.max_len..(b + 1) * self.max_len]
    }

    /// Number of real tokens per row.
    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch_size())
            .map(|b| self.row_mask(b).iter().filter(|&&m| m == 1).count())
            .collect()
    }

    /// Same documents re-padded to a new length; fails if that would
    /// truncate real tokens.
    pub fn repad(&self, max_len: usize) -> Result<Self> {
        let rows: Vec<Vec<usize>> = (0..self.batch_size())
            .map(|b| {
                let n = self.lengths()[b];
                self.row_ids(b)[..n].to_vec()
            })
            .collect();
        if self.lengths().iter().any(|&n| n > max_len) {
            return Err(Error::Contract(format!(
                "re-padding to {max_len} would truncate documents"
            )));
        }
        Self::from_id_rows(&rows, self.labels.clone(), max_len)
    }
}

/// Tokenized, vocabulary-mapped id sequence (unpadded, truncated to `max_len`).
pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let tokens = tokenize(text);
    let (mut ids, mask) = encode(&tokens, vocab, max_len);
    ids.truncate(mask.iter().filter(|&&m| m == 1).count());
    ids
}

/// Every document of a dataset mapped to ids once, ready for batching.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub rows: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub max_len: usize,
}

impl EncodedDataset {
    pub fn new(data: &Dataset, vocab: &Vocabulary, max_len: usize) -> Self {
        Self {
            rows: data
                .documents
                .iter()
                .map(|d| encode_text(&d.text, vocab, max_len))
                .collect(),
            labels: data.labels(),
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<EncodedBatch> {
        let rows: Vec<&[usize]> = indices.iter().map(|&i| self.rows[i].as_slice()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        EncodedBatch::from_id_rows(&rows, labels, self.max_len)
    }

    /// Consecutive batches in index order; the last may be partial.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = Result<EncodedBatch>> + '_ {
        let order: Vec<usize> = (0..self.len()).collect();
        order
            .chunks(batch_size.max(1))
            .map(|c| self.batch(c))
            .collect::<Vec<_>>()
            .into_iter()
    }
}
