//! Raw text to padded id batches: tokenization, vocabulary, dataset files,
//! and pretrained vector ingestion.

mod batch;
mod dataset;
mod embeddings;
mod tokenize;
mod vocab;

pub use batch::{encode_text, EncodedBatch, EncodedDataset};
pub use dataset::{load_dataset, load_dataset_with_labels, Dataset, Document};
pub use embeddings::{load_embeddings, random_embeddings, OOV_INIT_BOUND};
pub use tokenize::tokenize;
pub use vocab::{decode, encode, Vocabulary, PAD, UNK};

/// Vocabulary over the tokenized documents of `data`.
pub fn build_vocab(data: &Dataset, min_count: usize) -> crate::Result<Vocabulary> {
    Vocabulary::build(data.documents.iter().map(|d| tokenize(&d.text)), min_count)
}
