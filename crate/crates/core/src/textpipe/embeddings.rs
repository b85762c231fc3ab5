use std::fs;
use std::path::Path;

use super::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{seeded, Stream};

/// Bound of the uniform init for rows without a pretrained vector.
pub const OOV_INIT_BOUND: f64 = 0.1;

/// Seeded embedding matrix: PAD row zero, every other row uniform in
/// ±[`OOV_INIT_BOUND`].
pub fn random_embeddings(vocab_size: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed, Stream::Embedding);
    let mut table = Tensor::uniform(&[vocab_size, dim], OOV_INIT_BOUND, &mut rng);
    table.row_mut(PAD).fill(0.0);
    table
}

/// Builds the `[|V|×dim]` embedding matrix. Rows for tokens present in the
/// `.vec` file are copied from it; all other rows keep their seeded random
/// init (the same values [`random_embeddings`] produces), and PAD is zero.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Tensor> {
    let mut table = random_embeddings(vocab.len(), dim, seed);
    let Some(path) = path else {
        return Ok(table);
    };
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing \"<count> <dim>\" header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let file_dim = match parts[..] {
        [count, d] => {
            count
                .parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad vector count \"{count}\"")))?;
            d.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad dimension \"{d}\"")))?
        }
        _ => return Err(Error::parse(path, 1, "header must be \"<count> <dim>\"")),
    };
    if file_dim != dim {
        return Err(Error::Config(format!(
            "{}: embedding file has dimension {file_dim}, model expects {dim}",
            path.display()
        )));
    }

    let mut filled = vec![false; vocab.len()];
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values: Vec<f64> = fields
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("bad value: {e}")))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                line_no,
                format!(
                    "expected {dim} values for \"{token}\", found {}",
                    values.len()
                ),
            ));
        }
        if let Some(id) = vocab.get(token) {
            if !filled[id] {
                table.row_mut(id).copy_from_slice(&values);
                filled[id] = true;
            }
        }
    }
    Ok(table)
}
