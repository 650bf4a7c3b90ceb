use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::{Vocab, PAD};
use crate::error::{DasError, Result};
use crate::numerics::Tensor;

/// Half-width of the uniform range for rows without a pretrained vector.
pub const OOV_RANGE: f64 = 0.25;

/// `|vocab| × d` matrix with uniform `[-0.25, 0.25]` rows and a zero padding row.
pub fn random_embeddings<R: Rng + ?Sized>(vocab_len: usize, d: usize, rng: &mut R) -> Tensor {
    let mut data: Vec<f64> = (0..vocab_len * d)
        .map(|_| rng.random_range(-OOV_RANGE..=OOV_RANGE))
        .collect();
    data[PAD * d..(PAD + 1) * d].fill(0.0);
    Tensor::matrix(vocab_len, d, data).expect("positive dimensions")
}

/// Reads `token v1 … vd` lines. Vocabulary tokens found in the file take the
/// file vector; the rest keep a random initialisation. Returns the matrix and
/// the number of tokens matched.
pub fn load_pretrained_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocab,
    d: usize,
    rng: &mut R,
) -> Result<(Tensor, usize)> {
    let mut table = random_embeddings(vocab.len(), d, rng);
    let file = File::open(path).map_err(|e| DasError::io(path, e))?;
    let mut matched = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DasError::io(path, e))?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let Some(id) = vocab.get(token).filter(|&id| id != PAD) else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        // word2vec-style "<count> <dim>" header
        if i == 0 && values.len() == 1 && d != 1 {
            continue;
        }
        if values.len() != d {
            return Err(DasError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("vector for '{token}' has {} values, expected {d}", values.len()),
            });
        }
        let row = table.row_mut(id);
        for (slot, v) in row.iter_mut().zip(values) {
            *slot = v.parse::<f64>().map_err(|e| DasError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad float '{v}': {e}"),
            })?;
        }
        matched += 1;
    }
    if !table.is_finite() {
        return Err(DasError::Data(format!("{}: non-finite embedding values", path.display())));
    }
    Ok((table, matched))
}
