//! Corpus loading, tokenisation, vocabulary, embeddings and minibatching.

mod batches;
mod corpus;
mod embeddings;
mod tokenize;
mod vocab;

pub use batches::{BatchStream, BatchTriple};
pub use corpus::{
    detect_format, label_from_name, label_name, load_corpus, map_rating_to_label, Corpus,
    CorpusFormat, Document, DomainTag, RatingScheme, LABEL_NAMES, NEGATIVE, NEUTRAL,
    NUM_SENTIMENTS, POSITIVE,
};
pub use embeddings::{load_pretrained_embeddings, random_embeddings, OOV_RANGE};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use rand::seq::SliceRandom;

use crate::error::{DasError, Result};

/// Uniform random train/dev split. Both parts keep the corpus order.
pub fn split_dev<R: rand::Rng + ?Sized>(
    source: &Corpus,
    n_dev: usize,
    rng: &mut R,
) -> Result<(Corpus, Corpus)> {
    if n_dev >= source.len() {
        return Err(DasError::invalid(format!(
            "dev size {n_dev} must be smaller than the source corpus ({})",
            source.len()
        )));
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(rng);
    let mut in_dev = vec![false; source.len()];
    order[..n_dev].iter().for_each(|&i| in_dev[i] = true);
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (doc, dev_member) in source.documents.iter().zip(in_dev) {
        if dev_member {
            dev.push(doc.clone());
        } else {
            train.push(doc.clone());
        }
    }
    Ok((Corpus::new(train), Corpus::new(dev)))
}
