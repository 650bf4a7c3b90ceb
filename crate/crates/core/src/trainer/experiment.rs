//! End-to-end runs: vocabulary, embeddings, dev split, training and test
//! evaluation for one seed or a range of seeds.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{train_with_dumps, History, TrainConfig, TrainOutcome, TrainingSet, Variant};
use crate::data::{
    build_vocab, load_pretrained_embeddings, random_embeddings, split_dev, Corpus, Vocab, NUM_SENTIMENTS,
};
use crate::error::{DasError, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::ModelParams;
use crate::numerics::Tensor;
use crate::rng::{stream, Stream};

/// Raw corpora for one source/target pair.
#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    /// Labeled source reviews; the dev set is split off these.
    pub source: Corpus,
    pub source_unlabeled: Option<Corpus>,
    /// Target reviews. Any labels are ignored during training.
    pub target: Corpus,
    /// Labeled target test set. Without it, a fully labeled `target` is
    /// scored instead.
    pub target_test: Option<Corpus>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub set: TrainingSet,
    pub embedding: Tensor,
    /// Vocabulary entries that received a pretrained vector.
    pub pretrained_matches: Option<usize>,
    pub test: Option<(Vec<Vec<usize>>, Vec<usize>)>,
}

fn labeled(corpus: &Corpus, what: &str) -> Result<Vec<usize>> {
    corpus
        .labels()
        .ok_or_else(|| DasError::Data(format!("every {what} document needs a label")))
}

pub fn prepare(config: &TrainConfig, data: &ExperimentData) -> Result<Prepared> {
    config.validate()?;
    let mut corpora = vec![&data.source];
    corpora.extend(&data.source_unlabeled);
    corpora.push(&data.target);
    let vocab = build_vocab(&corpora, config.vocab_size)?;
    let encode = |c: &Corpus| -> Vec<Vec<usize>> {
        c.documents.iter().map(|d| vocab.encode(&d.tokens, config.max_doc_len)).collect()
    };

    let (train, dev) = split_dev(&data.source, config.n_dev, &mut stream(config.seed, Stream::DevSplit))?;
    let mut emb_rng = stream(config.seed, Stream::Embeddings);
    let (embedding, pretrained_matches) = match &data.embeddings {
        Some(path) => {
            let (t, n) = load_pretrained_embeddings(path, &vocab, config.embedding_dim, &mut emb_rng)?;
            (t, Some(n))
        }
        None => (random_embeddings(vocab.len(), config.embedding_dim, &mut emb_rng), None),
    };
    let test_corpus = match &data.target_test {
        Some(t) => Some(t),
        None => data.target.labels().is_some().then_some(&data.target),
    };
    let test = match test_corpus {
        Some(t) => Some((encode(t), labeled(t, "target test")?)),
        None => None,
    };
    let set = TrainingSet {
        source: encode(&train),
        source_labels: labeled(&train, "labeled source")?,
        source_unlabeled: data.source_unlabeled.as_ref().map(encode).unwrap_or_default(),
        target: encode(&data.target),
        dev: encode(&dev),
        dev_labels: labeled(&dev, "labeled source")?,
        classes: NUM_SENTIMENTS,
    };
    Ok(Prepared {
        vocab,
        set,
        embedding,
        pretrained_matches,
        test,
    })
}

/// Summary of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_dev_error: f64,
    pub test: Option<EvalReport>,
    pub history: History,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub params: ModelParams,
    pub vocab: Vocab,
}

pub fn run_experiment(config: &TrainConfig, data: &ExperimentData) -> Result<RunOutput> {
    run_experiment_with_dumps(config, data, None)
}

pub fn run_experiment_with_dumps(
    config: &TrainConfig,
    data: &ExperimentData,
    dump_dir: Option<&std::path::Path>,
) -> Result<RunOutput> {
    let prepared = prepare(config, data)?;
    let TrainOutcome { best, history, .. } = train_with_dumps(config, &prepared.set, prepared.embedding, dump_dir)?;
    let test = match &prepared.test {
        Some((docs, gold)) => Some(evaluate(&best, docs, gold)?),
        None => None,
    };
    Ok(RunOutput {
        record: RunRecord {
            variant: config.variant,
            seed: config.seed,
            best_epoch: history.best_epoch,
            best_dev_error: history.best_dev_error,
            test,
            history,
        },
        params: best,
        vocab: prepared.vocab,
    })
}

/// Runs seeds `config.seed, …, config.seed + n_runs − 1` one after another.
pub fn run_multi_seed(config: &TrainConfig, data: &ExperimentData, n_runs: usize) -> Result<Vec<RunRecord>> {
    (0..n_runs as u64)
        .map(|k| {
            let cfg = TrainConfig {
                seed: config.seed + k,
                ..config.clone()
            };
            Ok(run_experiment(&cfg, data)?.record)
        })
        .collect()
}
