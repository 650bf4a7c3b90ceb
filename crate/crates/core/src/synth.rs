//! Synthetic two-domain sentiment corpora with a tunable vocabulary shift.
//!
//! Each document has a class and a domain. Its tokens are a mix of
//! sentiment words for that class and neutral filler. A sentiment word is
//! drawn from the domain's own pool with probability `shift` and from a
//! pool shared by both domains otherwise. The two domains' own pools carry
//! the same class associations under disjoint surface forms, so a model
//! trained on the source domain only learns the shared half of the signal.

use std::path::{Path, PathBuf};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Document, DomainTag, NUM_SENTIMENTS};
use crate::error::{DasError, Result};
use crate::rng::{stream, Rng, Stream};

const CLASS_STEMS: [&str; NUM_SENTIMENTS] = ["neg", "neu", "pos"];
const DOMAIN_PREFIX: [&str; 2] = ["a", "b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecipe {
    /// Shared sentiment words per class.
    pub shared_per_class: usize,
    /// Domain-specific sentiment words per class and domain.
    pub domain_per_class: usize,
    /// Filler words common to both domains.
    pub filler: usize,
    /// Topic words per domain (non-sentiment, domain-specific).
    pub topic_per_domain: usize,
    pub n_source_labeled: usize,
    pub n_source_unlabeled: usize,
    pub n_target_unlabeled: usize,
    pub n_target_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a position carries a sentiment word.
    pub sentiment_rate: f64,
    /// Probability that a non-sentiment position is a domain topic word.
    pub topic_rate: f64,
    /// Probability that a sentiment word belongs to a random other class.
    pub token_noise: f64,
    pub class_priors: [f64; NUM_SENTIMENTS],
    /// Fraction of sentiment words drawn from the domain's own pool.
    pub shift: f64,
    pub seed: u64,
}

impl Default for SynthRecipe {
    fn default() -> Self {
        SynthRecipe {
            shared_per_class: 12,
            domain_per_class: 12,
            filler: 200,
            topic_per_domain: 40,
            n_source_labeled: 2000,
            n_source_unlabeled: 500,
            n_target_unlabeled: 2000,
            n_target_test: 1000,
            min_len: 12,
            max_len: 30,
            sentiment_rate: 0.3,
            topic_rate: 0.3,
            token_noise: 0.1,
            class_priors: [1.0 / 3.0; NUM_SENTIMENTS],
            shift: 0.7,
            seed: 0,
        }
    }
}

/// The four generated corpora, all carrying gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpora {
    pub source_labeled: Corpus,
    pub source_unlabeled: Corpus,
    pub target_unlabeled: Corpus,
    pub target_test: Corpus,
}

pub const SYNTH_FILES: [&str; 4] = [
    "source_labeled.jsonl",
    "source_unlabeled.jsonl",
    "target_unlabeled.jsonl",
    "target_test.jsonl",
];

impl SynthRecipe {
    pub fn validate(&self) -> Result<()> {
        let prior_sum: f64 = self.class_priors.iter().sum();
        if self.class_priors.iter().any(|&p| !(p >= 0.0)) || (prior_sum - 1.0).abs() > 1e-9 {
            return Err(DasError::Config(format!("class priors must be nonnegative and sum to 1, got {prior_sum}")));
        }
        for (name, v) in [
            ("shift", self.shift),
            ("sentiment_rate", self.sentiment_rate),
            ("topic_rate", self.topic_rate),
            ("token_noise", self.token_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DasError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(DasError::Config("document lengths need 1 ≤ min_len ≤ max_len".into()));
        }
        if self.shared_per_class == 0 || self.domain_per_class == 0 || self.filler == 0 || self.topic_per_domain == 0 {
            return Err(DasError::Config("every token pool needs at least one word".into()));
        }
        if self.n_source_labeled == 0 || self.n_target_unlabeled == 0 || self.n_target_test == 0 {
            return Err(DasError::Config("source, target and test sets must be non-empty".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticCorpora> {
        self.validate()?;
        let mut rng = stream(self.seed, Stream::Synth);
        let classes = WeightedIndex::new(self.class_priors).map_err(|e| DasError::Config(e.to_string()))?;
        let make = |domain: usize, n: usize, tag: DomainTag, rng: &mut Rng| {
            Corpus::new((0..n).map(|_| self.document(domain, tag, &classes, rng)).collect())
        };
        Ok(SyntheticCorpora {
            source_labeled: make(0, self.n_source_labeled, DomainTag::SourceLabeled, &mut rng),
            source_unlabeled: make(0, self.n_source_unlabeled, DomainTag::SourceUnlabeled, &mut rng),
            target_unlabeled: make(1, self.n_target_unlabeled, DomainTag::Target, &mut rng),
            target_test: make(1, self.n_target_test, DomainTag::Target, &mut rng),
        })
    }

    fn document(&self, domain: usize, tag: DomainTag, classes: &WeightedIndex<f64>, rng: &mut Rng) -> Document {
        let label = classes.sample(rng);
        let len = rng.random_range(self.min_len..=self.max_len);
        let tokens = (0..len)
            .map(|_| {
                if rng.random_bool(self.sentiment_rate) {
                    let mut class = label;
                    if rng.random_bool(self.token_noise) {
                        class = (label + rng.random_range(1..NUM_SENTIMENTS)) % NUM_SENTIMENTS;
                    }
                    let stem = CLASS_STEMS[class];
                    if rng.random_bool(self.shift) {
                        let k = rng.random_range(0..self.domain_per_class);
                        format!("{}{stem}{k}", DOMAIN_PREFIX[domain])
                    } else {
                        let k = rng.random_range(0..self.shared_per_class);
                        format!("s{stem}{k}")
                    }
                } else if rng.random_bool(self.topic_rate) {
                    let k = rng.random_range(0..self.topic_per_domain);
                    format!("{}topic{k}", DOMAIN_PREFIX[domain])
                } else {
                    format!("fill{}", rng.random_range(0..self.filler))
                }
            })
            .collect();
        Document {
            tokens,
            label: Some(label),
            rating: None,
            domain: tag,
        }
    }
}

impl SyntheticCorpora {
    /// Writes the four corpora as labeled JSON lines and returns their paths.
    pub fn save(&self, dir: &Path) -> Result<[PathBuf; 4]> {
        std::fs::create_dir_all(dir).map_err(|e| DasError::io(dir, e))?;
        let paths = SYNTH_FILES.map(|f| dir.join(f));
        for (corpus, path) in [&self.source_labeled, &self.source_unlabeled, &self.target_unlabeled, &self.target_test]
            .into_iter()
            .zip(&paths)
        {
            corpus.save(path)?;
        }
        Ok(paths)
    }
}
