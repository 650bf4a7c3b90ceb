use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tokenize;
use crate::error::{DasError, Result};

/// Number of sentiment classes in every supported dataset.
pub const NUM_SENTIMENTS: usize = 3;

/// Class indices used throughout: negative, neutral, positive.
pub const LABEL_NAMES: [&str; NUM_SENTIMENTS] = ["negative", "neutral", "positive"];
pub const NEGATIVE: usize = 0;
pub const NEUTRAL: usize = 1;
pub const POSITIVE: usize = 2;

pub fn label_from_name(name: &str) -> Option<usize> {
    LABEL_NAMES.iter().position(|n| *n == name)
}

pub fn label_name(class: usize) -> String {
    LABEL_NAMES
        .get(class)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("class{class}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    SourceLabeled,
    SourceUnlabeled,
    Target,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::SourceLabeled => "source_labeled",
            DomainTag::SourceUnlabeled => "source_unlabeled",
            DomainTag::Target => "target",
        }
    }
}

/// How raw ratings map to the three sentiment classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingScheme {
    /// Ratings of 1 to 5 stars: below 3 negative, above 3 positive, 3 neutral.
    Amazon5,
    /// Ratings of 1 to 10 stars: below 5 negative, above 6 positive, 5 and 6 neutral.
    Imdb10,
}

impl FromStr for RatingScheme {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amazon5" => Ok(RatingScheme::Amazon5),
            "imdb10" => Ok(RatingScheme::Imdb10),
            other => Err(DasError::Config(format!("unknown rating scheme '{other}'"))),
        }
    }
}

impl RatingScheme {
    pub fn name(self) -> &'static str {
        match self {
            RatingScheme::Amazon5 => "amazon5",
            RatingScheme::Imdb10 => "imdb10",
        }
    }
}

pub fn map_rating_to_label(rating: f64, scheme: RatingScheme) -> Result<usize> {
    let (max, neg_below, pos_above) = match scheme {
        RatingScheme::Amazon5 => (5.0, 3.0, 3.0),
        RatingScheme::Imdb10 => (10.0, 5.0, 6.0),
    };
    if !(1.0..=max).contains(&rating) {
        return Err(DasError::Data(format!(
            "rating {rating} outside the {} scale [1, {max}]",
            scheme.name()
        )));
    }
    Ok(if rating < neg_below {
        NEGATIVE
    } else if rating > pos_above {
        POSITIVE
    } else {
        NEUTRAL
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `{"text": ..., "rating": number}`
    JsonlRating,
    /// `{"text": ..., "label": "positive" | "negative" | "neutral"}`
    JsonlLabel,
}

impl FromStr for CorpusFormat {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl_rating" | "rating" => Ok(CorpusFormat::JsonlRating),
            "jsonl_label" | "label" => Ok(CorpusFormat::JsonlLabel),
            other => Err(DasError::Config(format!("unknown corpus format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub tokens: Vec<String>,
    pub label: Option<usize>,
    pub rating: Option<f64>,
    pub domain: DomainTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Corpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.documents.iter().map(|d| d.label).collect()
    }

    /// Drops gold labels and ratings so they cannot reach the trainer.
    pub fn into_unlabeled(self, domain: DomainTag) -> Corpus {
        Corpus::new(
            self.documents
                .into_iter()
                .map(|d| Document {
                    tokens: d.tokens,
                    label: None,
                    rating: None,
                    domain,
                })
                .collect(),
        )
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Corpus {
        self.documents.iter_mut().for_each(|d| d.domain = domain);
        self
    }

    /// Per-class document counts for labeled documents.
    pub fn label_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for d in &self.documents {
            if let Some(l) = d.label.filter(|&l| l < classes) {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Writes JSON lines: `rating` when the document has one, else `label`
    /// when labeled, else just `text`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| DasError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for doc in &self.documents {
            let text = doc.tokens.join(" ");
            let line = match (doc.rating, doc.label) {
                (Some(r), _) => json!({ "text": text, "rating": r }),
                (None, Some(l)) => json!({ "text": text, "label": label_name(l) }),
                (None, None) => json!({ "text": text }),
            };
            writeln!(out, "{line}").map_err(|e| DasError::io(path, e))?;
        }
        out.flush().map_err(|e| DasError::io(path, e))
    }
}

/// Guesses the format from the first non-blank line.
pub fn detect_format(path: &Path) -> Result<CorpusFormat> {
    let file = File::open(path).map_err(|e| DasError::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DasError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?;
        return if value.get("rating").is_some() {
            Ok(CorpusFormat::JsonlRating)
        } else {
            Ok(CorpusFormat::JsonlLabel)
        };
    }
    Err(DasError::Data(format!("{}: corpus file is empty", path.display())))
}

fn parse_err(path: &Path, line: usize, msg: impl ToString) -> DasError {
    DasError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    }
}

/// One document per non-blank line, in file order.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    scheme: RatingScheme,
    domain: DomainTag,
) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| DasError::io(path, e))?;
    let mut documents = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DasError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        let text = value
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(path, lineno, "missing string field 'text'"))?;
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(parse_err(path, lineno, "document has no tokens"));
        }
        let (label, rating) = match format {
            CorpusFormat::JsonlRating => {
                let rating = value
                    .get("rating")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| parse_err(path, lineno, "missing numeric field 'rating'"))?;
                let label = map_rating_to_label(rating, scheme)
                    .map_err(|e| parse_err(path, lineno, e))?;
                (Some(label), Some(rating))
            }
            CorpusFormat::JsonlLabel => match value.get("label") {
                None | Some(Value::Null) => (None, None),
                Some(Value::String(name)) => {
                    let label = label_from_name(name).ok_or_else(|| {
                        parse_err(path, lineno, format!("unknown label '{name}'"))
                    })?;
                    (Some(label), None)
                }
                Some(other) => {
                    return Err(parse_err(path, lineno, format!("label must be a string, got {other}")))
                }
            },
        };
        documents.push(Document {
            tokens,
            label,
            rating,
            domain,
        });
    }
    Ok(Corpus::new(documents))
}
