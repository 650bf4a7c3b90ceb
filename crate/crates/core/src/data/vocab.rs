use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Corpus;
use crate::error::{DasError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Closed token index: padding, unknown, then content tokens by descending
/// frequency (ties by first occurrence).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(DasError::Data(
                "vocabulary must start with the padding and unknown tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DasError::Data(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or the unknown index.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of a document, truncated to `max_len`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }

    /// SHA-256 over the newline-joined token list.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| DasError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DasError::io(path, e))?;
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }
}

pub fn build_vocab(corpora: &[&Corpus], max_content: usize) -> Result<Vocab> {
    if max_content == 0 {
        return Err(DasError::invalid("vocabulary needs at least one content token"));
    }
    // token -> (count, first occurrence)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for corpus in corpora {
        for doc in &corpus.documents {
            for tok in &doc.tokens {
                let entry = counts.entry(tok.as_str()).or_insert((0, seen));
                entry.0 += 1;
                seen += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(DasError::Data("cannot build a vocabulary from empty corpora".into()));
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .filter(|(t, _)| *t != PAD_TOKEN && *t != UNK_TOKEN)
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(ranked.into_iter().take(max_content).map(|(t, _, _)| t.to_string()));
    Vocab::from_tokens(tokens)
}
