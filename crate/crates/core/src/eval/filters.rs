//! Which n-grams drive the filters the classifier relies on most.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{label_name, DomainTag, Vocab, PAD};
use crate::error::{DasError, Result};
use crate::model::{encode, ModelParams};
use crate::rng::{stream, Stream};

/// How padding is shown in rendered n-grams.
pub const PAD_GLYPH: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramActivation {
    pub ngram: Vec<String>,
    pub activation: f64,
    /// Every domain the n-gram was seen in.
    pub domains: Vec<DomainTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub filter: usize,
    pub weight: f64,
    pub top: Vec<NgramActivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFilters {
    pub class: usize,
    pub name: String,
    pub filters: Vec<FilterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub classes: Vec<ClassFilters>,
}

/// For each class, the `k_filters` filters with the largest classifier
/// weight, each with the `k_ngrams` distinct windows that activate it most.
/// The result does not depend on document order.
pub fn filter_analysis(
    params: &ModelParams,
    vocab: &Vocab,
    docs: &[(Vec<usize>, DomainTag)],
    k_filters: usize,
    k_ngrams: usize,
) -> Result<FilterReport> {
    if vocab.len() != params.vocab_len() {
        return Err(DasError::invalid(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            params.vocab_len()
        )));
    }
    let h = params.hidden();
    if k_filters == 0 || k_filters > h {
        return Err(DasError::invalid(format!("k_filters must lie in [1, {h}], got {k_filters}")));
    }

    let mut selected: Vec<Vec<usize>> = Vec::new();
    for c in 0..params.classes() {
        let w = params.out_w.row(c);
        let mut order: Vec<usize> = (0..h).collect();
        order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
        order.truncate(k_filters);
        selected.push(order);
    }
    let mut wanted = vec![false; h];
    selected.iter().flatten().for_each(|&j| wanted[j] = true);

    // filter -> window ids -> (activation, domains)
    let mut best: Vec<BTreeMap<Vec<usize>, (f64, Vec<DomainTag>)>> = vec![BTreeMap::new(); h];
    let mut rng = stream(0, Stream::Dropout);
    for (doc, domain) in docs {
        if doc.is_empty() {
            continue;
        }
        let enc = encode(doc, params, 0.0, false, &mut rng)?;
        for (i, window) in enc.windows.iter().enumerate() {
            let row = enc.hidden.row(i);
            for j in (0..h).filter(|&j| wanted[j]) {
                let entry = best[j].entry(window.clone()).or_insert((row[j], Vec::new()));
                if !entry.1.contains(domain) {
                    entry.1.push(*domain);
                    entry.1.sort_by_key(|d| d.as_str());
                }
            }
        }
    }

    let render = |ids: &[usize]| -> Vec<String> {
        ids.iter()
            .map(|&id| if id == PAD { PAD_GLYPH.to_string() } else { vocab.token(id).to_string() })
            .collect()
    };
    let classes = selected
        .iter()
        .enumerate()
        .map(|(c, filters)| ClassFilters {
            class: c,
            name: label_name(c),
            filters: filters
                .iter()
                .map(|&j| {
                    let mut ranked: Vec<(&Vec<usize>, &(f64, Vec<DomainTag>))> = best[j].iter().collect();
                    ranked.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(b.0)));
                    FilterSummary {
                        filter: j,
                        weight: params.out_w.row(c)[j],
                        top: ranked
                            .into_iter()
                            .take(k_ngrams)
                            .map(|(ids, (act, domains))| NgramActivation {
                                ngram: render(ids),
                                activation: *act,
                                domains: domains.clone(),
                            })
                            .collect(),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(FilterReport { classes })
}

impl FilterReport {
    /// One block per class; columns are filters, rows are n-gram ranks.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for class in &self.classes {
            let _ = writeln!(out, "== {} ==", class.name);
            let header: Vec<String> = class.filters.iter().map(|f| format!("filter {}", f.filter)).collect();
            let _ = writeln!(out, "{}", header.join("\t"));
            let rows = class.filters.iter().map(|f| f.top.len()).max().unwrap_or(0);
            for r in 0..rows {
                let cells: Vec<String> = class
                    .filters
                    .iter()
                    .map(|f| f.top.get(r).map(|n| n.ngram.join("-")).unwrap_or_default())
                    .collect();
                let _ = writeln!(out, "{}", cells.join("\t"));
            }
            out.push('\n');
        }
        out
    }
}
