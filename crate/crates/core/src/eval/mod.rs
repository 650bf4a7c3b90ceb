//! Classification metrics, significance testing and filter inspection.

mod filters;
mod metrics;
mod ttest;

pub use filters::{filter_analysis, ClassFilters, FilterReport, FilterSummary, NgramActivation, PAD_GLYPH};
pub use metrics::{accuracy, class_scores, confusion_matrix, evaluate_predictions, macro_f1, ClassScores, EvalReport};
pub use ttest::{ttest_one_tailed, TTest};

use crate::error::Result;
use crate::model::{predict, ModelParams};

/// Predicts `docs` in eval mode and scores them against `gold`.
pub fn evaluate(params: &ModelParams, docs: &[Vec<usize>], gold: &[usize]) -> Result<EvalReport> {
    let pred = predict(params, docs)?;
    evaluate_predictions(&pred, gold, params.classes())
}
