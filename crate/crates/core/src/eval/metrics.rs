use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};

fn check(pred: &[usize], gold: &[usize], classes: usize) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(DasError::Shape {
            op: "metrics",
            left: vec![pred.len()],
            right: vec![gold.len()],
        });
    }
    if gold.is_empty() {
        return Err(DasError::invalid("metrics need at least one example"));
    }
    if let Some(&c) = pred.iter().chain(gold).find(|&&c| c >= classes) {
        return Err(DasError::invalid(format!("class {c} out of range for {classes} classes")));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    let classes = pred.iter().chain(gold).max().map_or(1, |m| m + 1);
    check(pred, gold, classes)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// `m[gold][predicted]` counts.
pub fn confusion_matrix(pred: &[usize], gold: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check(pred, gold, classes)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class precision, recall and F1; an empty denominator gives 0.
pub fn class_scores(confusion: &[Vec<usize>]) -> Vec<ClassScores> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let predicted: usize = (0..c).map(|g| confusion[g][k]).sum();
            let support: usize = confusion[k].iter().sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores { precision, recall, f1, support }
        })
        .collect()
}

/// Unweighted mean F1 over the classes that occur in `gold`.
pub fn macro_f1(pred: &[usize], gold: &[usize], classes: usize) -> Result<f64> {
    let scores = class_scores(&confusion_matrix(pred, gold, classes)?);
    let present: Vec<f64> = scores.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_predictions(pred: &[usize], gold: &[usize], classes: usize) -> Result<EvalReport> {
    let confusion = confusion_matrix(pred, gold, classes)?;
    Ok(EvalReport {
        n: gold.len(),
        accuracy: accuracy(pred, gold)?,
        macro_f1: macro_f1(pred, gold, classes)?,
        per_class: class_scores(&confusion),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let gold = [0, 0, 1, 1, 2, 2];
        let pred = [0, 1, 1, 1, 2, 0];
        assert_abs_diff_eq!(accuracy(&pred, &gold).unwrap(), 4.0 / 6.0);
        // per class: P = 1/2, 2/3, 1; R = 1/2, 1, 1/2
        let f = [0.5, 2.0 * (2.0 / 3.0) / (5.0 / 3.0), 2.0 * 0.5 / 1.5];
        let want = f.iter().sum::<f64>() / 3.0;
        assert_abs_diff_eq!(macro_f1(&pred, &gold, 3).unwrap(), want, epsilon = 1e-12);
        let cm = confusion_matrix(&pred, &gold, 3).unwrap();
        assert_eq!(cm, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
    }

    #[test]
    fn absent_gold_classes_are_not_averaged() {
        let gold = [0, 0, 2];
        let pred = [0, 0, 2];
        assert_eq!(macro_f1(&pred, &gold, 3).unwrap(), 1.0);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let acc = accuracy(&pred, &gold).unwrap();
            let f1 = macro_f1(&pred, &gold, 3).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!((0.0..=1.0).contains(&f1));
            let perfect = macro_f1(&gold, &gold, 3).unwrap();
            prop_assert_eq!(perfect, 1.0);
        }
    }
}
