//! Classification metrics over the five ordinal sentiment classes.

use crate::domain::SentimentClass;
use crate::error::{Error, Result};

const K: usize = SentimentClass::COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Mean absolute difference of class ordinals.
    pub mae: f64,
    /// `confusion[truth][prediction]`.
    pub confusion: [[u64; K]; K],
    /// Row-normalized confusion; rows of absent classes are all zero.
    pub confusion_normalized: [[f64; K]; K],
    pub n: usize,
}

impl EvalReport {
    pub fn support(&self, class: SentimentClass) -> u64 {
        self.confusion[class.ordinal()].iter().sum()
    }

    /// Per-class F1 derived from the confusion matrix; zero when precision and
    /// recall are both zero.
    pub fn f1_per_class(&self) -> [f64; K] {
        f1_from_confusion(&self.confusion)
    }

    /// Fixed-width text rendering of the row-normalized confusion matrix.
    pub fn normalized_confusion_text(&self) -> String {
        let mut out = String::from("truth\\pred");
        for c in SentimentClass::ALL {
            out.push_str(&format!("\t{}", c.name()));
        }
        out.push('\n');
        for t in SentimentClass::ALL {
            out.push_str(t.name());
            for p in 0..K {
                out.push_str(&format!("\t{:.4}", self.confusion_normalized[t.ordinal()][p]));
            }
            out.push('\n');
        }
        out
    }
}

fn f1_from_confusion(confusion: &[[u64; K]; K]) -> [f64; K] {
    let mut f1 = [0.0; K];
    for c in 0..K {
        let tp = confusion[c][c] as f64;
        let predicted: u64 = (0..K).map(|t| confusion[t][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        f1[c] = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    f1
}

/// Support-weighted mean of per-class F1 over arbitrary integer labels.
/// Classes absent from `truths` carry zero weight.
pub fn weighted_f1(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() || truths.is_empty() {
        return Err(Error::domain(format!(
            "weighted F1 over {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let k = predictions.iter().chain(truths).max().unwrap() + 1;
    let (mut tp, mut predicted, mut actual) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&p, &t) in predictions.iter().zip(truths) {
        predicted[p] += 1;
        actual[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let n = truths.len() as f64;
    Ok((0..k)
        .filter(|&c| actual[c] > 0 && tp[c] > 0)
        .map(|c| {
            let (tp, pr, ac) = (tp[c] as f64, predicted[c] as f64, actual[c] as f64);
            ac / n * 2.0 * tp / (pr + ac)
        })
        .sum())
}

pub fn compute_metrics(predictions: &[SentimentClass], truths: &[SentimentClass]) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(Error::domain(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::domain("cannot evaluate an empty prediction set"));
    }
    let n = truths.len();
    let mut confusion = [[0u64; K]; K];
    let mut abs_err = 0usize;
    for (&p, &t) in predictions.iter().zip(truths) {
        confusion[t.ordinal()][p.ordinal()] += 1;
        abs_err += p.ordinal().abs_diff(t.ordinal());
    }

    let correct: u64 = (0..K).map(|c| confusion[c][c]).sum();
    let f1 = f1_from_confusion(&confusion);
    let weighted_f1 = (0..K)
        .map(|c| confusion[c].iter().sum::<u64>() as f64 / n as f64 * f1[c])
        .sum();

    let mut confusion_normalized = [[0.0; K]; K];
    for (row, counts) in confusion_normalized.iter_mut().zip(&confusion) {
        let total: u64 = counts.iter().sum();
        if total > 0 {
            for (v, &c) in row.iter_mut().zip(counts) {
                *v = c as f64 / total as f64;
            }
        }
    }

    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        weighted_f1,
        mae: abs_err as f64 / n as f64,
        confusion,
        confusion_normalized,
        n,
    })
}
