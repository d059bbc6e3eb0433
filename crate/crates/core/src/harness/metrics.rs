use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bucket7, is_positive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Sign accuracy over samples with a non-zero label.
    pub acc2: f64,
    /// Mean of the positive-class and negative-class F1 on the same subset.
    pub f1: f64,
    /// Seven-bucket accuracy over all samples.
    pub acc7: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn classification_metrics(predictions: &[f64], labels: &[f64]) -> Result<ClassificationMetrics> {
    if predictions.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    let mut hit7 = 0usize;
    for (&p, &y) in predictions.iter().zip(labels) {
        if bucket7(p) == bucket7(y) {
            hit7 += 1;
        }
        if y == 0.0 {
            continue;
        }
        match (is_positive(p), y > 0.0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let nonzero = tp + tn + fp + fn_;
    let acc2 = if nonzero == 0 { 0.0 } else { (tp + tn) as f64 / nonzero as f64 };
    let macro_f1 = 0.5 * (f1(tp, fp, fn_) + f1(tn, fn_, fp));
    Ok(ClassificationMetrics { acc2, f1: macro_f1, acc7: hit7 as f64 / predictions.len() as f64 })
}
