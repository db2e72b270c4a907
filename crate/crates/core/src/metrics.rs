//! Classification metrics and the report emitted by training, evaluation and
//! ablation runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub accuracy: f64,
    /// F1 of the highest class id (class 1 in the binary case).
    pub f1_positive: f64,
    pub macro_f1: f64,
    /// The positive class had neither predictions nor labels, so its F1 was
    /// set to 0 by convention.
    pub degenerate_f1: bool,
}

/// F1 for one class, or `None` when the class never occurs on either side.
fn class_f1(preds: &[usize], labels: &[usize], class: usize) -> Option<f64> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, l) in preds.iter().zip(labels) {
        match (*p == class, *l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return None;
    }
    if tp == 0 {
        return Some(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Some(2.0 * precision * recall / (precision + recall))
}

pub fn score_predictions(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassScores> {
    if preds.len() != labels.len() {
        return Err(Error::dim("score_predictions", &[preds.len()], &[labels.len()]));
    }
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    if num_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let positive = class_f1(preds, labels, num_classes - 1);
    let macro_f1 = (0..num_classes)
        .map(|c| class_f1(preds, labels, c).unwrap_or(0.0))
        .sum::<f64>()
        / num_classes as f64;
    Ok(ClassScores {
        accuracy: correct as f64 / preds.len() as f64,
        f1_positive: positive.unwrap_or(0.0),
        macro_f1,
        degenerate_f1: positive.is_none(),
    })
}

/// One epoch of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean weighted error term over the epoch's samples.
    pub error_term: f64,
    /// Mean weighted consistency term; exactly zero when the term is off.
    pub consistency_term: f64,
    /// Accuracy of the predictions made while computing gradients.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    /// Largest absolute batch-gradient entry on the sentiment table.
    pub sentiment_grad_max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tag: String,
    pub samples: usize,
    pub accuracy: f64,
    pub f1_positive: f64,
    pub macro_f1: f64,
    pub degenerate_f1: bool,
    pub mean_loss: f64,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

impl MetricsReport {
    pub fn new(tag: impl Into<String>, samples: usize, scores: ClassScores, mean_loss: f64) -> Self {
        Self {
            tag: tag.into(),
            samples,
            accuracy: scores.accuracy,
            f1_positive: scores.f1_positive,
            macro_f1: scores.macro_f1,
            degenerate_f1: scores.degenerate_f1,
            mean_loss,
            history: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn hand_confusion_matrix() {
        let s = score_predictions(&[1, 1, 0, 0], &[1, 0, 0, 0], 2).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert!((s.f1_positive - 2.0 / 3.0).abs() < 1e-15);
        assert!(!s.degenerate_f1);
    }

    #[test]
    fn perfect_predictions() {
        let s = score_predictions(&[1, 0, 1], &[1, 0, 1], 2).unwrap();
        assert_eq!((s.accuracy, s.f1_positive, s.macro_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn absent_positive_class_is_flagged() {
        let s = score_predictions(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(s.f1_positive, 0.0);
        assert!(s.degenerate_f1);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn empty_or_mismatched_input_is_rejected() {
        assert!(score_predictions(&[], &[], 2).is_err());
        assert!(score_predictions(&[0], &[0, 1], 2).is_err());
    }

    proptest! {
        #[test]
        fn scores_are_bounded(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40)) {
            let (p, l): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let s = score_predictions(&p, &l, 3).unwrap();
            for v in [s.accuracy, s.f1_positive, s.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
