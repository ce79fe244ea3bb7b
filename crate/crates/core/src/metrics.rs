//! Confusion-matrix accounting with Drone as the positive class, and the
//! accuracy / sensitivity / precision report.

use std::fmt;

use thiserror::Error;

use crate::dataset::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{preds} predictions for {truth} ground-truth labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("no samples to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same outcomes counted with Bird as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }

    pub fn record(&mut self, pred: Label, truth: Label) {
        match (pred, truth) {
            (Label::Drone, Label::Drone) => self.tp += 1,
            (Label::Bird, Label::Bird) => self.tn += 1,
            (Label::Drone, Label::Bird) => self.fp += 1,
            (Label::Bird, Label::Drone) => self.fn_ += 1,
        }
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        cm.record(p, t);
    }
    Ok(cm)
}

/// A ratio whose denominator may be zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Defined(f64),
    Undefined,
}

impl Metric {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Defined(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "undefined" {
            Some(Metric::Undefined)
        } else {
            s.parse().ok().map(Metric::Defined)
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Defined(v) => write!(f, "{v}"),
            Metric::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub accuracy: Metric,
    pub sensitivity: Metric,
    pub precision: Metric,
    pub misclassified_ids: Vec<String>,
}

/// accuracy = (TP+TN)/total, sensitivity = TP/(TP+FN), precision = TP/(TP+FP).
pub fn report(cm: &ConfusionMatrix) -> MetricReport {
    MetricReport {
        accuracy: Metric::ratio(cm.tp + cm.tn, cm.total()),
        sensitivity: Metric::ratio(cm.tp, cm.tp + cm.fn_),
        precision: Metric::ratio(cm.tp, cm.tp + cm.fp),
        misclassified_ids: Vec::new(),
    }
}

/// Ids whose prediction disagrees with the ground truth, in input order.
pub fn misclassified<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    preds: &[Label],
    truth: &[Label],
) -> Vec<String> {
    ids.into_iter()
        .zip(preds.iter().zip(truth))
        .filter(|(_, (p, t))| p != t)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Confusion matrix and report, including the misclassified-id list.
pub fn evaluate(
    ids: &[&str],
    preds: &[Label],
    truth: &[Label],
) -> Result<(ConfusionMatrix, MetricReport), MetricsError> {
    let cm = confusion(preds, truth)?;
    let mut rep = report(&cm);
    rep.misclassified_ids = misclassified(ids.iter().copied(), preds, truth);
    Ok((cm, rep))
}
