//! Classical and expected confusion matrices over a batch of
//! predictions and labels.
//!
//! The classical matrix thresholds each prediction at a fixed `tau`; the
//! expected matrix replaces the indicator functions by the threshold
//! distribution's cdf evaluated at the predictions, which is its
//! entrywise expectation over `tau` and the object every score-oriented
//! loss is built on.

use crate::distributions::ThresholdDist;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("predictions and labels have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("batch must contain at least one sample")]
    Empty,
    #[error("prediction {1} at index {0} lies outside [0, 1]")]
    PredictionOutOfRange(usize, f64),
    #[error("threshold {0} lies outside (0, 1)")]
    ThresholdOutOfRange(f64),
}

/// A batch of paired model outputs in `[0, 1]` and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    predictions: Vec<f64>,
    labels: Vec<u8>,
    n_pos: usize,
    n_neg: usize,
}

impl LabeledBatch {
    pub fn new(predictions: Vec<f64>, labels: Vec<u8>) -> Result<Self, BatchError> {
        if predictions.len() != labels.len() {
            return Err(BatchError::LengthMismatch(predictions.len(), labels.len()));
        }
        if predictions.is_empty() {
            return Err(BatchError::Empty);
        }
        for (i, p) in predictions.iter().enumerate() {
            if !(0.0..=1.0).contains(p) || p.is_nan() {
                return Err(BatchError::PredictionOutOfRange(i, *p));
            }
        }
        let labels: Vec<u8> = labels.into_iter().map(|y| (y != 0) as u8).collect();
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let n_neg = labels.len() - n_pos;
        Ok(Self {
            predictions,
            labels,
            n_pos,
            n_neg,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of positive samples (`y = 1`).
    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    /// Number of negative samples (`y = 0`).
    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Real-valued `(tn, fp, fn, tp)` tuple that both matrix flavors reduce
/// to when a score is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntries {
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tp: f64,
}

impl ConfusionEntries {
    pub fn total(&self) -> f64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// Entries in `(tn, fp, fn, tp)` order.
    pub fn as_array(&self) -> [f64; 4] {
        [self.tn, self.fp, self.fn_, self.tp]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ConfusionEntries {
            tn: a[0],
            fp: a[1],
            fn_: a[2],
            tp: a[3],
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        ConfusionEntries {
            tn: self.tn * k,
            fp: self.fp * k,
            fn_: self.fn_ * k,
            tp: self.tp * k,
        }
    }
}

/// Integer confusion matrix at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassicalConfusion {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ClassicalConfusion {
    pub fn entries(&self) -> ConfusionEntries {
        ConfusionEntries {
            tn: self.tn as f64,
            fp: self.fp as f64,
            fn_: self.fn_ as f64,
            tp: self.tp as f64,
        }
    }

    /// Trace `tn + tp`.
    pub fn trace(&self) -> u64 {
        self.tn + self.tp
    }
}

/// Real-entry expected confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedConfusion {
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tp: f64,
}

impl ExpectedConfusion {
    pub fn entries(&self) -> ConfusionEntries {
        ConfusionEntries {
            tn: self.tn,
            fp: self.fp,
            fn_: self.fn_,
            tp: self.tp,
        }
    }

    pub fn trace(&self) -> f64 {
        self.tn + self.tp
    }
}

/// Per-sample partials of the four expected entries with respect to the
/// sample's prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryGradient {
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tp: f64,
}

// Pairwise summation keeps the row-sum invariant at 1e-9 for large n.
const PAIRWISE_BASE: usize = 64;

fn pairwise_sum(terms: &mut dyn Iterator<Item = f64>, len: usize) -> f64 {
    fn rec(buf: &[f64]) -> f64 {
        if buf.len() <= PAIRWISE_BASE {
            buf.iter().sum()
        } else {
            let mid = buf.len() / 2;
            rec(&buf[..mid]) + rec(&buf[mid..])
        }
    }
    let buf: Vec<f64> = terms.take(len).collect();
    rec(&buf)
}

/// Threshold the batch at a fixed `tau` in `(0, 1)`.
///
/// A sample counts as predicted positive iff its prediction strictly
/// exceeds `tau`; ties go to the negative prediction so that every
/// sample is counted exactly once.
pub fn classical_cm(batch: &LabeledBatch, tau: f64) -> Result<ClassicalConfusion, BatchError> {
    if !(tau > 0.0 && tau < 1.0) || tau.is_nan() {
        return Err(BatchError::ThresholdOutOfRange(tau));
    }
    let mut cm = ClassicalConfusion {
        tn: 0,
        fp: 0,
        fn_: 0,
        tp: 0,
    };
    for (p, y) in batch.predictions().iter().zip(batch.labels()) {
        match (*y, *p > tau) {
            (0, false) => cm.tn += 1,
            (0, true) => cm.fp += 1,
            (1, false) => cm.fn_ += 1,
            (1, true) => cm.tp += 1,
            _ => unreachable!("labels are normalized to {{0, 1}}"),
        }
    }
    Ok(cm)
}

/// Entrywise expectation of the classical matrix over `tau ~ dist`.
pub fn expected_cm(batch: &LabeledBatch, dist: &dyn ThresholdDist) -> ExpectedConfusion {
    let cdf: Vec<f64> = batch
        .predictions()
        .iter()
        .map(|p| dist.cdf(*p).expect("batch predictions lie in [0, 1]"))
        .collect();
    let n = batch.len();
    let labels = batch.labels();
    let tp = pairwise_sum(
        &mut (0..n).map(|i| if labels[i] == 1 { cdf[i] } else { 0.0 }),
        n,
    );
    let fn_ = pairwise_sum(
        &mut (0..n).map(|i| if labels[i] == 1 { 1.0 - cdf[i] } else { 0.0 }),
        n,
    );
    let fp = pairwise_sum(
        &mut (0..n).map(|i| if labels[i] == 0 { cdf[i] } else { 0.0 }),
        n,
    );
    let tn = pairwise_sum(
        &mut (0..n).map(|i| if labels[i] == 0 { 1.0 - cdf[i] } else { 0.0 }),
        n,
    );
    ExpectedConfusion { tn, fp, fn_, tp }
}

/// Per-sample partials of [`expected_cm`] with respect to each
/// prediction. Only `F(prediction)` depends on the prediction, so each
/// partial is the pdf gated by the label.
pub fn expected_cm_gradient(batch: &LabeledBatch, dist: &dyn ThresholdDist) -> Vec<EntryGradient> {
    batch
        .predictions()
        .iter()
        .zip(batch.labels())
        .map(|(p, y)| {
            let f = dist.pdf(*p).expect("batch predictions lie in [0, 1]");
            if *y == 1 {
                EntryGradient {
                    tn: 0.0,
                    fp: 0.0,
                    fn_: -f,
                    tp: f,
                }
            } else {
                EntryGradient {
                    tn: -f,
                    fp: f,
                    fn_: 0.0,
                    tp: 0.0,
                }
            }
        })
        .collect()
}
