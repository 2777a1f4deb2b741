//! Confusion-matrix metrics.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts plus derived ratios in `[0, 1]`.
///
/// Precision, recall and F-score are 0 whenever their denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub counts: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(counts: Confusion) -> Self {
        let Confusion { tp, fp, tn, fn_ } = counts;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            counts,
            accuracy: ratio(tp + tn, counts.total()),
            precision,
            recall,
            f_score,
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy: {:.2}%", self.accuracy * 100.0)?;
        writeln!(f, "precision: {:.2}%", self.precision * 100.0)?;
        writeln!(f, "recall: {:.2}%", self.recall * 100.0)?;
        write!(f, "f_score: {:.2}%", self.f_score * 100.0)
    }
}
