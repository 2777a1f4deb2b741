//! Mini-batch training with BCE and Adam, evaluation, and gradient checking.

mod adam;
mod gradcheck;
mod loss;
mod metrics;

pub use adam::AdamState;
pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, CheckLoss, GradCheckOptions,
    GradCheckReport, LayerCheck, Mismatch,
};
pub use loss::{bce_grad, bce_loss, bce_mean, PROB_CLIP};
pub use metrics::{Confusion, Metrics};

use std::fmt;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Sub-stream ids handed to [`Rng::derive`] together with the run seed.
pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;
pub const SPLIT_STREAM: u64 = 3;

const EVAL_BATCH: usize = 64;

/// A network input `[3, S, S]` with its 0/1 label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when no held-out data was given.
    pub test_acc: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,test_acc";

    pub fn csv_line(&self) -> String {
        let test = self
            .test_acc
            .map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
        format!(
            "{},{:.6},{:.6},{}",
            self.epoch, self.train_loss, self.train_acc, test
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EpochRecord::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn check_dataset(data: &[Sample], what: &str) -> Result<()> {
    let first = data
        .first()
        .ok_or_else(|| Error::param(format!("{what} set is empty")))?;
    for s in data {
        if s.label > 1 {
            return Err(Error::param(format!("labels must be 0 or 1, got {}", s.label)));
        }
        if s.input.shape() != first.input.shape() {
            return Err(Error::shape(format!(
                "{what} inputs disagree in shape: {:?} vs {:?}",
                first.input.shape(),
                s.input.shape()
            )));
        }
    }
    Ok(())
}

fn stack(data: &[Sample], indices: &[usize]) -> Result<Tensor> {
    let items: Vec<&Tensor> = indices.iter().map(|&i| &data[i].input).collect();
    Tensor::stack(&items)
}

/// Splits `0..n` into batches; a trailing batch of one sample is folded into
/// its predecessor so batch norm always sees at least two.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

pub fn train(model: &mut Model, train_set: &[Sample], test_set: &[Sample], cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, train_set, test_set, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch.
///
/// Shuffling and dropout draw from streams derived from `cfg.seed`, so a
/// fixed seed reproduces the run exactly.
pub fn train_with(
    model: &mut Model,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    check_dataset(train_set, "training")?;
    if !test_set.is_empty() {
        check_dataset(test_set, "test")?;
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::param("epochs and batch_size must be positive"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::param(format!(
            "learning rate must be finite and non-negative, got {}",
            cfg.learning_rate
        )));
    }

    let mut shuffle_rng = Rng::derive(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = Rng::derive(cfg.seed, DROPOUT_STREAM);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let x = stack(train_set, idx)?;
            let labels: Vec<u8> = idx.iter().map(|&i| train_set[i].label).collect();
            model.zero_grad();
            let scores = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let loss = bce_mean(scores.data(), &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                });
            }
            let n = labels.len() as f64;
            let grad = Tensor::vector(
                scores
                    .data()
                    .iter()
                    .zip(&labels)
                    .map(|(&p, &y)| bce_grad(p, y) / n)
                    .collect(),
            );
            model.backward(&grad)?;
            adam.step_params(model.params())?;

            loss_sum += loss * n;
            correct += scores
                .data()
                .iter()
                .zip(&labels)
                .filter(|(&p, &y)| (p >= cfg.threshold) == (y == 1))
                .count();
        }
        let test_acc = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(model, test_set, cfg.threshold)?.accuracy)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok(log)
}

/// Eval-mode class-1 probabilities.
pub fn predict_all(model: &mut Model, data: &[Sample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for idx in indices.chunks(EVAL_BATCH) {
        let x = stack(data, idx)?;
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Ok(out)
}

/// Predicts class 1 iff `p >= threshold`.
pub fn evaluate(model: &mut Model, data: &[Sample], threshold: f64) -> Result<Metrics> {
    check_dataset(data, "evaluation")?;
    let probs = predict_all(model, data)?;
    Ok(metrics_from_scores(&probs, data.iter().map(|s| s.label), threshold))
}

pub fn metrics_from_scores(probs: &[f64], labels: impl IntoIterator<Item = u8>, threshold: f64) -> Metrics {
    let mut counts = Confusion::default();
    for (&p, y) in probs.iter().zip(labels) {
        counts.record(p >= threshold, y == 1);
    }
    Metrics::from_counts(counts)
}

impl fmt::Display for TrainLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}
