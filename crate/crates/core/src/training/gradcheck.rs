//! Central-difference verification of every parameter gradient.
//!
//! Runs in eval mode: dropout is the identity and batch norm uses its
//! running statistics, so the loss is a deterministic function of the
//! parameters. Each perturbation only re-runs the stack from the layer that
//! owns the parameter, starting from cached activations.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::loss::{bce_grad, bce_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckLoss {
    /// BCE on the model's probability output.
    Bce,
    /// `½ (score - label)²`, for linear heads.
    Squared,
}

impl CheckLoss {
    fn value(&self, score: f64, label: u8) -> f64 {
        match self {
            CheckLoss::Bce => bce_loss(score, label),
            CheckLoss::Squared => 0.5 * (score - label as f64).powi(2),
        }
    }

    fn grad(&self, score: f64, label: u8) -> f64 {
        match self {
            CheckLoss::Bce => bce_grad(score, label),
            CheckLoss::Squared => score - label as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    pub loss: CheckLoss,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-4,
            loss: CheckLoss::Bce,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub layer: usize,
    pub layer_name: &'static str,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {} ({}), param {}, index {}: analytic {:e} vs numeric {:e} (rel err {:e})",
            self.layer,
            self.layer_name,
            self.param,
            self.index,
            self.analytic,
            self.numeric,
            self.rel_error
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: usize,
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub layers: Vec<LayerCheck>,
    /// Entries over tolerance, first 32 kept.
    pub failures: Vec<Mismatch>,
    pub failure_count: usize,
}

const MAX_REPORTED: usize = 32;

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure_count == 0
    }

    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_rel_error))
    }

    pub fn checked(&self) -> usize {
        self.layers.iter().map(|l| l.checked).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            writeln!(
                f,
                "layer {:>2} {:<10} params {:>6}  max rel err {:.3e}",
                l.layer, l.name, l.checked, l.max_rel_error
            )?;
        }
        if self.passed() {
            write!(f, "all gradients within {:e}", self.tol)
        } else {
            writeln!(f, "{} entries exceed {:e}:", self.failure_count, self.tol)?;
            for m in &self.failures {
                writeln!(f, "  {m}")?;
            }
            Ok(())
        }
    }
}

fn batch_of_one(input: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    input.reshape(&shape)
}

fn score_loss(model: &mut Model, start: usize, x: &Tensor, label: u8, loss: CheckLoss) -> Result<f64> {
    let out = model.forward_from(start, x, Mode::Eval, &mut Rng::new(0))?;
    let score = model.scores(&out)?;
    Ok(loss.value(score.data()[0], label))
}

/// Backpropagated gradients per layer, per parameter, for one sample.
pub fn analytic_gradients(model: &Model, input: &Tensor, label: u8, loss: CheckLoss) -> Result<Vec<Vec<Tensor>>> {
    let mut m = model.clone();
    m.zero_grad();
    let x = batch_of_one(input)?;
    let score = m.forward(&x, Mode::Eval, &mut Rng::new(0))?;
    let g = loss.grad(score.data()[0], label);
    m.backward(&Tensor::vector(vec![g]))?;
    Ok(m
        .layers_mut()
        .iter_mut()
        .map(|l| l.params().into_iter().map(|p| p.grad.clone()).collect())
        .collect())
}

/// Compares `analytic` against central differences of the loss.
pub fn compare_gradients(
    model: &Model,
    input: &Tensor,
    label: u8,
    analytic: &[Vec<Tensor>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut m = model.clone();
    if analytic.len() != m.layers().len() {
        return Err(Error::shape(format!(
            "{} gradient groups for {} layers",
            analytic.len(),
            m.layers().len()
        )));
    }
    // inputs[l] is what layer l receives
    let mut inputs = vec![batch_of_one(input)?];
    let mut rng = Rng::new(0);
    for l in 0..m.layers().len() {
        let next = m.layers_mut()[l].forward(&inputs[l], Mode::Eval, &mut rng)?;
        inputs.push(next);
    }

    let mut report = GradCheckReport {
        tol: opts.tol,
        layers: Vec::new(),
        failures: Vec::new(),
        failure_count: 0,
    };
    for (l, grads) in analytic.iter().enumerate() {
        let shapes: Vec<Vec<usize>> = m.layers_mut()[l]
            .params()
            .iter()
            .map(|p| p.value.shape().to_vec())
            .collect();
        if shapes.len() != grads.len() {
            return Err(Error::shape(format!("layer {l}: gradient count mismatch")));
        }
        if shapes.is_empty() {
            continue;
        }
        let name = m.layers()[l].name();
        let mut check = LayerCheck {
            layer: l,
            name,
            checked: 0,
            max_rel_error: 0.0,
        };
        for (p, grad) in grads.iter().enumerate() {
            grad.expect_shape(&shapes[p])?;
            for i in 0..grad.len() {
                let orig = m.layers_mut()[l].params()[p].value.data()[i];
                m.layers_mut()[l].params()[p].value.data_mut()[i] = orig + opts.h;
                let up = score_loss(&mut m, l, &inputs[l], label, opts.loss)?;
                m.layers_mut()[l].params()[p].value.data_mut()[i] = orig - opts.h;
                let down = score_loss(&mut m, l, &inputs[l], label, opts.loss)?;
                m.layers_mut()[l].params()[p].value.data_mut()[i] = orig;

                let numeric = (up - down) / (2.0 * opts.h);
                let a = grad.data()[i];
                let rel_error = (a - numeric).abs() / a.abs().max(1.0);
                check.checked += 1;
                if !(rel_error <= check.max_rel_error) {
                    check.max_rel_error = rel_error;
                }
                if !(rel_error <= opts.tol) {
                    report.failure_count += 1;
                    if report.failures.len() < MAX_REPORTED {
                        report.failures.push(Mismatch {
                            layer: l,
                            layer_name: name,
                            param: p,
                            index: i,
                            analytic: a,
                            numeric,
                            rel_error,
                        });
                    }
                }
            }
        }
        report.layers.push(check);
    }
    Ok(report)
}

/// Checks every parameter of `model` on one `(input, label)` pair.
pub fn grad_check(model: &Model, input: &Tensor, label: u8, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, input, label, opts.loss)?;
    compare_gradients(model, input, label, &analytic, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{ActivationKind, DenseLayer, FlattenLayer, Layer};
    use crate::model::{Arch, Head};
    use crate::tensor::rand_uniform;

    fn linear_model(rng: &mut Rng) -> Model {
        let dense = DenseLayer::init(rng, 12, 1, ActivationKind::Identity).unwrap();
        Model::from_layers(
            Arch::Cnn,
            Head::Linear,
            vec![Layer::Flatten(FlattenLayer::new()), Layer::Dense(dense)],
        )
        .unwrap()
    }

    #[test]
    fn linear_model_is_exact() {
        let mut rng = Rng::new(1);
        let model = linear_model(&mut rng);
        let x = rand_uniform(&mut rng, &[3, 2, 2], -1.0, 1.0).unwrap();
        let opts = GradCheckOptions {
            loss: CheckLoss::Squared,
            tol: 1e-10,
            ..GradCheckOptions::default()
        };
        let report = grad_check(&model, &x, 1, &opts).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.checked(), 13);
    }

    #[test]
    fn sign_flip_is_caught() {
        let mut rng = Rng::new(2);
        let model = linear_model(&mut rng);
        let x = rand_uniform(&mut rng, &[3, 2, 2], -1.0, 1.0).unwrap();
        let opts = GradCheckOptions {
            loss: CheckLoss::Squared,
            ..GradCheckOptions::default()
        };
        let mut grads = analytic_gradients(&model, &x, 1, opts.loss).unwrap();
        grads[1][0] = grads[1][0].map(|g| -g);
        let report = compare_gradients(&model, &x, 1, &grads, &opts).unwrap();
        assert!(!report.passed());
        let first = &report.failures[0];
        assert_eq!((first.layer, first.layer_name, first.param), (1, "dense", 0));
        assert!((first.analytic + first.numeric).abs() < 1e-6);
        assert!(report.to_string().contains("layer 1 (dense)"));
    }

    fn tiny(arch: Arch, head: Head) -> Model {
        let cfg = crate::model::ArchConfig {
            arch,
            head,
            image_size: 16,
            conv_filters: [2, 3, 2],
            hidden_units: 4,
            ..Default::default()
        };
        Model::build(&cfg, &mut Rng::new(11)).unwrap()
    }

    #[test]
    fn full_stacks_pass() {
        let x = rand_uniform(&mut Rng::new(12), &[3, 16, 16], 0.0, 1.0).unwrap();
        for arch in [Arch::Cnn, Arch::Resnet] {
            for head in [Head::Sigmoid, Head::Softmax] {
                let model = tiny(arch, head);
                for label in [0, 1] {
                    let report = grad_check(&model, &x, label, &GradCheckOptions::default()).unwrap();
                    assert!(report.passed(), "{arch} {head} label {label}\n{report}");
                    assert_eq!(report.checked(), model.parameter_count());
                }
            }
        }
    }
}
