//! Batch normalization over axis 1 of `[N, F]` or `[N, C, H, W]` inputs.
//!
//! For image tensors each channel is one feature with statistics pooled over
//! the batch and both spatial axes. Running statistics use the biased batch
//! variance: `running = (1 - momentum)·running + momentum·batch`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Mode, Param};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    epsilon: f64,
    momentum: f64,
    grad_gamma: Tensor,
    grad_beta: Tensor,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// `(features, inner)` where `inner` is the spatial extent per feature.
fn layout(x: &Tensor, features: usize) -> Result<(usize, usize)> {
    let shape = x.shape();
    if shape.len() < 2 || shape[1] != features {
        return Err(Error::shape(format!(
            "batch norm over {features} features got input {shape:?}"
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

impl BatchNormLayer {
    pub fn new(features: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::param(format!("batch norm epsilon must be > 0, got {epsilon}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::param(format!(
                "batch norm momentum must be in (0, 1), got {momentum}"
            )));
        }
        Ok(BatchNormLayer {
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            epsilon,
            momentum,
            grad_gamma: Tensor::zeros(&[features]),
            grad_beta: Tensor::zeros(&[features]),
            cache: None,
        })
    }

    pub fn with_defaults(features: usize) -> Self {
        Self::new(features, DEFAULT_EPSILON, DEFAULT_MOMENTUM).expect("default constants are valid")
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn gamma(&self) -> &Tensor {
        &self.gamma
    }

    pub fn beta(&self) -> &Tensor {
        &self.beta
    }

    pub fn running_mean(&self) -> &Tensor {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor {
        &self.running_var
    }

    pub fn set_affine(&mut self, gamma: Tensor, beta: Tensor) -> Result<()> {
        gamma.expect_shape(self.gamma.shape())?;
        beta.expect_shape(self.beta.shape())?;
        self.gamma = gamma;
        self.beta = beta;
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let features = self.features();
        let (n, inner) = layout(x, features)?;
        let count = (n * inner) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::param(format!(
                        "batch norm in train mode needs batch size >= 2, got {n}"
                    )));
                }
                let mut mean = vec![0.0; features];
                let mut var = vec![0.0; features];
                for s in 0..n {
                    for (f, m) in mean.iter_mut().enumerate() {
                        let start = (s * features + f) * inner;
                        *m += x.data()[start..start + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for s in 0..n {
                    for f in 0..features {
                        let start = (s * features + f) * inner;
                        var[f] += x.data()[start..start + inner]
                            .iter()
                            .map(|v| (v - mean[f]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let m = self.momentum;
                for f in 0..features {
                    let rm = &mut self.running_mean.data_mut()[f];
                    *rm = (1.0 - m) * *rm + m * mean[f];
                    let rv = &mut self.running_var.data_mut()[f];
                    *rv = (1.0 - m) * *rv + m * var[f];
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut normalized = x.clone();
        let mut out = x.clone();
        for s in 0..n {
            for f in 0..features {
                let start = (s * features + f) * inner;
                let (g, b) = (self.gamma.data()[f], self.beta.data()[f]);
                for i in start..start + inner {
                    let xh = (x.data()[i] - mean[f]) * inv_std[f];
                    normalized.data_mut()[i] = xh;
                    out.data_mut()[i] = g * xh + b;
                }
            }
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std,
            mode,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("batch norm backward called before forward"))?;
        grad_out.expect_shape(cache.normalized.shape())?;
        let features = self.features();
        let (n, inner) = layout(grad_out, features)?;
        let count = (n * inner) as f64;
        let (g, xh) = (grad_out.data(), cache.normalized.data());

        let mut sum_g = vec![0.0; features];
        let mut sum_gx = vec![0.0; features];
        for s in 0..n {
            for f in 0..features {
                let start = (s * features + f) * inner;
                for i in start..start + inner {
                    sum_g[f] += g[i];
                    sum_gx[f] += g[i] * xh[i];
                }
            }
        }
        for f in 0..features {
            self.grad_gamma.data_mut()[f] += sum_gx[f];
            self.grad_beta.data_mut()[f] += sum_g[f];
        }

        let mut dx = Tensor::zeros(grad_out.shape());
        for s in 0..n {
            for f in 0..features {
                let scale = self.gamma.data()[f] * cache.inv_std[f];
                let start = (s * features + f) * inner;
                for i in start..start + inner {
                    dx.data_mut()[i] = match cache.mode {
                        Mode::Train => {
                            scale * (g[i] - sum_g[f] / count - xh[i] * sum_gx[f] / count)
                        }
                        Mode::Eval => scale * g[i],
                    };
                }
            }
        }
        Ok(dx)
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        vec![
            Param {
                value: &mut self.gamma,
                grad: &mut self.grad_gamma,
            },
            Param {
                value: &mut self.beta,
                grad: &mut self.grad_beta,
            },
        ]
    }

    pub fn state(&self) -> Vec<&Tensor> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
