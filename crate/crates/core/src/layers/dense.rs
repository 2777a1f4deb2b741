//! Fully connected layer `y = φ(W·x + b)`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul, rand_uniform, Tensor};

use super::activation::ActivationKind;
use super::{glorot_limit, Param};

#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: ActivationKind,
    grad_weights: Tensor,
    grad_bias: Tensor,
    cache: Option<DenseCache>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Tensor,
    pre: Tensor,
    vector_input: bool,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn from_parts(weights: Tensor, bias: Tensor, activation: ActivationKind) -> Result<Self> {
        let (out, _) = weights.dims2()?;
        bias.expect_shape(&[out])?;
        Ok(DenseLayer {
            grad_weights: Tensor::zeros(weights.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    pub fn init(rng: &mut Rng, inputs: usize, outputs: usize, activation: ActivationKind) -> Result<Self> {
        let limit = glorot_limit(inputs, outputs);
        let weights = rand_uniform(rng, &[outputs, inputs], -limit, limit)?;
        DenseLayer::from_parts(weights, Tensor::zeros(&[outputs]), activation)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Views `[in]` or `[N, in]` as a matrix.
    fn as_batch(&self, x: &Tensor) -> Result<(Tensor, bool)> {
        let (batch, vector) = match x.shape()[..] {
            [n] => (x.reshape(&[1, n])?, true),
            [_, _] => (x.clone(), false),
            _ => {
                return Err(Error::shape(format!(
                    "dense input must be [in] or [N, in], got {:?}",
                    x.shape()
                )))
            }
        };
        if batch.shape()[1] != self.inputs() {
            return Err(Error::shape(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                batch.shape()[1]
            )));
        }
        Ok((batch, vector))
    }

    fn pre_activation(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = matmul(x, &self.weights.transpose()?)?;
        let out = self.outputs();
        for row in z.data_mut().chunks_exact_mut(out) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(z)
    }

    fn grads_from(&self, input: &Tensor, pre: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let gz = grad_out.zip_map(pre, |g, z| g * self.activation.derivative(z))?;
        let weights = matmul(&gz.transpose()?, input)?;
        let mut bias = Tensor::zeros(&[self.outputs()]);
        for row in gz.data().chunks_exact(self.outputs()) {
            for (b, g) in bias.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let input = matmul(&gz, &self.weights)?;
        Ok(DenseGrads {
            input,
            weights,
            bias,
        })
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (input, vector_input) = self.as_batch(x)?;
        let pre = self.pre_activation(&input)?;
        let mut out = pre.map(|z| self.activation.apply(z));
        if vector_input {
            out = out.into_reshaped(&[self.outputs()])?;
        }
        self.cache = Some(DenseCache {
            input,
            pre,
            vector_input,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("dense backward called before forward"))?;
        let g = grad_out.reshape(cache.pre.shape())?;
        let grads = self.grads_from(&cache.input, &cache.pre, &g)?;
        self.grad_weights.add_assign(&grads.weights)?;
        self.grad_bias.add_assign(&grads.bias)?;
        if cache.vector_input {
            grads.input.into_reshaped(&[self.inputs()])
        } else {
            Ok(grads.input)
        }
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        vec![
            Param {
                value: &mut self.weights,
                grad: &mut self.grad_weights,
            },
            Param {
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }

    pub fn state(&self) -> Vec<&Tensor> {
        vec![&self.weights, &self.bias]
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// `φ(W·x + b)` for `[in]` or `[N, in]` input.
pub fn dense_forward(layer: &DenseLayer, x: &Tensor) -> Result<Tensor> {
    let (input, vector) = layer.as_batch(x)?;
    let out = layer.pre_activation(&input)?.map(|z| layer.activation.apply(z));
    if vector {
        out.into_reshaped(&[layer.outputs()])
    } else {
        Ok(out)
    }
}

pub fn dense_backward(layer: &DenseLayer, x: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (input, vector) = layer.as_batch(x)?;
    let pre = layer.pre_activation(&input)?;
    let g = grad_out.reshape(pre.shape())?;
    let mut grads = layer.grads_from(&input, &pre, &g)?;
    if vector {
        grads.input = grads.input.into_reshaped(&[layer.inputs()])?;
    }
    Ok(grads)
}
