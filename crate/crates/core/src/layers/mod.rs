//! Network building blocks with hand-written backward passes.
//!
//! Layers consume batched tensors (`[N, C, H, W]` for image stages,
//! `[N, F]` after flattening), cache what their backward pass needs, and
//! accumulate parameter gradients until [`Layer::zero_grad`].

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;
pub mod residual;

#[cfg(test)]
pub(crate) mod testing;

pub use activation::{
    activation_apply, activation_grad, sigmoid, softmax, ActivationKind, ActivationLayer,
    SoftmaxLayer,
};
pub use batchnorm::BatchNormLayer;
pub use conv::{conv2d_backward, conv2d_forward, Conv2dLayer, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use dropout::{dropout_forward, DropoutLayer};
pub use pool::{maxpool_backward, maxpool_forward, MaxPoolLayer};
pub use residual::ResidualBlock;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor paired with its accumulated gradient.
pub struct Param<'a> {
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
}

pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Row-major linearization of `[c, h, w]` into `[c·h·w]`.
pub fn flatten(x: &Tensor) -> Tensor {
    Tensor::vector(x.data().to_vec())
}

pub fn unflatten(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    x.reshape(shape)
}

#[derive(Debug, Clone, Default)]
pub struct FlattenLayer {
    input_shape: Option<Vec<usize>>,
}

impl FlattenLayer {
    pub fn new() -> Self {
        Self::default()
    }

    /// `[N, ...]` to `[N, features]`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        self.input_shape = Some(x.shape().to_vec());
        x.reshape(&[n, x.len() / n])
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::shape("flatten backward called before forward"))?;
        grad_out.reshape(&shape)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2dLayer),
    MaxPool(MaxPoolLayer),
    Activation(ActivationLayer),
    BatchNorm(BatchNormLayer),
    Dropout(DropoutLayer),
    Flatten(FlattenLayer),
    Dense(DenseLayer),
    Residual(ResidualBlock),
    Softmax(SoftmaxLayer),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::Activation(_) => "activation",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Residual(_) => "residual",
            Layer::Softmax(_) => "softmax",
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Activation(l) => Ok(l.forward(x)),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dropout(l) => Ok(l.forward(x, mode, rng)),
            Layer::Flatten(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Residual(l) => l.forward(x, mode),
            Layer::Softmax(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(grad_out),
            Layer::MaxPool(l) => l.backward(grad_out),
            Layer::Activation(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Residual(l) => l.backward(grad_out),
            Layer::Softmax(l) => l.backward(grad_out),
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&mut self) -> Vec<Param<'_>> {
        match self {
            Layer::Conv2d(l) => l.params(),
            Layer::BatchNorm(l) => l.params(),
            Layer::Dense(l) => l.params(),
            Layer::Residual(l) => l.params(),
            _ => Vec::new(),
        }
    }

    /// Everything needed to restore the layer: parameters plus running statistics.
    pub fn state(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(l) => l.state(),
            Layer::BatchNorm(l) => l.state(),
            Layer::Dense(l) => l.state(),
            Layer::Residual(l) => l.state(),
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(l) => l.state_mut(),
            Layer::BatchNorm(l) => l.state_mut(),
            Layer::Dense(l) => l.state_mut(),
            Layer::Residual(l) => l.state_mut(),
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params() {
            p.grad.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rand_uniform;

    #[test]
    fn flatten_cases() {
        assert_eq!(flatten(&Tensor::full(&[1, 1, 1], 2.0)).shape(), &[1]);
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten(&x).data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = rand_uniform(&mut Rng::new(1), &[3, 4, 5], -1.0, 1.0).unwrap();
        assert_eq!(unflatten(&flatten(&r), &[3, 4, 5]).unwrap(), r);
    }

    #[test]
    fn flatten_layer_round_trip() {
        let mut layer = FlattenLayer::new();
        let x = rand_uniform(&mut Rng::new(2), &[2, 3, 2, 2], -1.0, 1.0).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 12]);
        assert_eq!(layer.backward(&y).unwrap(), x);
    }
}
