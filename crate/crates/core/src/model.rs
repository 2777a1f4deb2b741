//! Layer stacks for the two architectures.
//!
//! cnn:    conv3 → relu → pool → conv3 → relu → conv4 → relu → pool →
//!         flatten → dense(relu) → dropout → head
//!
//! resnet: conv3 → bn → tanh → pool → residual → conv4 → tanh → pool →
//!         flatten → dense(tanh) → dropout → head
//!
//! Both need an input side divisible by 4 so every pooled map is even.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    ActivationKind, ActivationLayer, BatchNormLayer, Conv2dLayer, DenseLayer, DropoutLayer,
    FlattenLayer, Layer, MaxPoolLayer, Mode, Param, ResidualBlock, SoftmaxLayer,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Cnn,
    Resnet,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Resnet => "resnet",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Arch::Cnn),
            "resnet" => Ok(Arch::Resnet),
            other => Err(Error::param(format!(
                "unknown architecture {other:?} (expected cnn or resnet)"
            ))),
        }
    }
}

/// Output head. `Sigmoid` is the canonical binary head; `Softmax` uses two
/// logits and reports the class-1 probability; `Linear` emits the raw score
/// and exists for gradient diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Sigmoid,
    Softmax,
    Linear,
}

impl Head {
    pub fn as_str(&self) -> &'static str {
        match self {
            Head::Sigmoid => "sigmoid",
            Head::Softmax => "softmax",
            Head::Linear => "linear",
        }
    }

    fn outputs(&self) -> usize {
        match self {
            Head::Softmax => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Head::Sigmoid),
            "softmax" => Ok(Head::Softmax),
            "linear" => Ok(Head::Linear),
            other => Err(Error::param(format!(
                "unknown head {other:?} (expected sigmoid, softmax or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub arch: Arch,
    pub head: Head,
    pub image_size: usize,
    pub conv_filters: [usize; 3],
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            arch: Arch::Cnn,
            head: Head::Sigmoid,
            image_size: 64,
            conv_filters: [16, 32, 64],
            hidden_units: 64,
            dropout_rate: 0.4,
            bn_epsilon: crate::layers::batchnorm::DEFAULT_EPSILON,
            bn_momentum: crate::layers::batchnorm::DEFAULT_MOMENTUM,
        }
    }
}

/// Tracks `[C, H, W]` while layers are appended.
struct Builder {
    layers: Vec<Layer>,
    shape: (usize, usize, usize),
}

impl Builder {
    fn conv(&mut self, rng: &mut Rng, out: usize, k: usize) -> Result<()> {
        let (c, h, w) = self.shape;
        let conv = Conv2dLayer::init(rng, c, out, k, 0)?;
        let (oh, ow) = conv.output_size(h, w)?;
        self.layers.push(Layer::Conv2d(conv));
        self.shape = (out, oh, ow);
        Ok(())
    }

    fn act(&mut self, kind: ActivationKind) {
        self.layers.push(Layer::Activation(ActivationLayer::new(kind)));
    }

    fn pool(&mut self) -> Result<()> {
        let (c, h, w) = self.shape;
        let (oh, ow) = MaxPoolLayer::output_size(h, w).map_err(|_| {
            Error::param(format!(
                "pooling would see an odd {h}x{w} map; image size must be a multiple of 4"
            ))
        })?;
        self.layers.push(Layer::MaxPool(MaxPoolLayer::new()));
        self.shape = (c, oh, ow);
        Ok(())
    }

    fn features(&self) -> usize {
        let (c, h, w) = self.shape;
        c * h * w
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    arch: Arch,
    head: Head,
    layers: Vec<Layer>,
}

impl Model {
    pub fn build(cfg: &ArchConfig, rng: &mut Rng) -> Result<Model> {
        if cfg.image_size == 0 || cfg.conv_filters.contains(&0) || cfg.hidden_units == 0 {
            return Err(Error::param("architecture dimensions must be positive"));
        }
        let [f0, f1, f2] = cfg.conv_filters;
        let mut b = Builder {
            layers: Vec::new(),
            shape: (3, cfg.image_size, cfg.image_size),
        };
        match cfg.arch {
            Arch::Cnn => {
                b.conv(rng, f0, 3)?;
                b.act(ActivationKind::Relu);
                b.pool()?;
                b.conv(rng, f1, 3)?;
                b.act(ActivationKind::Relu);
                b.conv(rng, f2, 4)?;
                b.act(ActivationKind::Relu);
                b.pool()?;
            }
            Arch::Resnet => {
                b.conv(rng, f0, 3)?;
                b.layers.push(Layer::BatchNorm(BatchNormLayer::new(
                    f0,
                    cfg.bn_epsilon,
                    cfg.bn_momentum,
                )?));
                b.act(ActivationKind::Tanh);
                b.pool()?;
                let block =
                    ResidualBlock::init_with_norm(rng, f0, f1, cfg.bn_epsilon, cfg.bn_momentum)?;
                b.layers.push(Layer::Residual(block));
                b.shape.0 = f1;
                b.conv(rng, f2, 4)?;
                b.act(ActivationKind::Tanh);
                b.pool()?;
            }
        }
        b.layers.push(Layer::Flatten(FlattenLayer::new()));
        let hidden_act = match cfg.arch {
            Arch::Cnn => ActivationKind::Relu,
            Arch::Resnet => ActivationKind::Tanh,
        };
        b.layers.push(Layer::Dense(DenseLayer::init(
            rng,
            b.features(),
            cfg.hidden_units,
            hidden_act,
        )?));
        b.layers.push(Layer::Dropout(DropoutLayer::new(cfg.dropout_rate)?));
        let head_act = match cfg.head {
            Head::Sigmoid => ActivationKind::Sigmoid,
            Head::Softmax | Head::Linear => ActivationKind::Identity,
        };
        b.layers.push(Layer::Dense(DenseLayer::init(
            rng,
            cfg.hidden_units,
            cfg.head.outputs(),
            head_act,
        )?));
        if cfg.head == Head::Softmax {
            b.layers.push(Layer::Softmax(SoftmaxLayer::new()));
        }
        Model::from_layers(cfg.arch, cfg.head, b.layers)
    }

    /// Wraps an arbitrary stack. The last layer must emit one value per
    /// sample (two for the softmax head).
    pub fn from_layers(arch: Arch, head: Head, mut layers: Vec<Layer>) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::param("a model needs at least one layer"));
        }
        if let Some(Layer::Conv2d(first)) = layers.first_mut() {
            first.set_input_grad(false);
        }
        Ok(Model { arch, head, layers })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Runs `layers[start..]` on `x` and returns the raw head output.
    pub fn forward_from(&mut self, start: usize, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers[start..] {
            h = layer.forward(&h, mode, rng)?;
        }
        Ok(h)
    }

    /// Class-1 probability (raw score for the linear head) per sample.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let out = self.forward_from(0, x, mode, rng)?;
        self.scores(&out)
    }

    pub(crate) fn scores(&self, out: &Tensor) -> Result<Tensor> {
        let (n, width) = out.dims2()?;
        if width != self.head.outputs() {
            return Err(Error::shape(format!(
                "{} head expects {} outputs per sample, got {width}",
                self.head,
                self.head.outputs()
            )));
        }
        Ok(Tensor::vector((0..n).map(|i| out.outer(i)[width - 1]).collect()))
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        // eval mode never draws from the generator
        self.forward(x, Mode::Eval, &mut Rng::new(0))
    }

    /// Backpropagates `d loss / d score` (shape `[N]`) through the stack.
    pub fn backward(&mut self, grad_scores: &Tensor) -> Result<()> {
        let n = grad_scores.len();
        let width = self.head.outputs();
        let mut g = Tensor::zeros(&[n, width]);
        for (i, &v) in grad_scores.data().iter().enumerate() {
            g.outer_mut(i)[width - 1] = v;
        }
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(())
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        self.layers.iter_mut().flat_map(|l| l.params()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn parameter_count(&self) -> usize {
        let mut probe = self.clone();
        probe.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn state(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.state()).collect()
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.state_mut()).collect()
    }
}
