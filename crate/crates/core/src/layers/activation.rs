//! Elementwise nonlinearities and the row-wise softmax.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl ActivationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "none",
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`. ReLU uses 0 at the kink.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "tanh" => Ok(ActivationKind::Tanh),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "none" | "identity" => Ok(ActivationKind::Identity),
            other => Err(Error::param(format!("unknown activation {other:?}"))),
        }
    }
}

/// Logistic function, evaluated without overflowing `exp` for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation_apply(x: &Tensor, kind: ActivationKind) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activation_grad(x: &Tensor, kind: ActivationKind, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |v, g| g * kind.derivative(v))
}

/// Softmax over a vector, shifted by its maximum.
pub fn softmax(z: &Tensor) -> Tensor {
    let mut out = z.clone();
    softmax_in_place(out.data_mut());
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone)]
pub struct ActivationLayer {
    kind: ActivationKind,
    cache: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(kind: ActivationKind) -> Self {
        ActivationLayer { kind, cache: None }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let out = activation_apply(x, self.kind);
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("activation backward called before forward"))?;
        activation_grad(&x, self.kind, grad_out)
    }
}

/// Softmax over the last axis of `[N, L]`.
#[derive(Debug, Clone, Default)]
pub struct SoftmaxLayer {
    cache: Option<Tensor>,
}

impl SoftmaxLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, _) = x.dims2()?;
        let mut out = x.clone();
        for r in 0..n {
            softmax_in_place(out.outer_mut(r));
        }
        self.cache = Some(out.clone());
        Ok(out)
    }

    /// `dx = p ⊙ (g − ⟨g, p⟩)` per row.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let p = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("softmax backward called before forward"))?;
        grad_out.expect_shape(p.shape())?;
        let (n, _) = p.dims2()?;
        let mut out = Tensor::zeros(p.shape());
        for r in 0..n {
            let (pr, gr) = (p.outer(r), grad_out.outer(r));
            let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((o, &pv), &gv) in out.outer_mut(r).iter_mut().zip(pr).zip(gr) {
                *o = pv * (gv - dot);
            }
        }
        Ok(out)
    }
}
