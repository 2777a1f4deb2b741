//! 2×2, stride-2 max pooling with argmax routing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const WINDOW: usize = 2;

/// Pools the two trailing axes of a tensor of rank ≥ 3.
///
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element. Ties go to the first element in row-major order.
pub fn maxpool_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let rank = x.shape().len();
    if rank < 3 {
        return Err(Error::shape(format!(
            "max pool needs [.., H, W], got {:?}",
            x.shape()
        )));
    }
    let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
    if h % WINDOW != 0 || w % WINDOW != 0 {
        return Err(Error::shape(format!(
            "max pool needs even spatial dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / WINDOW, w / WINDOW);
    let planes = x.len() / (h * w);
    let mut shape = x.shape().to_vec();
    shape[rank - 2] = oh;
    shape[rank - 1] = ow;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut indices = Vec::with_capacity(planes * oh * ow);
    let data = x.data();
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + (i * WINDOW) * w + j * WINDOW;
                for a in 0..WINDOW {
                    for b in 0..WINDOW {
                        let idx = base + (i * WINDOW + a) * w + j * WINDOW + b;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                indices.push(best);
            }
        }
    }
    Ok((Tensor::new(shape, out)?, indices))
}

/// Routes each output gradient to its recorded winner.
pub fn maxpool_backward(indices: &[usize], grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != indices.len() {
        return Err(Error::shape(format!(
            "max pool backward: {} indices for gradient of shape {:?}",
            indices.len(),
            grad_out.shape()
        )));
    }
    let mut grad = Tensor::new(input_shape.to_vec(), vec![0.0; input_shape.iter().product()])?;
    let gx = grad.data_mut();
    for (&idx, &g) in indices.iter().zip(grad_out.data()) {
        let slot = gx
            .get_mut(idx)
            .ok_or_else(|| Error::shape("max pool index outside input"))?;
        *slot += g;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPoolLayer {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPoolLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_size(h: usize, w: usize) -> Result<(usize, usize)> {
        if h % WINDOW != 0 || w % WINDOW != 0 {
            return Err(Error::shape(format!(
                "max pool needs even spatial dimensions, got {h}x{w}"
            )));
        }
        Ok((h / WINDOW, w / WINDOW))
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, indices) = maxpool_forward(x)?;
        self.cache = Some((indices, x.shape().to_vec()));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (indices, shape) = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("max pool backward called before forward"))?;
        maxpool_backward(&indices, grad_out, &shape)
    }
}
