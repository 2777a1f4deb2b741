//! Inverted dropout: survivors are scaled by `1/(1-rate)` at train time so
//! evaluation is the exact identity.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Mode;

#[derive(Debug, Clone)]
pub struct DropoutLayer {
    rate: f64,
    mask: Option<Tensor>,
}

impl DropoutLayer {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(DropoutLayer { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Tensor {
        let (out, mask) = dropout_forward(self, x, mode, rng);
        self.mask = mask;
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self.mask.take() {
            Some(mask) => grad_out.zip_map(&mask, |g, m| g * m),
            None => Ok(grad_out.clone()),
        }
    }
}

/// Returns the output and the multiplicative mask (`None` means all ones).
///
/// Eval mode and `rate == 0` pass `x` through untouched and draw nothing
/// from `rng`.
pub fn dropout_forward(layer: &DropoutLayer, x: &Tensor, mode: Mode, rng: &mut Rng) -> (Tensor, Option<Tensor>) {
    if mode == Mode::Eval || layer.rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 / (1.0 - layer.rate);
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.next_f64() < layer.rate {
            0.0
        } else {
            keep
        }
    });
    let out = x.zip_map(&mask, |v, m| v * m).expect("mask shares input shape");
    (out, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rand_uniform;

    #[test]
    fn zero_rate_is_identity() {
        let x = rand_uniform(&mut Rng::new(1), &[4, 5], -1.0, 1.0).unwrap();
        let layer = DropoutLayer::new(0.0).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            assert_eq!(dropout_forward(&layer, &x, mode, &mut Rng::new(2)).0, x);
        }
    }

    #[test]
    fn eval_is_bit_identical() {
        let x = rand_uniform(&mut Rng::new(3), &[100], -1e3, 1e3).unwrap();
        let layer = DropoutLayer::new(0.4).unwrap();
        let (out, mask) = dropout_forward(&layer, &x, Mode::Eval, &mut Rng::new(4));
        assert!(mask.is_none());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out), bits(&x));
    }

    #[test]
    fn train_preserves_expectation() {
        let x = Tensor::full(&[100_000], 1.0);
        let layer = DropoutLayer::new(0.4).unwrap();
        let (out, _) = dropout_forward(&layer, &x, Mode::Train, &mut Rng::new(5));
        let mean = out.sum() / out.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        let dropped = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.4).abs() < 0.01);
    }

    #[test]
    fn backward_uses_mask() {
        let mut layer = DropoutLayer::new(0.5).unwrap();
        let x = Tensor::full(&[64], 1.0);
        let out = layer.forward(&x, Mode::Train, &mut Rng::new(6));
        let g = layer.backward(&Tensor::full(&[64], 1.0)).unwrap();
        assert_eq!(g, out);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(DropoutLayer::new(1.0).is_err());
        assert!(DropoutLayer::new(-0.1).is_err());
    }
}
