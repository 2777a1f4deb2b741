//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[(Tensor, Tensor)] {
        &self.moments
    }

    /// One update of every parameter from its gradient.
    ///
    /// Moments are allocated on the first call; later calls must pass the
    /// same parameter list in the same order.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "adam got {} parameters and {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::shape(format!(
                "adam state tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for ((p, g), (m, _)) in params.iter().zip(grads).zip(&self.moments) {
            p.expect_shape(m.shape())?;
            g.expect_shape(m.shape())?;
        }

        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step_params(&mut self, params: Vec<Param<'_>>) -> Result<()> {
        let (mut values, grads): (Vec<&mut Tensor>, Vec<&Tensor>) = params
            .into_iter()
            .map(|p| (p.value, &*p.grad))
            .unzip();
        self.step(&mut values, &grads)
    }
}
