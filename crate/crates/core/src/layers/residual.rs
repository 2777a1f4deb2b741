//! Single residual block: `out = tanh(inner(x) + proj(x))`.
//!
//! `inner` is conv → batch norm → tanh → conv → batch norm with 3×3 "same"
//! convolutions, so spatial size is preserved. `proj` is a 1×1 convolution
//! when the channel count changes and the identity otherwise.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::activation::{ActivationKind, ActivationLayer};
use super::batchnorm::BatchNormLayer;
use super::conv::Conv2dLayer;
use super::{Mode, Param};

#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv_a: Conv2dLayer,
    bn_a: BatchNormLayer,
    mid: ActivationLayer,
    conv_b: Conv2dLayer,
    bn_b: BatchNormLayer,
    projection: Option<Conv2dLayer>,
    output: Option<Tensor>,
}

impl ResidualBlock {
    pub fn init(rng: &mut Rng, in_ch: usize, out_ch: usize) -> Result<Self> {
        use super::batchnorm::{DEFAULT_EPSILON, DEFAULT_MOMENTUM};
        Self::init_with_norm(rng, in_ch, out_ch, DEFAULT_EPSILON, DEFAULT_MOMENTUM)
    }

    pub fn init_with_norm(
        rng: &mut Rng,
        in_ch: usize,
        out_ch: usize,
        bn_epsilon: f64,
        bn_momentum: f64,
    ) -> Result<Self> {
        let conv_a = Conv2dLayer::init(rng, in_ch, out_ch, 3, 1)?;
        let conv_b = Conv2dLayer::init(rng, out_ch, out_ch, 3, 1)?;
        let projection = if in_ch == out_ch {
            None
        } else {
            Some(Conv2dLayer::init(rng, in_ch, out_ch, 1, 0)?)
        };
        ResidualBlock::from_parts(
            conv_a,
            BatchNormLayer::new(out_ch, bn_epsilon, bn_momentum)?,
            conv_b,
            BatchNormLayer::new(out_ch, bn_epsilon, bn_momentum)?,
            projection,
        )
    }

    pub fn from_parts(
        conv_a: Conv2dLayer,
        bn_a: BatchNormLayer,
        conv_b: Conv2dLayer,
        bn_b: BatchNormLayer,
        projection: Option<Conv2dLayer>,
    ) -> Result<Self> {
        let same = |c: &Conv2dLayer| c.kernel_size() == 2 * c.padding() + 1;
        if !same(&conv_a) || !same(&conv_b) {
            return Err(Error::shape(
                "residual convolutions must preserve spatial size (k = 2*padding + 1)",
            ));
        }
        let (in_ch, out_ch) = (conv_a.in_channels(), conv_b.out_channels());
        if conv_a.out_channels() != conv_b.in_channels()
            || bn_a.features() != conv_a.out_channels()
            || bn_b.features() != out_ch
        {
            return Err(Error::shape("residual inner branch channel counts disagree"));
        }
        match &projection {
            None if in_ch != out_ch => {
                return Err(Error::shape(format!(
                    "residual block maps {in_ch} to {out_ch} channels without a projection"
                )))
            }
            Some(p) if p.kernel_size() != 1 || p.in_channels() != in_ch || p.out_channels() != out_ch => {
                return Err(Error::shape(format!(
                    "projection must be a 1x1 convolution from {in_ch} to {out_ch} channels"
                )))
            }
            _ => {}
        }
        Ok(ResidualBlock {
            conv_a,
            bn_a,
            mid: ActivationLayer::new(ActivationKind::Tanh),
            conv_b,
            bn_b,
            projection,
            output: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv_a.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv_b.out_channels()
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    pub fn batch_norm_params(&self) -> (f64, f64) {
        (self.bn_a.epsilon(), self.bn_a.momentum())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let inner = self.conv_a.forward(x)?;
        let inner = self.bn_a.forward(&inner, mode)?;
        let inner = self.mid.forward(&inner);
        let inner = self.conv_b.forward(&inner)?;
        let mut sum = self.bn_b.forward(&inner, mode)?;
        match &mut self.projection {
            Some(p) => sum.add_assign(&p.forward(x)?)?,
            None => sum.add_assign(x)?,
        }
        let out = sum.map(f64::tanh);
        self.output = Some(out.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let out = self
            .output
            .take()
            .ok_or_else(|| Error::shape("residual backward called before forward"))?;
        let g_sum = grad_out.zip_map(&out, |g, y| g * (1.0 - y * y))?;
        let g = self.bn_b.backward(&g_sum)?;
        let g = self.conv_b.backward(&g)?;
        let g = self.mid.backward(&g)?;
        let g = self.bn_a.backward(&g)?;
        let mut gx = self.conv_a.backward(&g)?;
        match &mut self.projection {
            Some(p) => gx.add_assign(&p.backward(&g_sum)?)?,
            None => gx.add_assign(&g_sum)?,
        }
        Ok(gx)
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        let mut out = self.conv_a.params();
        out.extend(self.bn_a.params());
        out.extend(self.conv_b.params());
        out.extend(self.bn_b.params());
        if let Some(p) = &mut self.projection {
            out.extend(p.params());
        }
        out
    }

    pub fn state(&self) -> Vec<&Tensor> {
        let mut out = self.conv_a.state();
        out.extend(self.bn_a.state());
        out.extend(self.conv_b.state());
        out.extend(self.bn_b.state());
        if let Some(p) = &self.projection {
            out.extend(p.state());
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.conv_a.state_mut();
        out.extend(self.bn_a.state_mut());
        out.extend(self.conv_b.state_mut());
        out.extend(self.bn_b.state_mut());
        if let Some(p) = &mut self.projection {
            out.extend(p.state_mut());
        }
        out
    }
}
