//! Stride-1 2-D convolution (cross-correlation) with optional zero padding.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, rand_uniform, Tensor};

use super::{glorot_limit, Param};

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    kernels: Tensor,
    biases: Tensor,
    padding: usize,
    grad_kernels: Tensor,
    grad_biases: Tensor,
    input_grad: bool,
    cache: Option<Tensor>,
}

/// Gradients of `Σ out·grad_out` for one sample.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub biases: Tensor,
}

impl Conv2dLayer {
    pub fn from_parts(kernels: Tensor, biases: Tensor, padding: usize) -> Result<Self> {
        let [out_ch, _, k, k2] = kernels.shape()[..] else {
            return Err(Error::shape(format!(
                "kernels must be [out, in, k, k], got {:?}",
                kernels.shape()
            )));
        };
        if k != k2 {
            return Err(Error::shape(format!("kernels must be square, got {k}x{k2}")));
        }
        biases.expect_shape(&[out_ch])?;
        Ok(Conv2dLayer {
            grad_kernels: Tensor::zeros(kernels.shape()),
            grad_biases: Tensor::zeros(biases.shape()),
            kernels,
            biases,
            padding,
            input_grad: true,
            cache: None,
        })
    }

    /// Uniform `±√(6/(fan_in+fan_out))` kernels, zero biases.
    pub fn init(
        rng: &mut Rng,
        in_ch: usize,
        out_ch: usize,
        kernel_size: usize,
        padding: usize,
    ) -> Result<Self> {
        let area = kernel_size * kernel_size;
        let limit = glorot_limit(in_ch * area, out_ch * area);
        let kernels = rand_uniform(
            rng,
            &[out_ch, in_ch, kernel_size, kernel_size],
            -limit,
            limit,
        )?;
        Conv2dLayer::from_parts(kernels, Tensor::zeros(&[out_ch]), padding)
    }

    pub fn kernels(&self) -> &Tensor {
        &self.kernels
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    /// Disables the input gradient (first layer of a network).
    pub fn set_input_grad(&mut self, enabled: bool) {
        self.input_grad = enabled;
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel_size();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < k || wp < k {
            return Err(Error::shape(format!(
                "input {h}x{w} (padding {}) is smaller than kernel {k}x{k}",
                self.padding
            )));
        }
        Ok((hp - k + 1, wp - k + 1))
    }

    fn check_input(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let [c, h, w] = shape[..] else {
            return Err(Error::shape(format!(
                "conv input must be [channels, h, w], got {shape:?}"
            )));
        };
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        self.output_size(h, w)?;
        Ok((c, h, w))
    }

    fn pad(&self, x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
        let p = self.padding;
        if p == 0 {
            return x.to_vec();
        }
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let mut out = vec![0.0; c * hp * wp];
        for ch in 0..c {
            for i in 0..h {
                let src = &x[(ch * h + i) * w..(ch * h + i + 1) * w];
                let dst = (ch * hp + i + p) * wp + p;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        out
    }

    /// Unfolds a padded `[C, hp, wp]` sample into `[C·k·k, oh·ow]` columns.
    fn im2col(&self, xp: &[f64], hp: usize, wp: usize, cols: &mut Vec<f64>) {
        let (ic, k) = (self.in_channels(), self.kernel_size());
        let (oh, ow) = (hp - k + 1, wp - k + 1);
        cols.clear();
        cols.reserve(ic * k * k * oh * ow);
        for c in 0..ic {
            let xc = &xp[c * hp * wp..(c + 1) * hp * wp];
            for a in 0..k {
                for b in 0..k {
                    for i in 0..oh {
                        let start = (i + a) * wp + b;
                        cols.extend_from_slice(&xc[start..start + ow]);
                    }
                }
            }
        }
    }

    fn forward_padded(&self, xp: &[f64], hp: usize, wp: usize, out: &mut [f64], cols: &mut Vec<f64>) {
        let k = self.kernel_size();
        let plane = (hp - k + 1) * (wp - k + 1);
        self.im2col(xp, hp, wp, cols);
        let rows = cols.len() / plane;
        for (o, out_o) in out.chunks_exact_mut(plane).enumerate() {
            out_o.fill(self.biases.data()[o]);
        }
        let oc = self.out_channels();
        gemm(oc, rows, plane, self.kernels.data(), (rows, 1), cols, (plane, 1), 1.0, out);
    }

    /// Accumulates parameter gradients and, when `gxp` is given, the
    /// gradient w.r.t. the padded input.
    #[allow(clippy::too_many_arguments)]
    fn backward_padded(
        &self,
        xp: &[f64],
        hp: usize,
        wp: usize,
        g: &[f64],
        gxp: Option<&mut [f64]>,
        gk: &mut [f64],
        gb: &mut [f64],
        cols: &mut Vec<f64>,
        gcols: &mut Vec<f64>,
    ) {
        let (ic, oc, k) = (self.in_channels(), self.out_channels(), self.kernel_size());
        let (oh, ow) = (hp - k + 1, wp - k + 1);
        let plane = oh * ow;
        self.im2col(xp, hp, wp, cols);
        let rows = cols.len() / plane;
        for (o, g_o) in g.chunks_exact(plane).enumerate() {
            gb[o] += g_o.iter().sum::<f64>();
        }
        // gk[o][r] += Σ_p g[o][p]·cols[r][p]
        gemm(oc, plane, rows, g, (plane, 1), cols, (1, plane), 1.0, gk);
        let Some(gx) = gxp else { return };
        gcols.clear();
        gcols.resize(rows * plane, 0.0);
        // gcols[r][p] = Σ_o kernel[o][r]·g[o][p]
        gemm(rows, oc, plane, self.kernels.data(), (1, rows), g, (plane, 1), 0.0, gcols);
        let mut r = 0;
        for c in 0..ic {
            let gxc = &mut gx[c * hp * wp..(c + 1) * hp * wp];
            for a in 0..k {
                for b in 0..k {
                    let gcol = &gcols[r * plane..(r + 1) * plane];
                    for i in 0..oh {
                        let start = (i + a) * wp + b;
                        for (d, v) in gxc[start..start + ow].iter_mut().zip(&gcol[i * ow..(i + 1) * ow]) {
                            *d += v;
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    fn crop(&self, gxp: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
        let p = self.padding;
        if p == 0 {
            return gxp.to_vec();
        }
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h {
                let src = (ch * hp + i + p) * wp + p;
                out[(ch * h + i) * w..(ch * h + i + 1) * w].copy_from_slice(&gxp[src..src + w]);
            }
        }
        out
    }

    /// Batched forward over `[N, C, H, W]`; caches the padded input.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = x.shape()[..] else {
            return Err(Error::shape(format!(
                "conv layer expects [N, C, H, W], got {:?}",
                x.shape()
            )));
        };
        self.check_input(&[c, h, w])?;
        let (oh, ow) = self.output_size(h, w)?;
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        let oc = self.out_channels();
        let mut out = Tensor::zeros(&[n, oc, oh, ow]);
        let mut padded = Vec::with_capacity(n * c * hp * wp);
        let mut cols = Vec::new();
        for s in 0..n {
            let xp = self.pad(x.outer(s), c, h, w);
            self.forward_padded(&xp, hp, wp, out.outer_mut(s), &mut cols);
            padded.extend_from_slice(&xp);
        }
        self.cache = Some(Tensor::new(vec![n, c, hp, wp], padded)?);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let xp = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("conv backward called before forward"))?;
        let [n, c, hp, wp] = xp.shape()[..] else {
            unreachable!()
        };
        let k = self.kernel_size();
        let (oh, ow) = (hp - k + 1, wp - k + 1);
        grad_out.expect_shape(&[n, self.out_channels(), oh, ow])?;
        let (h, w) = (hp - 2 * self.padding, wp - 2 * self.padding);
        let mut gk = std::mem::replace(&mut self.grad_kernels, Tensor::zeros(&[1]));
        let mut gb = std::mem::replace(&mut self.grad_biases, Tensor::zeros(&[1]));
        let mut grad_in = Tensor::zeros(&[n, c, h, w]);
        let mut gxp = vec![0.0; c * hp * wp];
        let (mut cols, mut gcols) = (Vec::new(), Vec::new());
        for s in 0..n {
            let gx = if self.input_grad {
                gxp.fill(0.0);
                Some(&mut gxp[..])
            } else {
                None
            };
            self.backward_padded(
                xp.outer(s),
                hp,
                wp,
                grad_out.outer(s),
                gx,
                gk.data_mut(),
                gb.data_mut(),
                &mut cols,
                &mut gcols,
            );
            if self.input_grad {
                grad_in
                    .outer_mut(s)
                    .copy_from_slice(&self.crop(&gxp, c, h, w));
            }
        }
        self.grad_kernels = gk;
        self.grad_biases = gb;
        Ok(grad_in)
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        vec![
            Param {
                value: &mut self.kernels,
                grad: &mut self.grad_kernels,
            },
            Param {
                value: &mut self.biases,
                grad: &mut self.grad_biases,
            },
        ]
    }

    pub fn state(&self) -> Vec<&Tensor> {
        vec![&self.kernels, &self.biases]
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernels, &mut self.biases]
    }
}

/// Single-sample forward: `out[o][i][j] = bias[o] + Σ kernel[o][c][a][b]·x[c][i+a][j+b]`.
pub fn conv2d_forward(layer: &Conv2dLayer, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = layer.check_input(x.shape())?;
    let (oh, ow) = layer.output_size(h, w)?;
    let xp = layer.pad(x.data(), c, h, w);
    let mut out = vec![0.0; layer.out_channels() * oh * ow];
    layer.forward_padded(&xp, h + 2 * layer.padding, w + 2 * layer.padding, &mut out, &mut Vec::new());
    Tensor::new(vec![layer.out_channels(), oh, ow], out)
}

/// Single-sample backward; does not touch the layer's accumulated gradients.
pub fn conv2d_backward(layer: &Conv2dLayer, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let (c, h, w) = layer.check_input(x.shape())?;
    let (oh, ow) = layer.output_size(h, w)?;
    grad_out.expect_shape(&[layer.out_channels(), oh, ow])?;
    let (hp, wp) = (h + 2 * layer.padding, w + 2 * layer.padding);
    let xp = layer.pad(x.data(), c, h, w);
    let mut gxp = vec![0.0; c * hp * wp];
    let mut gk = Tensor::zeros(layer.kernels.shape());
    let mut gb = Tensor::zeros(layer.biases.shape());
    layer.backward_padded(
        &xp,
        hp,
        wp,
        grad_out.data(),
        Some(&mut gxp),
        gk.data_mut(),
        gb.data_mut(),
        &mut Vec::new(),
        &mut Vec::new(),
    );
    Ok(ConvGrads {
        input: Tensor::new(vec![c, h, w], layer.crop(&gxp, c, h, w))?,
        kernels: gk,
        biases: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testing::{assert_close, numeric_grad, weighted_sum};

    /// Six-deep loop, no padding shortcuts.
    fn conv_oracle(kern: &Tensor, bias: &Tensor, x: &Tensor, pad: usize) -> Tensor {
        let [oc, ic, k, _] = kern.shape()[..] else { unreachable!() };
        let [_, h, w] = x.shape()[..] else { unreachable!() };
        let (oh, ow) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
        let mut out = Tensor::zeros(&[oc, oh, ow]);
        for o in 0..oc {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = bias.data()[o];
                    for c in 0..ic {
                        for a in 0..k {
                            for b in 0..k {
                                let (yi, xj) = ((i + a) as isize - pad as isize, (j + b) as isize - pad as isize);
                                if yi < 0 || xj < 0 || yi >= h as isize || xj >= w as isize {
                                    continue;
                                }
                                s += kern.data()[((o * ic + c) * k + a) * k + b]
                                    * x.data()[(c * h + yi as usize) * w + xj as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * oh + i) * ow + j] = s;
                }
            }
        }
        out
    }

    fn random_layer(rng: &mut Rng, ic: usize, oc: usize, k: usize, pad: usize) -> Conv2dLayer {
        let kern = rand_uniform(rng, &[oc, ic, k, k], -1.0, 1.0).unwrap();
        let bias = rand_uniform(rng, &[oc], -1.0, 1.0).unwrap();
        Conv2dLayer::from_parts(kern, bias, pad).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let layer =
            Conv2dLayer::from_parts(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 0).unwrap();
        let x = rand_uniform(&mut Rng::new(1), &[1, 4, 5], -1.0, 1.0).unwrap();
        assert_eq!(conv2d_forward(&layer, &x).unwrap(), x);
        let g = rand_uniform(&mut Rng::new(2), &[1, 4, 5], -1.0, 1.0).unwrap();
        assert_eq!(conv2d_backward(&layer, &x, &g).unwrap().input, g);
    }

    #[test]
    fn all_ones_sum() {
        let layer =
            Conv2dLayer::from_parts(Tensor::full(&[1, 1, 3, 3], 1.0), Tensor::zeros(&[1]), 0).unwrap();
        let out = conv2d_forward(&layer, &Tensor::full(&[1, 3, 3], 1.0)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn matches_oracle() {
        let mut rng = Rng::new(77);
        for (k, pad) in [(3, 0), (1, 0), (4, 0), (3, 1)] {
            let layer = random_layer(&mut rng, 3, 4, k, pad);
            let x = rand_uniform(&mut rng, &[3, 8, 8], -1.0, 1.0).unwrap();
            let got = conv2d_forward(&layer, &x).unwrap();
            let want = conv_oracle(layer.kernels(), layer.biases(), &x, pad);
            assert_eq!(got.shape(), want.shape());
            assert_close(got.data(), want.data(), 1e-12);
        }
    }

    #[test]
    fn input_smaller_than_kernel() {
        let layer = random_layer(&mut Rng::new(1), 1, 1, 4, 0);
        assert!(matches!(
            conv2d_forward(&layer, &Tensor::zeros(&[1, 3, 3])),
            Err(Error::Shape(_))
        ));
        assert!(conv2d_forward(&layer, &Tensor::zeros(&[2, 5, 5])).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let layer = random_layer(&mut Rng::new(4), 2, 3, 3, 0);
        let x = rand_uniform(&mut Rng::new(5), &[2, 5, 5], -1.0, 1.0).unwrap();
        let g = conv2d_backward(&layer, &x, &Tensor::zeros(&[3, 3, 3])).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.kernels.max_abs(), 0.0);
        assert_eq!(g.biases.max_abs(), 0.0);
        assert!(conv2d_backward(&layer, &x, &Tensor::zeros(&[3, 4, 3])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(99);
        for (k, pad) in [(3, 0), (4, 0), (3, 1)] {
            let layer = random_layer(&mut rng, 2, 3, k, pad);
            let x = rand_uniform(&mut rng, &[2, 6, 7], -1.0, 1.0).unwrap();
            let out_shape = conv2d_forward(&layer, &x).unwrap().shape().to_vec();
            let r = rand_uniform(&mut rng, &out_shape, -1.0, 1.0).unwrap();
            let grads = conv2d_backward(&layer, &x, &r).unwrap();

            let num_x = numeric_grad(&x, |xx| weighted_sum(&conv2d_forward(&layer, xx).unwrap(), &r));
            assert_close(grads.input.data(), num_x.data(), 1e-4);

            let num_k = numeric_grad(layer.kernels(), |kk| {
                let l = Conv2dLayer::from_parts(kk.clone(), layer.biases().clone(), pad).unwrap();
                weighted_sum(&conv2d_forward(&l, &x).unwrap(), &r)
            });
            assert_close(grads.kernels.data(), num_k.data(), 1e-4);

            let num_b = numeric_grad(layer.biases(), |bb| {
                let l = Conv2dLayer::from_parts(layer.kernels().clone(), bb.clone(), pad).unwrap();
                weighted_sum(&conv2d_forward(&l, &x).unwrap(), &r)
            });
            assert_close(grads.biases.data(), num_b.data(), 1e-4);
            for o in 0..3 {
                let plane: f64 = r.outer(o).iter().sum();
                assert!((grads.biases.data()[o] - plane).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_layer_agrees_with_single_sample() {
        let mut rng = Rng::new(8);
        let mut layer = random_layer(&mut rng, 2, 3, 3, 1);
        let batch = rand_uniform(&mut rng, &[3, 2, 5, 5], -1.0, 1.0).unwrap();
        let out = layer.forward(&batch).unwrap();
        let g = rand_uniform(&mut rng, out.shape(), -1.0, 1.0).unwrap();
        let gx = layer.backward(&g).unwrap();
        let mut gk = Tensor::zeros(layer.kernels().shape());
        for s in 0..3 {
            let xs = Tensor::new(vec![2, 5, 5], batch.outer(s).to_vec()).unwrap();
            let gs = Tensor::new(vec![3, 5, 5], g.outer(s).to_vec()).unwrap();
            assert_close(out.outer(s), conv2d_forward(&layer, &xs).unwrap().data(), 1e-12);
            let single = conv2d_backward(&layer, &xs, &gs).unwrap();
            assert_close(gx.outer(s), single.input.data(), 1e-12);
            gk.add_assign(&single.kernels).unwrap();
        }
        assert_close(layer.grad_kernels.data(), gk.data(), 1e-12);
    }
}
