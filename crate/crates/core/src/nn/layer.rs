//! Layer kinds and their forward/backward rules.
//!
//! Parameters are stored as `f32` (checkpoint semantics); all arithmetic runs
//! in `f64`. Activations use a channel-major layout: index
//! `ch * (h * w) + row * w + col`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial shape of an activation tensor. Flat vectors are `1 x 1 x d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn flat(d: usize) -> Self {
        Shape { h: 1, w: 1, c: d }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    /// Affine transform, weights row-major `(out_dim, in_dim)`.
    Dense {
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    /// Valid (unpadded) 2-D convolution, weights `(out_ch, in_ch, kh, kw)`.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Relu,
    Flatten,
    Softmax,
}

impl Layer {
    pub fn dense_zeroed(in_dim: usize, out_dim: usize) -> Self {
        Layer::Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn conv2d_zeroed(in_ch: usize, out_ch: usize, kh: usize, kw: usize, stride: usize) -> Self {
        Layer::Conv2d {
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            weights: vec![0.0; out_ch * in_ch * kh * kw],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
                weights.len() + bias.len()
            }
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or an error if incompatible.
    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Dense { in_dim, out_dim, .. } => {
                if input.len() != *in_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects flat input of {} values, got shape {}x{}x{}",
                        in_dim, input.h, input.w, input.c
                    )));
                }
                Ok(Shape::flat(*out_dim))
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                ..
            } => {
                if input.c != *in_ch {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d expects {} input channels, got {}",
                        in_ch, input.c
                    )));
                }
                if input.h < *kh || input.w < *kw {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d kernel {}x{} larger than input {}x{}",
                        kh, kw, input.h, input.w
                    )));
                }
                if *stride == 0 {
                    return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
                }
                Ok(Shape {
                    h: (input.h - kh) / stride + 1,
                    w: (input.w - kw) / stride + 1,
                    c: *out_ch,
                })
            }
            Layer::Relu | Layer::Softmax => Ok(input),
            Layer::Flatten => Ok(Shape::flat(input.len())),
        }
    }

    pub fn forward(&self, input: &[f64], in_shape: Shape, output: &mut [f64]) {
        match self {
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                bias,
            } => {
                debug_assert_eq!(input.len(), *in_dim);
                debug_assert_eq!(output.len(), *out_dim);
                for o in 0..*out_dim {
                    let row = o * in_dim;
                    let mut sum = bias[o] as f64;
                    for (i, &x) in input.iter().enumerate() {
                        sum += weights[row + i] as f64 * x;
                    }
                    output[o] = sum;
                }
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                weights,
                bias,
            } => {
                let out = self.out_shape(in_shape).expect("validated at construction");
                debug_assert_eq!(output.len(), out.len());
                let (ih, iw) = (in_shape.h, in_shape.w);
                for oc in 0..*out_ch {
                    for or in 0..out.h {
                        for ocol in 0..out.w {
                            let mut sum = bias[oc] as f64;
                            for ic in 0..*in_ch {
                                for kr in 0..*kh {
                                    let ir = or * stride + kr;
                                    let in_base = ic * ih * iw + ir * iw + ocol * stride;
                                    let w_base = ((oc * in_ch + ic) * kh + kr) * kw;
                                    for kc in 0..*kw {
                                        sum += weights[w_base + kc] as f64 * input[in_base + kc];
                                    }
                                }
                            }
                            output[(oc * out.h + or) * out.w + ocol] = sum;
                        }
                    }
                }
            }
            Layer::Relu => {
                for (y, &x) in output.iter_mut().zip(input) {
                    *y = if x > 0.0 { x } else { 0.0 };
                }
            }
            Layer::Flatten => output.copy_from_slice(input),
            Layer::Softmax => {
                let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (y, &x) in output.iter_mut().zip(input) {
                    *y = (x - max).exp();
                    sum += *y;
                }
                for y in output.iter_mut() {
                    *y /= sum;
                }
            }
        }
    }

    /// Backward pass for one sample.
    ///
    /// `d_input` is overwritten; `d_params` (length [`Layer::param_count`])
    /// is accumulated into, so batch gradients can be summed in place.
    pub fn backward(
        &self,
        input: &[f64],
        output: &[f64],
        d_output: &[f64],
        in_shape: Shape,
        d_input: &mut [f64],
        d_params: &mut [f64],
    ) {
        match self {
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                ..
            } => {
                d_input.fill(0.0);
                let (d_w, d_b) = d_params.split_at_mut(in_dim * out_dim);
                for o in 0..*out_dim {
                    let g = d_output[o];
                    d_b[o] += g;
                    let row = o * in_dim;
                    for i in 0..*in_dim {
                        d_w[row + i] += g * input[i];
                        d_input[i] += weights[row + i] as f64 * g;
                    }
                }
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                weights,
                ..
            } => {
                d_input.fill(0.0);
                let out = self.out_shape(in_shape).expect("validated at construction");
                let (ih, iw) = (in_shape.h, in_shape.w);
                let (d_w, d_b) = d_params.split_at_mut(out_ch * in_ch * kh * kw);
                for oc in 0..*out_ch {
                    for or in 0..out.h {
                        for ocol in 0..out.w {
                            let g = d_output[(oc * out.h + or) * out.w + ocol];
                            d_b[oc] += g;
                            for ic in 0..*in_ch {
                                for kr in 0..*kh {
                                    let ir = or * stride + kr;
                                    let in_base = ic * ih * iw + ir * iw + ocol * stride;
                                    let w_base = ((oc * in_ch + ic) * kh + kr) * kw;
                                    for kc in 0..*kw {
                                        d_w[w_base + kc] += g * input[in_base + kc];
                                        d_input[in_base + kc] += weights[w_base + kc] as f64 * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                for ((dx, &y), &dy) in d_input.iter_mut().zip(output).zip(d_output) {
                    *dx = if y > 0.0 { dy } else { 0.0 };
                }
            }
            Layer::Flatten => d_input.copy_from_slice(d_output),
            Layer::Softmax => {
                // dL/dx_i = p_i * (dL/dp_i − sum_j p_j dL/dp_j)
                let dot: f64 = output.iter().zip(d_output).map(|(&p, &d)| p * d).sum();
                for ((dx, &p), &d) in d_input.iter_mut().zip(output).zip(d_output) {
                    *dx = p * (d - dot);
                }
            }
        }
    }

    pub(crate) fn params(&self) -> (&[f32], &[f32]) {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
                (weights, bias)
            }
            _ => (&[], &[]),
        }
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        match self {
            Layer::Dense { weights, bias, .. } | Layer::Conv2d { weights, bias, .. } => {
                (weights, bias)
            }
            _ => (&mut [], &mut []),
        }
    }
}
