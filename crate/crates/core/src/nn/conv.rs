//! Stride-1, same-padded 2-D convolution over `H × W × C` feature maps,
//! lowered to a matrix product through an im2col buffer.

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dimensions of one convolution: input `h × w × c`, kernel `k × k`, `f` filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub f: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weights: &[usize], bias: &[usize]) -> Result<Self> {
        let [h, w, c] = *input else {
            return Err(Error::dim("conv", "input [H, W, C]", format!("{input:?}")));
        };
        let [k, k2, wc, f] = *weights else {
            return Err(Error::dim("conv", "weights [k, k, C, F]", format!("{weights:?}")));
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::dim("conv", "square odd kernel", format!("{k}x{k2}")));
        }
        if wc != c {
            return Err(Error::dim("conv", format!("{c} weight input channels"), wc));
        }
        if bias != [f] {
            return Err(Error::dim("conv", format!("bias [{f}]"), format!("{bias:?}")));
        }
        Ok(ConvGeom { h, w, c, k, f })
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Width of one im2col row: a flattened `k × k × c` window.
    pub fn window(&self) -> usize {
        self.k * self.k * self.c
    }

    pub fn input_len(&self) -> usize {
        self.pixels() * self.c
    }

    pub fn output_len(&self) -> usize {
        self.pixels() * self.f
    }

    pub fn cols_len(&self) -> usize {
        self.pixels() * self.window()
    }
}

fn im2col(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    let pad = g.k / 2;
    let win = g.window();
    for i in 0..g.h {
        for j in 0..g.w {
            let row = &mut cols[(i * g.w + j) * win..][..win];
            for di in 0..g.k {
                let seg = &mut row[di * g.k * g.c..][..g.k * g.c];
                let Some(src_i) = (i + di).checked_sub(pad).filter(|&r| r < g.h) else {
                    seg.fill(0.0);
                    continue;
                };
                for dj in 0..g.k {
                    let dst = &mut seg[dj * g.c..][..g.c];
                    match (j + dj).checked_sub(pad).filter(|&s| s < g.w) {
                        Some(src_j) => dst.copy_from_slice(&input[(src_i * g.w + src_j) * g.c..][..g.c]),
                        None => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], grad_input: &mut [f64]) {
    let pad = g.k / 2;
    let win = g.window();
    for i in 0..g.h {
        for j in 0..g.w {
            let row = &cols[(i * g.w + j) * win..][..win];
            for di in 0..g.k {
                let Some(src_i) = (i + di).checked_sub(pad).filter(|&r| r < g.h) else {
                    continue;
                };
                for dj in 0..g.k {
                    if let Some(src_j) = (j + dj).checked_sub(pad).filter(|&s| s < g.w) {
                        let src = &row[(di * g.k + dj) * g.c..][..g.c];
                        let dst = &mut grad_input[(src_i * g.w + src_j) * g.c..][..g.c];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass of one sample into `out`; `cols` is scratch space.
pub(crate) fn forward_raw(
    g: &ConvGeom,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    cols: &mut Vec<f64>,
    out: &mut [f64],
) {
    cols.resize(g.cols_len(), 0.0);
    im2col(g, input, cols);
    for px in out.chunks_exact_mut(g.f) {
        px.copy_from_slice(bias);
    }
    gemm(g.pixels(), g.window(), g.f, cols, false, weights, false, 1.0, out);
}

/// Backward pass of one sample. Parameter gradients are accumulated into
/// `grad_weights`/`grad_bias`; `grad_input`, when requested, is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_raw(
    g: &ConvGeom,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    cols: &mut Vec<f64>,
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    cols.resize(g.cols_len(), 0.0);
    im2col(g, input, cols);
    gemm(g.window(), g.pixels(), g.f, cols, true, grad_out, false, 1.0, grad_weights);
    for px in grad_out.chunks_exact(g.f) {
        for (b, v) in grad_bias.iter_mut().zip(px) {
            *b += v;
        }
    }
    if let Some(grad_input) = grad_input {
        // Reuse the im2col buffer for the column-space input gradient.
        gemm(g.pixels(), g.f, g.window(), grad_out, false, weights, true, 0.0, cols);
        grad_input.fill(0.0);
        col2im(g, cols, grad_input);
    }
}

/// Same-padded, stride-1 convolution: `[H, W, C] * [k, k, C, F] + [F] -> [H, W, F]`.
pub fn conv_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), weights.shape(), bias.shape())?;
    let mut out = vec![0.0; g.output_len()];
    forward_raw(&g, input.data(), weights.data(), bias.data(), &mut Vec::new(), &mut out);
    Tensor::new(vec![g.h, g.w, g.f], out)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGradients {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Backpropagates `grad_out` through a convolution whose forward input was `input`.
pub fn conv_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<ConvGradients> {
    let f = *weights.shape().last().unwrap_or(&0);
    let g = ConvGeom::new(input.shape(), weights.shape(), &[f])?;
    grad_out.expect_shape("conv_backward", &[g.h, g.w, g.f])?;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; g.f];
    let mut grad_in = vec![0.0; g.input_len()];
    backward_raw(
        &g,
        input.data(),
        weights.data(),
        grad_out.data(),
        &mut Vec::new(),
        &mut grad_w,
        &mut grad_b,
        Some(&mut grad_in),
    );
    Ok(ConvGradients {
        input: Tensor::new(input.shape().to_vec(), grad_in)?,
        weights: Tensor::new(weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![g.f], grad_b)?,
    })
}
