//! Max pooling with "same" padding: output side is `ceil(side / stride)` and
//! padded cells never win.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn same_padding(side: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = side.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(side);
    (out, total / 2)
}

impl PoolGeom {
    pub fn new(input: &[usize], kernel: usize, stride: usize) -> Result<Self> {
        let [h, w, c] = *input else {
            return Err(Error::dim("maxpool", "input [H, W, C]", format!("{input:?}")));
        };
        if h < 2 || w < 2 {
            return Err(Error::dim("maxpool", "H, W >= 2", format!("{h}x{w}")));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "maxpool kernel {kernel} and stride {stride} must be positive"
            )));
        }
        let (out_h, pad_top) = same_padding(h, kernel, stride);
        let (out_w, pad_left) = same_padding(w, kernel, stride);
        Ok(PoolGeom {
            h,
            w,
            c,
            kernel,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_h, self.out_w, self.c]
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.c
    }

    fn window(&self, out: usize, pad: usize, side: usize) -> std::ops::Range<usize> {
        let start = (out * self.stride).saturating_sub(pad);
        let end = (out * self.stride + self.kernel - pad).min(side);
        start..end
    }
}

/// Writes the pooled maxima into `out` and the flat input index of each winner
/// into `argmax`. Ties go to the first cell in row-major window order.
pub(crate) fn forward_raw(g: &PoolGeom, input: &[f64], out: &mut [f64], argmax: &mut [u32]) {
    for oi in 0..g.out_h {
        let rows = g.window(oi, g.pad_top, g.h);
        for oj in 0..g.out_w {
            let cols = g.window(oj, g.pad_left, g.w);
            for ch in 0..g.c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for i in rows.clone() {
                    for j in cols.clone() {
                        let idx = (i * g.w + j) * g.c + ch;
                        if input[idx] > best || best_idx == usize::MAX {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oi * g.out_w + oj) * g.c + ch;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

/// Routes each output gradient to the input cell that won the forward max.
pub(crate) fn backward_raw(grad_out: &[f64], argmax: &[u32], grad_input: &mut [f64]) {
    grad_input.fill(0.0);
    for (g, &idx) in grad_out.iter().zip(argmax) {
        grad_input[idx as usize] += g;
    }
}

/// Max pooling of an `[H, W, C]` tensor to `[ceil(H/stride), ceil(W/stride), C]`.
pub fn maxpool_forward(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    Ok(maxpool_forward_indexed(input, kernel, stride)?.0)
}

/// Like [`maxpool_forward`], also returning the winning input index per output.
pub fn maxpool_forward_indexed(
    input: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor, Vec<u32>)> {
    let g = PoolGeom::new(input.shape(), kernel, stride)?;
    let mut out = vec![0.0; g.output_len()];
    let mut argmax = vec![0; g.output_len()];
    forward_raw(&g, input.data(), &mut out, &mut argmax);
    Ok((Tensor::new(g.output_shape().to_vec(), out)?, argmax))
}

pub fn maxpool_backward(grad_out: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::dim("maxpool_backward", argmax.len(), grad_out.len()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    if argmax.iter().any(|&i| i as usize >= grad_in.len()) {
        return Err(Error::dim("maxpool_backward", format!("indices < {}", grad_in.len()), "out of range index"));
    }
    backward_raw(grad_out.data(), argmax, grad_in.data_mut());
    Ok(grad_in)
}
