//! Fully connected layer, `y = x · W + b` with `W` stored as `[D, U]`.

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims(weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let [d, u] = *weights.shape() else {
        return Err(Error::dim("dense", "weights [D, U]", format!("{:?}", weights.shape())));
    };
    bias.expect_shape("dense bias", &[u])?;
    Ok((d, u))
}

/// Forward pass for a batch of `n` flattened rows of length `d`.
pub(crate) fn forward_raw(n: usize, d: usize, u: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    for row in out.chunks_exact_mut(u) {
        row.copy_from_slice(b);
    }
    gemm(n, d, u, x, false, w, false, 1.0, out);
}

/// Backward pass for a batch; parameter gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_raw(
    n: usize,
    d: usize,
    u: usize,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_x: Option<&mut [f64]>,
) {
    gemm(d, n, u, x, true, grad_out, false, 1.0, grad_w);
    for row in grad_out.chunks_exact(u) {
        for (b, g) in grad_b.iter_mut().zip(row) {
            *b += g;
        }
    }
    if let Some(grad_x) = grad_x {
        gemm(n, u, d, grad_out, false, w, true, 0.0, grad_x);
    }
}

/// Affine map of the flattened `input` (length `D`) to `U` outputs.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d, u) = dims(weights, bias)?;
    if input.len() != d {
        return Err(Error::dim("dense_forward", format!("{d} inputs"), input.len()));
    }
    let mut out = vec![0.0; u];
    forward_raw(1, d, u, input.data(), weights.data(), bias.data(), &mut out);
    Tensor::new(vec![u], out)
}

#[derive(Debug, Clone)]
pub struct DenseGradients {
    /// Shaped like the forward input.
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor) -> Result<DenseGradients> {
    let [d, u] = *weights.shape() else {
        return Err(Error::dim("dense_backward", "weights [D, U]", format!("{:?}", weights.shape())));
    };
    if input.len() != d || grad_out.len() != u {
        return Err(Error::dim(
            "dense_backward",
            format!("input {d}, grad {u}"),
            format!("input {}, grad {}", input.len(), grad_out.len()),
        ));
    }
    let mut gw = vec![0.0; d * u];
    let mut gb = vec![0.0; u];
    let mut gx = vec![0.0; d];
    backward_raw(1, d, u, input.data(), weights.data(), grad_out.data(), &mut gw, &mut gb, Some(&mut gx));
    Ok(DenseGradients {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(vec![d, u], gw)?,
        bias: Tensor::new(vec![u], gb)?,
    })
}
