//! Cross-channel local response normalization:
//! `b[c] = a[c] / (k + alpha * sum_{|c'-c| <= n/2} a[c']^2)^beta`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    /// Additive bias `k`.
    pub k: f64,
    /// Number of adjacent channels summed, centred on the current one (odd).
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            k: 2.0,
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("LRN bias k must be positive, got {}", self.k)));
        }
        if self.n == 0 || self.n.is_multiple_of(2) {
            return Err(Error::Config(format!("LRN window n must be odd, got {}", self.n)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "LRN alpha {} and beta {} must be non-negative",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        self.n / 2
    }
}

/// `s^-beta`, with a square-root path for the common `beta = 0.75`.
#[inline]
fn inv_pow(s: f64, beta: f64) -> f64 {
    if beta == 0.75 {
        let r = s.sqrt();
        1.0 / (r * r.sqrt())
    } else {
        s.powf(-beta)
    }
}

/// `k + alpha * (windowed sum of squares)` for every element of one pixel.
fn denominators(p: &LrnParams, px: &[f64], scale: &mut [f64]) {
    let r = p.radius();
    let c = px.len();
    for (ch, s) in scale.iter_mut().enumerate() {
        let lo = ch.saturating_sub(r);
        let hi = (ch + r).min(c - 1);
        let sq: f64 = px[lo..=hi].iter().map(|v| v * v).sum();
        *s = p.k + p.alpha * sq;
    }
}

/// Normalizes `input`, whose trailing dimension of length `channels` is the channel axis.
pub(crate) fn forward_raw(p: &LrnParams, channels: usize, input: &[f64], out: &mut [f64]) {
    let mut scale = vec![0.0; channels];
    for (px, o) in input.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        denominators(p, px, &mut scale);
        for ((o, a), s) in o.iter_mut().zip(px).zip(&scale) {
            *o = a * inv_pow(*s, p.beta);
        }
    }
}

pub(crate) fn backward_raw(
    p: &LrnParams,
    channels: usize,
    input: &[f64],
    grad_out: &[f64],
    grad_input: &mut [f64],
) {
    let r = p.radius();
    let mut scale = vec![0.0; channels];
    // g[c] * a[c] * s[c]^(-beta - 1), reused by every channel in c's window.
    // After the first loop `scale` holds s^(-beta).
    let mut coupled = vec![0.0; channels];
    for ((px, g), gi) in input
        .chunks_exact(channels)
        .zip(grad_out.chunks_exact(channels))
        .zip(grad_input.chunks_exact_mut(channels))
    {
        denominators(p, px, &mut scale);
        for ch in 0..channels {
            let damp = inv_pow(scale[ch], p.beta);
            coupled[ch] = g[ch] * px[ch] * damp / scale[ch];
            scale[ch] = damp;
        }
        for j in 0..channels {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(channels - 1);
            let cross: f64 = coupled[lo..=hi].iter().sum();
            gi[j] = g[j] * scale[j] - 2.0 * p.alpha * p.beta * px[j] * cross;
        }
    }
}

fn channels_of(input: &Tensor) -> usize {
    *input.shape().last().expect("tensors have rank >= 1")
}

pub fn lrn_forward(input: &Tensor, params: &LrnParams) -> Result<Tensor> {
    params.validate()?;
    let mut out = Tensor::zeros(input.shape());
    forward_raw(params, channels_of(input), input.data(), out.data_mut());
    Ok(out)
}

pub fn lrn_backward(grad_out: &Tensor, input: &Tensor, params: &LrnParams) -> Result<Tensor> {
    params.validate()?;
    grad_out.expect_shape("lrn_backward", input.shape())?;
    let mut grad_in = Tensor::zeros(input.shape());
    backward_raw(params, channels_of(input), input.data(), grad_out.data(), grad_in.data_mut());
    Ok(grad_in)
}
