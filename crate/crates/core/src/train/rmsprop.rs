use super::OptimizerConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running mean of squared gradients, one accumulator per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState {
    accum: Vec<Tensor>,
}

impl RmsState {
    /// Zeroed accumulators shaped like `params`.
    pub fn new(params: &[Tensor]) -> Self {
        RmsState {
            accum: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accum
    }
}

/// One RMSProp update, applied elementwise:
/// `s <- decay * s + (1 - decay) * g^2`, then `p <- p - lr * g / sqrt(s + eps)`.
pub fn rmsprop_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut RmsState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.accum.len() {
        return Err(Error::dim(
            "rmsprop_step",
            format!("{} tensors", params.len()),
            format!("{} grads, {} accumulators", grads.len(), state.accum.len()),
        ));
    }
    for ((p, g), s) in params.iter().zip(grads).zip(&state.accum) {
        g.expect_shape("rmsprop_step grad", p.shape())?;
        s.expect_shape("rmsprop_step state", p.shape())?;
    }
    let (lr, decay, eps) = (config.learning_rate, config.decay, config.epsilon);
    for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut state.accum) {
        for ((p, g), s) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
            *s = decay * *s + (1.0 - decay) * g * g;
            *p -= lr * g / (*s + eps).sqrt();
        }
    }
    Ok(())
}
