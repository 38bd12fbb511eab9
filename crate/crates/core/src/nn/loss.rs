//! Categorical softmax cross-entropy averaged over a batch.

use crate::emotion::NUM_CLASSES;
use crate::error::{Error, Result};

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-12;

/// Targets and predicted probabilities for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    targets: Vec<[f64; NUM_CLASSES]>,
    outputs: Vec<[f64; NUM_CLASSES]>,
}

impl LossBatch {
    pub fn new(targets: Vec<[f64; NUM_CLASSES]>, outputs: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Usage("loss over an empty batch".into()));
        }
        if targets.len() != outputs.len() {
            return Err(Error::dim("LossBatch", targets.len(), outputs.len()));
        }
        for t in &targets {
            let ones = t.iter().filter(|&&v| v == 1.0).count();
            if ones != 1 || t.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data(format!("target {t:?} is not one-hot")));
            }
        }
        for o in &outputs {
            let sum: f64 = o.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || o.iter().any(|&v| v.is_nan() || v < 0.0) {
                return Err(Error::Data(format!("output {o:?} is not a distribution")));
            }
        }
        Ok(LossBatch { targets, outputs })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `J = -(1/N) Σ_n Σ_c t[n][c] ln o[n][c]`.
pub fn cross_entropy_loss(batch: &LossBatch) -> f64 {
    let total: f64 = batch
        .targets
        .iter()
        .zip(&batch.outputs)
        .map(|(t, o)| {
            t.iter()
                .zip(o)
                .map(|(t, o)| -t * o.clamp(CLIP, 1.0 - CLIP).ln())
                .sum::<f64>()
        })
        .sum();
    total / batch.len() as f64
}

/// Gradient of the batch-mean loss with respect to one sample's logits: `(o - t) / N`.
pub fn softmax_cross_entropy_grad(
    output: &[f64; NUM_CLASSES],
    target: &[f64; NUM_CLASSES],
    batch_size: usize,
) -> [f64; NUM_CLASSES] {
    let n = batch_size as f64;
    std::array::from_fn(|c| (output[c] - target[c]) / n)
}
