use rand::Rng;

use crate::emotion::{EmotionDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its forward output (the unit was active where output > 0).
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu_backward", output.shape())?;
    let mut g = grad_out.clone();
    for (g, o) in g.data_mut().iter_mut().zip(output.data()) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(g)
}

/// Inverted-dropout multipliers: `1/keep_prob` with probability `keep_prob`, else 0.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, keep_prob: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / keep_prob;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep_prob { scale } else { 0.0 })
        .collect()
}

/// Numerically stable softmax of a logit slice.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over the three class logits.
pub fn softmax(input: &Tensor) -> Result<EmotionDistribution> {
    if input.len() != NUM_CLASSES {
        return Err(Error::dim("softmax", NUM_CLASSES, input.len()));
    }
    if !input.is_finite() {
        return Err(Error::Data(format!("non-finite logits {:?}", input.data())));
    }
    let p = softmax_slice(input.data());
    EmotionDistribution::new([p[0], p[1], p[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logits(v: [f64; 3]) -> Tensor {
        Tensor::new(vec![3], v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&logits([0.0; 3])).unwrap();
        for p in u.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = softmax(&logits([1000.0, 0.0, 0.0])).unwrap();
        assert!((big.probs()[0] - 1.0).abs() < 1e-12);
        assert!(big.probs()[1] < 1e-12);
        let h = softmax(&logits([2f64.ln(), 0.0, 0.0])).unwrap();
        let expect = [0.5, 0.25, 0.25];
        for (p, e) in h.probs().iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_masks_gradient() {
        let x = Tensor::new(vec![4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 3.0]);
        let g = relu_backward(&Tensor::filled(&[4], 1.0), &y).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn dropout_keeps_about_half_and_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mask = dropout_mask(100_000, 0.5, &mut rng);
        let kept = mask.iter().filter(|&&m| m == 2.0).count();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!((kept as f64 / 100_000.0 - 0.5).abs() < 0.01);
    }
}
