//! Independent oracles shared by the integration tests and the acceptance gate.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use emofuse::bayes::{BayesModel, BernoulliCpt, ClassPrior, CnnEvidenceCpt, DescriptorVocabulary, EvidenceMode};
use emofuse::data_io::{ModelBundle, SampleRecord};
use emofuse::nn::{
    conv_backward, conv_forward, dense_backward, dense_forward, lrn_backward, lrn_forward, LrnParams, NetworkSpec,
};
use emofuse::train::{init_network, OptimizerConfig};
use emofuse::{Emotion, EmotionDistribution, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with the denominator floored so that two near-zero values compare as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

const H: f64 = 1e-5;

/// Central-difference derivative of `loss` with respect to every element of `x`.
pub fn numeric_grad(x: &Tensor, mut loss: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + H;
            let up = loss(&probe);
            probe.data_mut()[i] = orig - H;
            let down = loss(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn max_rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.data().iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// `sum(out * r)`: a scalar loss whose gradient with respect to `out` is `r`.
pub fn projected(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over input, weight and bias gradients of one convolution.
pub fn conv_check(seed: u64, hw: usize, c: usize, k: usize, f: usize) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&[hw, hw, c], &mut g);
    let w = random_tensor(&[k, k, c, f], &mut g);
    let b = random_tensor(&[f], &mut g);
    let r = random_tensor(&[hw, hw, f], &mut g);
    let grads = conv_backward(&r, &x, &w).unwrap();
    let gx = numeric_grad(&x, |x| projected(&conv_forward(x, &w, &b).unwrap(), &r));
    let gw = numeric_grad(&w, |w| projected(&conv_forward(&x, w, &b).unwrap(), &r));
    let gb = numeric_grad(&b, |b| projected(&conv_forward(&x, &w, b).unwrap(), &r));
    max_rel_err(&grads.input, &gx)
        .max(max_rel_err(&grads.weights, &gw))
        .max(max_rel_err(&grads.bias, &gb))
}

/// Worst relative error over input, weight and bias gradients of one dense layer.
pub fn dense_check(seed: u64, input_shape: &[usize], units: usize) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(input_shape, &mut g);
    let d: usize = input_shape.iter().product();
    let w = random_tensor(&[d, units], &mut g);
    let b = random_tensor(&[units], &mut g);
    let r = random_tensor(&[units], &mut g);
    let grads = dense_backward(&r, &x, &w).unwrap();
    let gx = numeric_grad(&x, |x| projected(&dense_forward(x, &w, &b).unwrap(), &r));
    let gw = numeric_grad(&w, |w| projected(&dense_forward(&x, w, &b).unwrap(), &r));
    let gb = numeric_grad(&b, |b| projected(&dense_forward(&x, &w, b).unwrap(), &r));
    max_rel_err(&grads.input, &gx)
        .max(max_rel_err(&grads.weights, &gw))
        .max(max_rel_err(&grads.bias, &gb))
}

/// Worst relative error of the LRN input gradient. Inputs are scaled up so the
/// normalization term is far from negligible.
pub fn lrn_check(seed: u64, hw: usize, c: usize, params: &LrnParams) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&[hw, hw, c], &mut g).map(|v| 30.0 * v);
    let r = random_tensor(&[hw, hw, c], &mut g);
    let analytic = lrn_backward(&r, &x, params).unwrap();
    let numeric = numeric_grad(&x, |x| projected(&lrn_forward(x, params).unwrap(), &r));
    max_rel_err(&analytic, &numeric)
}

/// A random descriptor model over `d` descriptors named `d0..`.
pub fn random_bayes<R: Rng>(d: usize, mode: EvidenceMode, rng: &mut R) -> BayesModel {
    let names: Vec<String> = (0..d).map(|i| format!("d{i}")).collect();
    let rows = (0..d).map(|_| std::array::from_fn(|_| rng.gen_range(0.02..0.98))).collect();
    let prior = EmotionDistribution::from_weights(std::array::from_fn(|_| rng.gen_range(0.05..1.0))).unwrap();
    BayesModel::new(
        DescriptorVocabulary::from_descriptors(&names),
        BernoulliCpt::new(rows, 1.0).unwrap(),
        ClassPrior(prior),
        mode,
    )
    .unwrap()
}

pub fn random_cnn_cpt<R: Rng>(rng: &mut R) -> CnnEvidenceCpt {
    let row = |rng: &mut R| *EmotionDistribution::from_weights(std::array::from_fn(|_| rng.gen_range(0.01..1.0))).unwrap().probs();
    CnnEvidenceCpt::new([row(rng), row(rng), row(rng)]).unwrap()
}

pub fn random_distribution<R: Rng>(rng: &mut R) -> EmotionDistribution {
    EmotionDistribution::from_weights(std::array::from_fn(|_| rng.gen_range(0.0..1.0) + 1e-9)).unwrap()
}

/// Random evidence: each vocabulary descriptor present with probability 1/2,
/// plus sometimes an out-of-vocabulary word.
pub fn random_evidence<R: Rng>(model: &BayesModel, rng: &mut R) -> BTreeSet<String> {
    let mut ev: BTreeSet<String> = model.vocabulary().names().iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
    if rng.gen_bool(0.3) {
        ev.insert("never-seen".into());
    }
    ev
}

/// Posterior by enumerating the full joint over `(y, x_1..x_D, x_cnn)` and
/// summing the entries consistent with the observations. Unobserved variables
/// (absent descriptors in presence-only mode, the CNN node when not given) are
/// summed out.
pub fn brute_force_posterior(
    evidence: &BTreeSet<String>,
    model: &BayesModel,
    cnn: Option<(Emotion, &CnnEvidenceCpt)>,
) -> [f64; 3] {
    let d = model.vocabulary().len();
    let observed: Vec<Option<bool>> = model
        .vocabulary()
        .names()
        .iter()
        .map(|n| {
            let present = evidence.contains(n);
            match model.mode() {
                EvidenceMode::Full => Some(present),
                EvidenceMode::PresenceOnly => present.then_some(true),
            }
        })
        .collect();
    let mut joint = [0.0; 3];
    for y in Emotion::ALL {
        for assignment in 0u32..(1 << d) {
            let xs: Vec<bool> = (0..d).map(|i| assignment >> i & 1 == 1).collect();
            if xs.iter().zip(&observed).any(|(x, o)| o.is_some_and(|o| o != *x)) {
                continue;
            }
            for c in Emotion::ALL {
                if let Some((seen, _)) = cnn {
                    if seen != c {
                        continue;
                    }
                }
                let mut p = model.prior().0.get(y);
                for (i, &x) in xs.iter().enumerate() {
                    let t = model.cpt().p_true(i, y);
                    p *= if x { t } else { 1.0 - t };
                }
                p *= match cnn {
                    Some((_, cpt)) => cpt.likelihood(y, c),
                    // Unobserved CNN node: its table rows sum to one, use a uniform one.
                    None => 1.0 / 3.0,
                };
                joint[y.index()] += p;
            }
        }
    }
    let z: f64 = joint.iter().sum();
    joint.map(|p| p / z)
}

/// First index of the maximum.
pub fn argmax(v: &[f64; 3]) -> Emotion {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    Emotion::ALL[best]
}

pub fn record(id: usize, label: Emotion, descriptors: &[&str]) -> SampleRecord {
    SampleRecord {
        image_id: format!("r{id:02}"),
        image_path: PathBuf::from(format!("r{id:02}.png")),
        face_boxes: Vec::new(),
        descriptors: descriptors.iter().map(|s| s.to_string()).collect(),
        label: Some(label),
    }
}

/// 20 records: 8 positive, 7 neutral, 5 negative.
pub fn fixture() -> Vec<SampleRecord> {
    use Emotion::*;
    let rows: [(Emotion, &[&str]); 20] = [
        (Positive, &["party", "crowd"]),
        (Positive, &["party"]),
        (Positive, &["party", "beach"]),
        (Positive, &["beach", "crowd"]),
        (Positive, &["party", "crowd", "beach"]),
        (Positive, &["crowd"]),
        (Positive, &["party"]),
        (Positive, &[]),
        (Neutral, &["office", "crowd"]),
        (Neutral, &["office"]),
        (Neutral, &["office", "meeting"]),
        (Neutral, &["meeting"]),
        (Neutral, &["crowd"]),
        (Neutral, &["office", "party"]),
        (Neutral, &["meeting", "crowd"]),
        (Negative, &["protest", "crowd"]),
        (Negative, &["protest"]),
        (Negative, &["protest", "crowd"]),
        (Negative, &["crowd", "meeting"]),
        (Negative, &["protest"]),
    ];
    rows.iter().enumerate().map(|(i, (c, d))| record(i, *c, d)).collect()
}

/// A random bundle on a small network; bit `k` of `parts` includes the network,
/// optimizer, descriptor model and CNN table respectively.
pub fn random_bundle(seed: u64, parts: u8) -> ModelBundle {
    let mut g = rng(seed);
    let spec = NetworkSpec::alexnet_variant([8, 8, 3], [2, 3, 4], 5);
    ModelBundle {
        network: (parts & 1 != 0).then(|| init_network(spec, &mut g).unwrap()),
        optimizer: (parts & 2 != 0).then(|| OptimizerConfig {
            learning_rate: 1e-3 * (1.0 + seed as f64),
            seed,
            ..OptimizerConfig::default()
        }),
        bayes: (parts & 4 != 0).then(|| {
            let mode = if seed.is_multiple_of(2) { EvidenceMode::Full } else { EvidenceMode::PresenceOnly };
            random_bayes((seed % 7) as usize, mode, &mut g)
        }),
        cnn_cpt: (parts & 8 != 0).then(|| random_cnn_cpt(&mut g)),
    }
}
