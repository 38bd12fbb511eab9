//! CNN optimization: Xavier initialization, RMSProp, balanced batches and a
//! fixed-iteration training loop.
//!
//! All randomness derives from one seed split into independent ChaCha streams
//! (initialization, batch sampling, dropout), so each can be replayed alone.

mod batch;
mod init;
mod rmsprop;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use batch::{balanced_batch, FaceDataset};
pub use init::{init_network, xavier_bound, xavier_fill, xavier_init};
pub use rmsprop::{rmsprop_step, RmsState};

use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::network::stack;
use crate::nn::{cross_entropy_loss, softmax_cross_entropy_grad, LossBatch, Mode, Network, NetworkSpec};
use crate::nn::activation::softmax_slice;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Generator for one named substream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Number of batch updates.
    pub iterations: usize,
    pub batch_size: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-10,
            iterations: 1500,
            batch_size: 63,
            per_class: 21,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Sets `per_class` and the matching `batch_size`.
    pub fn with_per_class(mut self, per_class: usize) -> Self {
        self.per_class = per_class;
        self.batch_size = per_class * NUM_CLASSES;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 || self.batch_size != NUM_CLASSES * self.per_class {
            return Err(Error::Config(format!(
                "batch size {} must be {} x per-class count {} (> 0)",
                self.batch_size, NUM_CLASSES, self.per_class
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!("decay {} outside [0, 1)", self.decay)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Stateful training loop; one call to [`Trainer::step`] is one RMSProp update.
pub struct Trainer {
    network: Network,
    state: RmsState,
    config: OptimizerConfig,
    batches: ChaCha8Rng,
    dropout: ChaCha8Rng,
    loss_trace: Vec<f64>,
}

impl Trainer {
    /// Xavier-initialized network for `spec`, seeded from `config.seed`.
    pub fn new(spec: NetworkSpec, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let network = init_network(spec, &mut substream(config.seed, INIT_STREAM))?;
        Ok(Self::resume(network, config))
    }

    fn resume(network: Network, config: OptimizerConfig) -> Self {
        Trainer {
            state: RmsState::new(network.params()),
            batches: substream(config.seed, BATCH_STREAM),
            dropout: substream(config.seed, DROPOUT_STREAM),
            network,
            config,
            loss_trace: Vec::new(),
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn iteration(&self) -> usize {
        self.loss_trace.len()
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn rms_state(&self) -> &RmsState {
        &self.state
    }

    /// Samples a balanced batch, backpropagates the mean cross-entropy and applies RMSProp.
    /// Returns the batch loss before the update.
    pub fn step(&mut self, data: &FaceDataset) -> Result<f64> {
        let iteration = self.iteration();
        let batch = balanced_batch(data, self.config.per_class, &mut self.batches)?;
        let images: Vec<&Tensor> = batch.iter().map(|&(i, _)| data.face(i)).collect();
        let inputs = stack(&images, &self.network.input_shape())?;

        let mut tape = crate::nn::Tape::new();
        let logits = self
            .network
            .forward_batch(&inputs, Mode::Train(&mut self.dropout), Some(&mut tape))?;
        let outputs: Vec<[f64; NUM_CLASSES]> = logits
            .data()
            .chunks_exact(NUM_CLASSES)
            .map(|z| {
                let p = softmax_slice(z);
                [p[0], p[1], p[2]]
            })
            .collect();
        let targets: Vec<[f64; NUM_CLASSES]> = batch.iter().map(|(_, c)| c.one_hot()).collect();
        let loss = if outputs.iter().flatten().all(|p| p.is_finite()) {
            cross_entropy_loss(&LossBatch::new(targets.clone(), outputs.clone())?)
        } else {
            f64::NAN
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, loss });
        }

        let n = batch.len();
        let grad: Vec<f64> = outputs
            .iter()
            .zip(&targets)
            .flat_map(|(o, t)| softmax_cross_entropy_grad(o, t, n))
            .collect();
        let grads = self.network.backward(&tape, &Tensor::new(vec![n, NUM_CLASSES], grad)?)?;
        drop(tape);
        rmsprop_step(self.network.params_mut(), &grads, &mut self.state, &self.config)?;
        self.loss_trace.push(loss);
        Ok(loss)
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            network: self.network,
            loss_trace: self.loss_trace,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Batch loss of every iteration, before that iteration's update.
    pub loss_trace: Vec<f64>,
}

/// Trains a fresh network for `config.iterations` updates.
pub fn train_cnn(data: &FaceDataset, spec: NetworkSpec, config: &OptimizerConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(spec, config.clone())?;
    for i in 0..config.iterations {
        let loss = trainer.step(data)?;
        if i % 10 == 0 || i + 1 == config.iterations {
            log::info!("iteration {i}: loss {loss:.6}");
        }
    }
    Ok(trainer.finish())
}

/// `iteration,loss` CSV; losses use the shortest representation that round-trips.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// Inference-mode predicted class for every face.
pub fn predict_classes(network: &Network, data: &FaceDataset) -> Result<Vec<Emotion>> {
    data.iter().map(|(face, _)| Ok(network.predict(face)?.argmax())).collect()
}

/// Fraction of faces whose inference-mode prediction matches the label.
pub fn accuracy(network: &Network, data: &FaceDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let predicted = predict_classes(network, data)?;
    let correct = predicted.iter().zip(data.iter()).filter(|(p, (_, l))| *p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::alexnet_variant([8, 8, 3], [4, 4, 4], 8)
    }

    fn toy_data() -> FaceDataset {
        let mut ds = FaceDataset::default();
        for class in Emotion::ALL {
            for k in 0..4 {
                let face = Tensor::from_fn(&[8, 8, 3], |i| {
                    let ch = i % 3;
                    if ch == class.index() { 0.8 + 0.02 * k as f64 } else { 0.1 }
                });
                ds.push(face, class).unwrap();
            }
        }
        ds
    }

    #[test]
    fn defaults_match_training_regime() {
        let c = OptimizerConfig::default();
        assert_eq!((c.learning_rate, c.decay, c.epsilon), (1e-3, 0.9, 1e-10));
        assert_eq!((c.iterations, c.batch_size, c.per_class), (1500, 63, 21));
        c.validate().unwrap();
        assert!(OptimizerConfig { batch_size: 60, ..c }.validate().is_err());
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cfg = OptimizerConfig { iterations: 0, seed: 4, ..Default::default() };
        let out = train_cnn(&toy_data(), tiny_spec(), &cfg).unwrap();
        let init = init_network(tiny_spec(), &mut substream(4, INIT_STREAM)).unwrap();
        assert_eq!(out.network, init);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn seeded_runs_replay_bit_for_bit() {
        let cfg = OptimizerConfig { iterations: 5, seed: 9, ..Default::default() }.with_per_class(3);
        let a = train_cnn(&toy_data(), tiny_spec(), &cfg).unwrap();
        let b = train_cnn(&toy_data(), tiny_spec(), &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_trace), bits(&b.loss_trace));
        for (p, q) in a.network.params().iter().zip(b.network.params()) {
            assert_eq!(bits(p.data()), bits(q.data()));
        }
    }

    #[test]
    fn accumulators_stay_non_negative() {
        let cfg = OptimizerConfig { seed: 1, ..Default::default() }.with_per_class(2);
        let mut trainer = Trainer::new(tiny_spec(), cfg).unwrap();
        let data = toy_data();
        for _ in 0..3 {
            trainer.step(&data).unwrap();
            for s in trainer.rms_state().accumulators() {
                assert!(s.data().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn diverged_training_reports_iteration() {
        let cfg = OptimizerConfig { seed: 1, ..Default::default() }.with_per_class(2);
        let mut trainer = Trainer::new(tiny_spec(), cfg).unwrap();
        let last = trainer.network.params().len() - 1;
        trainer.network.params_mut()[last].data_mut()[0] = f64::NAN;
        match trainer.step(&toy_data()) {
            Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn csv_trace() {
        assert_eq!(loss_trace_csv(&[0.5, 0.25]), "iteration,loss\n0,0.5\n1,0.25\n");
    }
}
