use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};
use crate::tensor::Tensor;

/// Half-width of the Xavier/Glorot uniform range, `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Tensor of Xavier-uniform samples drawn from `rng`.
pub fn xavier_fill<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Config(format!("Xavier init needs positive fans, got {fan_in}/{fan_out}")));
    }
    let bound = xavier_bound(fan_in, fan_out);
    Ok(Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound)))
}

/// Tensor of Xavier-uniform samples from a generator seeded with `seed`.
pub fn xavier_init(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    xavier_fill(shape, fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Fresh network: Xavier-uniform weights, zero biases.
pub fn init_network<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Network> {
    let params = spec
        .param_shapes()?
        .into_iter()
        .map(|p| {
            if p.is_bias {
                Ok(Tensor::zeros(&p.shape))
            } else {
                xavier_fill(&p.shape, p.fan_in, p.fan_out, rng)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(spec, params)
}
