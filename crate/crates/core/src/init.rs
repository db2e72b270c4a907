use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

/// Glorot/Xavier uniform for a `fan_in × fan_out` matrix.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = if fan_in + fan_out == 0 {
        0.0
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    };
    let data = (0..fan_in * fan_out)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}
