use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// `(fan_in, fan_out)` for `[out, in, k, k]` convolution weights or `[out, in]` matrices.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
    }
}

pub fn glorot_limit(shape: &[usize]) -> f64 {
    let (fi, fo) = fans(shape);
    (6.0 / (fi + fo) as f64).sqrt()
}

pub fn glorot_uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let a = glorot_limit(shape);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::from_vec(shape.to_vec(), data)
}

pub fn glorot_init(shape: &[usize], seed: u64) -> Tensor {
    glorot_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}
