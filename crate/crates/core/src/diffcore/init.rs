use rand::Rng;

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Glorot/Xavier uniform initialisation.
///
/// For a `rows x cols` matrix `fan_out = rows` and `fan_in = cols`; entries
/// are drawn from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    let (fan_out, fan_in) = match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            return Err(Error::Config(format!(
                "xavier init expects 1-D or 2-D shape, got {shape:?}"
            )))
        }
    };
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Config(format!(
            "xavier init with zero fan: {shape:?}"
        )));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = fan_in * fan_out;
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
