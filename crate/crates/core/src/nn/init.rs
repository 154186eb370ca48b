//! Weight initialization.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;

/// Fan-in-scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
/// Samples are drawn in f64 so the stream is identical for every element
/// type instantiation.
pub fn fan_in_uniform<F: Scalar, D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    shape: Sh,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array<F, D> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || F::from_f64(rng.gen_range(-bound..bound)))
}
