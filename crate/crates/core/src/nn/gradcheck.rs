//! Central-finite-difference gradient verification.
//!
//! Used by the test suites to compare analytic gradients against numeric
//! ones on miniature models. Runs in `f64`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{flatten_grads, flatten_params, set_params_flat, zero_grads, HasTensors};

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// Symmetric relative error with an absolute floor for near-zero pairs.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = (a.abs() + b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Check analytic gradients of `model` against central differences of
/// `loss_fn` on up to `n_coords` randomly chosen parameter coordinates.
///
/// `loss_fn` must run a full forward pass and return the loss;
/// `backward_fn` must run forward + backward, leaving gradients in the
/// model's buffers.
pub fn check_gradients<M, L, B>(
    model: &mut M,
    mut loss_fn: L,
    mut backward_fn: B,
    n_coords: usize,
    eps: f64,
    seed: u64,
) -> GradCheckReport
where
    M: HasTensors<f64>,
    L: FnMut(&mut M) -> f64,
    B: FnMut(&mut M),
{
    zero_grads(model);
    backward_fn(model);
    let analytic = flatten_grads(model);
    let params = flatten_params(model);

    let mut coords: Vec<usize> = (0..params.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(n_coords.min(params.len()));

    let mut max_rel_err = 0.0f64;
    let mut worst = 0usize;
    for &k in &coords {
        let mut pp = params.clone();
        pp[k] = params[k] + eps;
        set_params_flat(model, &pp);
        let lp = loss_fn(model);
        pp[k] = params[k] - eps;
        set_params_flat(model, &pp);
        let lm = loss_fn(model);
        let numeric = (lp - lm) / (2.0 * eps);
        let err = relative_error(analytic[k], numeric);
        if err > max_rel_err {
            max_rel_err = err;
            worst = k;
        }
    }
    set_params_flat(model, &params);
    GradCheckReport { checked: coords.len(), max_rel_err, worst_coord: worst }
}
