//! Minimal deterministic neural-network stack.
//!
//! Layers carry their own parameters, gradient buffers and forward caches;
//! backward accumulates into the gradient buffers. Everything is generic
//! over the element type: production models train in `f32`, verification
//! (finite-difference gradient checks) instantiates the same code in `f64`.
//!
//! Determinism contract: given a seed, results are identical across runs
//! and thread counts. Batch-parallel work reduces in a fixed chunk order.

mod adam;
mod conv;
mod dense;
pub mod gradcheck;
mod init;
mod lstm;
mod norm;
mod pool;

pub use adam::Adam;
pub use conv::Conv2d;
pub use dense::Dense;
pub use init::fan_in_uniform;
pub use lstm::{cell_update, LstmCell};
pub use norm::ChannelNorm;
pub use pool::{pooled_size, MaxPool};

use ndarray::{Array, Dimension};

/// Element type bound for all network code.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_val(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_val(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_val(self) -> f64 {
        self
    }
}

/// Shorthand for embedding literal constants in generic code.
pub fn c<F: Scalar>(v: f64) -> F {
    F::from_f64(v)
}

/// Numerically stable logistic function.
pub fn sigmoid<F: Scalar>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// In-place ReLU used by the layer stacks.
pub fn relu_inplace<F: Scalar, D: Dimension>(a: &mut Array<F, D>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Distinguishes trainable parameters from tracked (non-optimized) state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    Tracked,
}

/// Uniform access to a layer's tensors for optimizers, gradient checks and
/// checkpoints. Visit order is fixed per type.
pub trait HasTensors<F: Scalar> {
    /// Visit `(kind, name, shape, values, grads)`; `grads` is present for
    /// parameters and absent for tracked state.
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>));
}

/// Total number of trainable parameter coordinates.
pub fn param_count<F: Scalar>(model: &mut dyn HasTensors<F>) -> usize {
    let mut n = 0;
    model.visit_tensors(&mut |kind, _, _, vals, _| {
        if kind == TensorKind::Param {
            n += vals.len();
        }
    });
    n
}

pub fn flatten_params<F: Scalar>(model: &mut dyn HasTensors<F>) -> Vec<F> {
    let mut out = Vec::new();
    model.visit_tensors(&mut |kind, _, _, vals, _| {
        if kind == TensorKind::Param {
            out.extend_from_slice(vals);
        }
    });
    out
}

pub fn set_params_flat<F: Scalar>(model: &mut dyn HasTensors<F>, flat: &[F]) {
    let mut pos = 0;
    model.visit_tensors(&mut |kind, _, _, vals, _| {
        if kind == TensorKind::Param {
            vals.copy_from_slice(&flat[pos..pos + vals.len()]);
            pos += vals.len();
        }
    });
    assert_eq!(pos, flat.len(), "parameter count mismatch");
}

pub fn flatten_grads<F: Scalar>(model: &mut dyn HasTensors<F>) -> Vec<F> {
    let mut out = Vec::new();
    model.visit_tensors(&mut |kind, _, _, _, grads| {
        if kind == TensorKind::Param {
            out.extend_from_slice(grads.expect("params carry grads"));
        }
    });
    out
}

pub fn zero_grads<F: Scalar>(model: &mut dyn HasTensors<F>) {
    model.visit_tensors(&mut |_, _, _, _, grads| {
        if let Some(g) = grads {
            g.fill(F::zero());
        }
    });
}

/// Fixed chunk count for batch-parallel gradient reduction. Constant (not
/// tied to the thread pool) so sums are identical on any machine.
pub(crate) const GRAD_CHUNKS: usize = 4;

pub(crate) fn chunk_size(batch: usize) -> usize {
    batch.div_ceil(GRAD_CHUNKS).max(1)
}
