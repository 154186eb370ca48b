//! Fully connected layer.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{fan_in_uniform, HasTensors, Scalar, TensorKind};

pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
    cache_input: Option<Array2<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            weight: fan_in_uniform((out_dim, in_dim), in_dim, rng),
            bias: Array1::zeros(out_dim),
            grad_weight: Array2::zeros((out_dim, in_dim)),
            grad_bias: Array1::zeros(out_dim),
            cache_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `x`: `(batch, in)`. Caches the input when `train` for backward.
    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        if train {
            self.cache_input = Some(x.clone());
        }
        y
    }

    /// `grad_out`: `(batch, out)`. Accumulates parameter gradients, returns
    /// the input gradient.
    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let x = self.cache_input.as_ref().expect("forward(train) before backward");
        self.grad_weight = &self.grad_weight + &grad_out.t().dot(x);
        self.grad_bias = &self.grad_bias + &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

impl<F: Scalar> HasTensors<F> for Dense<F> {
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>)) {
        let wshape = self.weight.shape().to_vec();
        f(
            TensorKind::Param,
            "weight",
            &wshape,
            self.weight.as_slice_mut().unwrap(),
            Some(self.grad_weight.as_slice_mut().unwrap()),
        );
        let bshape = self.bias.shape().to_vec();
        f(
            TensorKind::Param,
            "bias",
            &bshape,
            self.bias.as_slice_mut().unwrap(),
            Some(self.grad_bias.as_slice_mut().unwrap()),
        );
    }
}
