//! Per-channel normalization with learnable scale/shift and tracked running
//! statistics: 4 values per channel (gamma, beta, running mean, running
//! variance), of which gamma/beta are trainable.
//!
//! Training mode normalizes by batch statistics and updates the running
//! stats; inference mode uses the tracked stats and is deterministic.

use ndarray::{Array1, Array4};

use super::{c, HasTensors, Scalar, TensorKind};

pub struct ChannelNorm<F> {
    pub channels: usize,
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub grad_gamma: Array1<F>,
    pub grad_beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: F,
    pub eps: F,
    cache: Option<Cache<F>>,
}

struct Cache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
    count: usize,
}

impl<F: Scalar> ChannelNorm<F> {
    pub fn new(channels: usize) -> Self {
        ChannelNorm {
            channels,
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            momentum: c(0.1),
            eps: c(1e-5),
            cache: None,
        }
    }

    /// Trainable plus tracked values: 4 per channel.
    pub fn param_count(&self) -> usize {
        4 * self.channels
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        debug_assert_eq!(ch, self.channels);
        let mut out = Array4::<F>::zeros(x.raw_dim());
        if train {
            let count = b * h * w;
            let n = c::<F>(count as f64);
            let mut xhat = Array4::<F>::zeros(x.raw_dim());
            let mut inv_std = Array1::<F>::zeros(ch);
            for ci in 0..ch {
                let mut sum = F::zero();
                let mut sumsq = F::zero();
                for bi in 0..b {
                    for v in x.index_axis(ndarray::Axis(0), bi).index_axis(ndarray::Axis(0), ci).iter() {
                        sum += *v;
                        sumsq += *v * *v;
                    }
                }
                let mean = sum / n;
                let var = (sumsq / n - mean * mean).max(F::zero());
                let istd = F::one() / (var + self.eps).sqrt();
                inv_std[ci] = istd;
                let g = self.gamma[ci];
                let be = self.beta[ci];
                for bi in 0..b {
                    for ((xo, xh), xv) in out
                        .index_axis_mut(ndarray::Axis(0), bi)
                        .index_axis_mut(ndarray::Axis(0), ci)
                        .iter_mut()
                        .zip(xhat.index_axis_mut(ndarray::Axis(0), bi).index_axis_mut(ndarray::Axis(0), ci).iter_mut())
                        .zip(x.index_axis(ndarray::Axis(0), bi).index_axis(ndarray::Axis(0), ci).iter())
                    {
                        let xn = (*xv - mean) * istd;
                        *xh = xn;
                        *xo = g * xn + be;
                    }
                }
                let m = self.momentum;
                self.running_mean[ci] = (F::one() - m) * self.running_mean[ci] + m * mean;
                self.running_var[ci] = (F::one() - m) * self.running_var[ci] + m * var;
            }
            self.cache = Some(Cache { xhat, inv_std, count });
        } else {
            for ci in 0..ch {
                let istd = F::one() / (self.running_var[ci] + self.eps).sqrt();
                let mean = self.running_mean[ci];
                let g = self.gamma[ci];
                let be = self.beta[ci];
                for bi in 0..b {
                    for (xo, xv) in out
                        .index_axis_mut(ndarray::Axis(0), bi)
                        .index_axis_mut(ndarray::Axis(0), ci)
                        .iter_mut()
                        .zip(x.index_axis(ndarray::Axis(0), bi).index_axis(ndarray::Axis(0), ci).iter())
                    {
                        *xo = g * (*xv - mean) * istd + be;
                    }
                }
            }
        }
        out
    }

    /// Backward through the batch statistics (training mode).
    pub fn backward(&mut self, grad_out: &Array4<F>) -> Array4<F> {
        let cache = self.cache.take().expect("forward(train) before backward");
        let (b, ch) = (grad_out.shape()[0], grad_out.shape()[1]);
        let n = c::<F>(cache.count as f64);
        let mut gx = Array4::<F>::zeros(grad_out.raw_dim());
        for ci in 0..ch {
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for bi in 0..b {
                for (dy, xh) in grad_out
                    .index_axis(ndarray::Axis(0), bi)
                    .index_axis(ndarray::Axis(0), ci)
                    .iter()
                    .zip(cache.xhat.index_axis(ndarray::Axis(0), bi).index_axis(ndarray::Axis(0), ci).iter())
                {
                    sum_dy += *dy;
                    sum_dy_xhat += *dy * *xh;
                }
            }
            self.grad_gamma[ci] += sum_dy_xhat;
            self.grad_beta[ci] += sum_dy;
            let scale = self.gamma[ci] * cache.inv_std[ci] / n;
            for bi in 0..b {
                for ((gxo, dy), xh) in gx
                    .index_axis_mut(ndarray::Axis(0), bi)
                    .index_axis_mut(ndarray::Axis(0), ci)
                    .iter_mut()
                    .zip(grad_out.index_axis(ndarray::Axis(0), bi).index_axis(ndarray::Axis(0), ci).iter())
                    .zip(cache.xhat.index_axis(ndarray::Axis(0), bi).index_axis(ndarray::Axis(0), ci).iter())
                {
                    *gxo = scale * (n * *dy - sum_dy - *xh * sum_dy_xhat);
                }
            }
        }
        gx
    }
}

impl<F: Scalar> HasTensors<F> for ChannelNorm<F> {
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>)) {
        let shape = vec![self.channels];
        f(
            TensorKind::Param,
            "gamma",
            &shape,
            self.gamma.as_slice_mut().unwrap(),
            Some(self.grad_gamma.as_slice_mut().unwrap()),
        );
        f(
            TensorKind::Param,
            "beta",
            &shape,
            self.beta.as_slice_mut().unwrap(),
            Some(self.grad_beta.as_slice_mut().unwrap()),
        );
        f(TensorKind::Tracked, "running_mean", &shape, self.running_mean.as_slice_mut().unwrap(), None);
        f(TensorKind::Tracked, "running_var", &shape, self.running_var.as_slice_mut().unwrap(), None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_batch() {
        let mut norm = ChannelNorm::<f64>::new(2);
        let x = Array4::from_shape_fn((4, 2, 3, 3), |(b, ci, y, xx)| (b + ci * 2 + y + xx) as f64 * 0.5);
        let y = norm.forward(&x, true);
        for ci in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|bi| {
                y.index_axis(ndarray::Axis(0), bi)
                    .index_axis(ndarray::Axis(0), ci)
                    .iter()
                    .copied()
                    .collect::<Vec<_>>()
            }).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_uses_tracked_stats_and_is_deterministic() {
        let mut norm = ChannelNorm::<f64>::new(1);
        norm.running_mean[0] = 2.0;
        norm.running_var[0] = 4.0;
        let x = Array4::from_elem((1, 1, 2, 2), 4.0);
        let y1 = norm.forward(&x, false);
        let y2 = norm.forward(&x, false);
        assert_eq!(y1, y2);
        // (4 - 2) / sqrt(4 + eps) ~ 1.0
        assert!((y1[[0, 0, 0, 0]] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn tracked_param_count_is_four_per_channel() {
        let norm = ChannelNorm::<f64>::new(64);
        assert_eq!(norm.param_count(), 256);
        assert_eq!(ChannelNorm::<f64>::new(3).param_count(), 12);
    }
}
