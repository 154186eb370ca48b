//! 2-D convolution, stride 1, same padding, via im2col + GEMM.
//!
//! Even kernels pad asymmetrically (extra pixel after), so output size
//! always equals input size. Batch work is parallelized over fixed-size
//! sample chunks; weight-gradient partials are reduced in chunk order so
//! results do not depend on the thread count.

use ndarray::{Array1, Array2, Array4, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{chunk_size, fan_in_uniform, HasTensors, Scalar, TensorKind};

pub struct Conv2d<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Flattened kernel bank, `(out_c, in_c * k * k)`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
    /// When false, `backward` skips the input-gradient pass (first layer).
    pub needs_input_grad: bool,
    cache_input: Option<Array4<F>>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let cols = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: fan_in_uniform((out_channels, cols), cols, rng),
            bias: Array1::zeros(out_channels),
            grad_weight: Array2::zeros((out_channels, cols)),
            grad_bias: Array1::zeros(out_channels),
            needs_input_grad: true,
            cache_input: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn pad_before(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Lay out one sample as a `(h*w, in_c*k*k)` patch matrix.
    fn im2col(&self, x: &ArrayView3<F>, col: &mut Array2<F>) {
        let (c_in, h, w) = (self.in_channels, x.shape()[1], x.shape()[2]);
        let k = self.kernel;
        let pb = self.pad_before() as isize;
        col.fill(F::zero());
        let cs = col.as_slice_mut().unwrap();
        let xs = x.as_slice().unwrap();
        let row_len = c_in * k * k;
        for oy in 0..h {
            for c in 0..c_in {
                let x_chan = &xs[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let sy = oy as isize + ky as isize - pb;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &x_chan[sy as usize * w..(sy as usize + 1) * w];
                    for kx in 0..k {
                        let col_idx = (c * k + ky) * k + kx;
                        let dx = kx as isize - pb;
                        // valid ox range: 0 <= ox+dx < w
                        let ox_start = (-dx).max(0) as usize;
                        let ox_end = (w as isize - dx).min(w as isize) as usize;
                        for ox in ox_start..ox_end {
                            cs[(oy * w + ox) * row_len + col_idx] = src_row[(ox as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }

    /// Scatter a `(h*w, in_c*k*k)` gradient matrix back onto the input grid.
    fn col2im(&self, gcol: &Array2<F>, gx: &mut ndarray::ArrayViewMut3<F>) {
        let (c_in, h, w) = (self.in_channels, gx.shape()[1], gx.shape()[2]);
        let k = self.kernel;
        let pb = self.pad_before() as isize;
        let gs = gcol.as_slice().unwrap();
        let out = gx.as_slice_mut().unwrap();
        let row_len = c_in * k * k;
        for oy in 0..h {
            for c in 0..c_in {
                for ky in 0..k {
                    let sy = oy as isize + ky as isize - pb;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_base = c * h * w + sy as usize * w;
                    for kx in 0..k {
                        let col_idx = (c * k + ky) * k + kx;
                        let dx = kx as isize - pb;
                        let ox_start = (-dx).max(0) as usize;
                        let ox_end = (w as isize - dx).min(w as isize) as usize;
                        for ox in ox_start..ox_end {
                            out[dst_base + (ox as isize + dx) as usize] += gs[(oy * w + ox) * row_len + col_idx];
                        }
                    }
                }
            }
        }
    }

    /// `x`: `(batch, in_c, h, w)` -> `(batch, out_c, h, w)`.
    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let mut out = Array4::<F>::zeros((b, self.out_channels, h, w));
        let cs = chunk_size(b);
        let in_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), cs).collect();
        let mut out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), cs).collect();
        out_chunks.par_iter_mut().zip(in_chunks.par_iter()).for_each(|(oc, ic)| {
            let mut col = Array2::<F>::zeros((h * w, self.in_channels * self.kernel * self.kernel));
            for (mut o_sample, x_sample) in oc.outer_iter_mut().zip(ic.outer_iter()) {
                self.im2col(&x_sample, &mut col);
                // (h*w, cols) x (cols, out_c)
                let y = col.dot(&self.weight.t());
                for (ch, mut o_chan) in o_sample.outer_iter_mut().enumerate() {
                    let bias = self.bias[ch];
                    let os = o_chan.as_slice_mut().unwrap();
                    for (i, v) in y.column(ch).iter().enumerate() {
                        os[i] = *v + bias;
                    }
                }
            }
        });
        if train {
            self.cache_input = Some(x.clone());
        }
        out
    }

    /// `grad_out`: `(batch, out_c, h, w)`. Accumulates weight/bias grads and
    /// returns the input gradient (zeros if `needs_input_grad` is false).
    pub fn backward(&mut self, grad_out: &Array4<F>) -> Array4<F> {
        let x = self.cache_input.take().expect("forward(train) before backward");
        let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let cols = self.in_channels * self.kernel * self.kernel;
        let mut gx = Array4::<F>::zeros(x.raw_dim());
        let cs = chunk_size(b);
        let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), cs).collect();
        let g_chunks: Vec<_> = grad_out.axis_chunks_iter(Axis(0), cs).collect();
        let mut gx_chunks: Vec<_> = gx.axis_chunks_iter_mut(Axis(0), cs).collect();

        let partials: Vec<(Array2<F>, Array1<F>)> = gx_chunks
            .par_iter_mut()
            .zip(x_chunks.par_iter().zip(g_chunks.par_iter()))
            .map(|(gxc, (xc, gc))| {
                let mut gw = Array2::<F>::zeros((self.out_channels, cols));
                let mut gb = Array1::<F>::zeros(self.out_channels);
                let mut col = Array2::<F>::zeros((h * w, cols));
                let mut gmat = Array2::<F>::zeros((h * w, self.out_channels));
                for ((mut gx_sample, x_sample), g_sample) in
                    gxc.outer_iter_mut().zip(xc.outer_iter()).zip(gc.outer_iter())
                {
                    // (out_c, h, w) -> (h*w, out_c)
                    for (ch, g_chan) in g_sample.outer_iter().enumerate() {
                        let gsl = g_chan.as_slice().unwrap();
                        let mut acc = F::zero();
                        for (i, &v) in gsl.iter().enumerate() {
                            gmat[[i, ch]] = v;
                            acc += v;
                        }
                        gb[ch] += acc;
                    }
                    self.im2col(&x_sample, &mut col);
                    gw = gw + gmat.t().dot(&col);
                    if self.needs_input_grad {
                        let gcol = gmat.dot(&self.weight);
                        self.col2im(&gcol, &mut gx_sample);
                    }
                }
                (gw, gb)
            })
            .collect();

        // Reduce partials in chunk order: deterministic for any thread count.
        for (gw, gb) in partials {
            self.grad_weight = &self.grad_weight + &gw;
            self.grad_bias = &self.grad_bias + &gb;
        }
        gx
    }
}

impl<F: Scalar> HasTensors<F> for Conv2d<F> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Direct convolution reference for small cases.
    fn conv_ref(x: &Array4<f64>, w: &Array2<f64>, b: &Array1<f64>, in_c: usize, out_c: usize, k: usize) -> Array4<f64> {
        let (n, _, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let pb = (k - 1) / 2;
        let mut out = Array4::<f64>::zeros((n, out_c, h, wd));
        for s in 0..n {
            for oc in 0..out_c {
                for oy in 0..h {
                    for ox in 0..wd {
                        let mut acc = b[oc];
                        for c in 0..in_c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = oy as isize + ky as isize - pb as isize;
                                    let sx = ox as isize + kx as isize - pb as isize;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < wd as isize {
                                        acc += x[[s, c, sy as usize, sx as usize]]
                                            * w[[oc, (c * k + ky) * k + kx]];
                                    }
                                }
                            }
                        }
                        out[[s, oc, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution_odd_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |(a, b, c, d)| ((a + 2 * b + 3 * c + d) % 5) as f64 * 0.2 - 0.4);
        let got = conv.forward(&x, false);
        let want = conv_ref(&x, &conv.weight, &conv.bias, 2, 3, 3);
        let diff = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn matches_direct_convolution_even_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv2d::<f64>::new(3, 2, 2, &mut rng);
        let x = Array4::from_shape_fn((1, 3, 6, 6), |(_, b, c, d)| (b as f64 - c as f64 + d as f64) * 0.1);
        let got = conv.forward(&x, false);
        let want = conv_ref(&x, &conv.weight, &conv.bias, 3, 2, 2);
        let diff = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn output_preserves_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [1usize, 2, 3, 7] {
            let mut conv = Conv2d::<f64>::new(1, 1, k, &mut rng);
            let x = Array4::<f64>::zeros((1, 1, 10, 10));
            let y = conv.forward(&x, false);
            assert_eq!(y.shape(), &[1, 1, 10, 10], "kernel {k}");
        }
    }

    #[test]
    fn deterministic_across_batch_layouts() {
        // Same samples, different batch sizes: per-sample outputs identical.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut conv = Conv2d::<f64>::new(2, 4, 3, &mut rng);
        let x = Array4::from_shape_fn((9, 2, 7, 7), |(a, b, c, d)| ((a * 31 + b * 7 + c * 3 + d) % 11) as f64 * 0.1);
        let full = conv.forward(&x, false);
        for s in 0..9 {
            let one = x.slice(ndarray::s![s..s + 1, .., .., ..]).to_owned();
            let y = conv.forward(&one, false);
            let diff = (&y.index_axis(Axis(0), 0) - &full.index_axis(Axis(0), s))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff == 0.0, "sample {s} differs by {diff}");
        }
    }
}
