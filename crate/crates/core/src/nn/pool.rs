//! Max pooling, 3x3 window, stride 3, ceiling mode (partial windows at the
//! border are kept), matching the encoder's 100 -> 34 -> 12 -> 4 -> 2 -> 1
//! spatial trace.

use ndarray::Array4;

use super::Scalar;

pub const POOL_SIZE: usize = 3;
pub const POOL_STRIDE: usize = 3;

/// Output spatial size under ceiling-mode pooling.
pub fn pooled_size(n: usize) -> usize {
    n.div_ceil(POOL_STRIDE)
}

pub struct MaxPool {
    /// Flat input index of each output's argmax, for backward.
    cache_argmax: Option<(Vec<usize>, Vec<usize>)>, // (indices, input shape as [b,c,h,w] via second vec)
}

impl Default for MaxPool {
    fn default() -> Self {
        MaxPool { cache_argmax: None }
    }
}

impl MaxPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (pooled_size(h), pooled_size(w));
        let mut out = Array4::<F>::zeros((b, c, oh, ow));
        let mut argmax = vec![0usize; b * c * oh * ow];
        let xs = x.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                let obase = (bi * c + ci) * oh * ow;
                for oy in 0..oh {
                    let y0 = oy * POOL_STRIDE;
                    let y1 = (y0 + POOL_SIZE).min(h);
                    for ox in 0..ow {
                        let x0 = ox * POOL_STRIDE;
                        let x1 = (x0 + POOL_SIZE).min(w);
                        let mut best = xs[base + y0 * w + x0];
                        let mut best_idx = base + y0 * w + x0;
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                let idx = base + yy * w + xx;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        os[obase + oy * ow + ox] = best;
                        argmax[obase + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        if train {
            self.cache_argmax = Some((argmax, vec![b, c, h, w]));
        }
        out
    }

    pub fn backward<F: Scalar>(&mut self, grad_out: &Array4<F>) -> Array4<F> {
        let (argmax, shape) = self.cache_argmax.take().expect("forward(train) before backward");
        let mut gx = Array4::<F>::zeros((shape[0], shape[1], shape[2], shape[3]));
        let gs = gx.as_slice_mut().unwrap();
        for (g, &idx) in grad_out.iter().zip(argmax.iter()) {
            gs[idx] += *g;
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceiling_mode_size_chain() {
        // The encoder's documented spatial trace.
        let mut n = 100;
        let mut trace = vec![n];
        for _ in 0..5 {
            n = pooled_size(n);
            trace.push(n);
        }
        assert_eq!(trace, vec![100, 34, 12, 4, 2, 1]);
    }

    #[test]
    fn picks_window_max_and_routes_gradient() {
        let mut pool = MaxPool::new();
        let mut x = Array4::<f64>::zeros((1, 1, 4, 4));
        x[[0, 0, 0, 1]] = 5.0;
        x[[0, 0, 3, 3]] = 7.0; // partial border window
        let y = pool.forward(&x, true);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 7.0);

        let mut g = Array4::<f64>::zeros((1, 1, 2, 2));
        g[[0, 0, 0, 0]] = 1.0;
        g[[0, 0, 1, 1]] = 2.0;
        let gx = pool.backward(&g);
        assert_eq!(gx[[0, 0, 0, 1]], 1.0);
        assert_eq!(gx[[0, 0, 3, 3]], 2.0);
        assert_eq!(gx.sum(), 3.0);
    }
}
