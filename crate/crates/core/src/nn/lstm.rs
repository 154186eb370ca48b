//! LSTM cell with forget gate, write gate and candidate write.
//!
//! The state update is `s_t = f_t (*) s_{t-1} + i_t (*) s_tilde_t`, with
//! `h_t = tanh(s_t)`. Gates are computed from the step input and the
//! previous hidden state. Masked steps leave both the cell state and the
//! hidden state bit-identical to the previous step, and contribute no
//! parameter gradients.

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;

use super::{fan_in_uniform, sigmoid, HasTensors, Scalar, TensorKind};

/// The raw state update: `f (*) s_prev + i (*) s_tilde`.
pub fn cell_update<F: Scalar>(
    f: &ArrayView1<F>,
    i: &ArrayView1<F>,
    s_tilde: &ArrayView1<F>,
    s_prev: &ArrayView1<F>,
) -> Array1<F> {
    let mut out = Array1::zeros(f.len());
    for k in 0..f.len() {
        out[k] = f[k] * s_prev[k] + i[k] * s_tilde[k];
    }
    out
}

pub struct LstmCell<F> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Stacked gate input weights `(3*hidden, input)`: forget, write, candidate.
    pub wx: Array2<F>,
    /// Stacked gate recurrent weights `(3*hidden, hidden)`.
    pub wh: Array2<F>,
    pub bias: Array1<F>,
    pub grad_wx: Array2<F>,
    pub grad_wh: Array2<F>,
    pub grad_bias: Array1<F>,
    cache: Option<SeqCache<F>>,
}

struct StepCache<F> {
    h_prev: Array2<F>,
    s_prev: Array2<F>,
    f: Array2<F>,
    i: Array2<F>,
    s_tilde: Array2<F>,
    /// tanh of the raw (pre-mask) candidate state.
    tanh_s: Array2<F>,
}

struct SeqCache<F> {
    steps: Vec<StepCache<F>>,
}

impl<F: Scalar> LstmCell<F> {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmCell {
            input_dim,
            hidden_dim,
            wx: fan_in_uniform((3 * hidden_dim, input_dim), input_dim, rng),
            wh: fan_in_uniform((3 * hidden_dim, hidden_dim), hidden_dim, rng),
            bias: Array1::zeros(3 * hidden_dim),
            grad_wx: Array2::zeros((3 * hidden_dim, input_dim)),
            grad_wh: Array2::zeros((3 * hidden_dim, hidden_dim)),
            grad_bias: Array1::zeros(3 * hidden_dim),
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.wx.len() + self.wh.len() + self.bias.len()
    }

    /// One step without masking, for inspection and tests.
    /// Returns `(h, s, f, i, s_tilde)`.
    pub fn step(
        &self,
        x: &Array2<F>,
        h_prev: &Array2<F>,
        s_prev: &Array2<F>,
    ) -> (Array2<F>, Array2<F>, Array2<F>, Array2<F>, Array2<F>) {
        let hd = self.hidden_dim;
        let mut z = x.dot(&self.wx.t()) + h_prev.dot(&self.wh.t());
        z += &self.bias;
        let f = z.slice(ndarray::s![.., 0..hd]).mapv(sigmoid);
        let i = z.slice(ndarray::s![.., hd..2 * hd]).mapv(sigmoid);
        let s_tilde = z.slice(ndarray::s![.., 2 * hd..3 * hd]).mapv(|v| v.tanh());
        let s = &f * s_prev + &i * &s_tilde;
        let h = s.mapv(|v| v.tanh());
        (h, s, f, i, s_tilde)
    }

    /// Run a full masked sequence, returning the final hidden state.
    ///
    /// `steps`: `(batch, seq_len, input)`; `mask`: `(batch, seq_len)` of
    /// 0/1 values. A masked step passes state through unchanged.
    pub fn forward(&mut self, steps: &Array3<F>, mask: &Array2<F>, train: bool) -> Array2<F> {
        let (batch, seq_len, _) = (steps.shape()[0], steps.shape()[1], steps.shape()[2]);
        let hd = self.hidden_dim;
        let mut h = Array2::<F>::zeros((batch, hd));
        let mut s = Array2::<F>::zeros((batch, hd));
        let mut caches = Vec::with_capacity(if train { seq_len } else { 0 });
        for t in 0..seq_len {
            let x_t = steps.index_axis(Axis(1), t).to_owned();
            let (h_new, s_new, f, i, s_tilde) = self.step(&x_t, &h, &s);
            let m = mask.index_axis(Axis(1), t);
            let mut h_next = Array2::<F>::zeros((batch, hd));
            let mut s_next = Array2::<F>::zeros((batch, hd));
            for b in 0..batch {
                if m[b] > F::zero() {
                    h_next.row_mut(b).assign(&h_new.row(b));
                    s_next.row_mut(b).assign(&s_new.row(b));
                } else {
                    h_next.row_mut(b).assign(&h.row(b));
                    s_next.row_mut(b).assign(&s.row(b));
                }
            }
            if train {
                caches.push(StepCache {
                    h_prev: h,
                    s_prev: s,
                    f,
                    i,
                    s_tilde,
                    tanh_s: h_new, // tanh of raw candidate state
                });
                h = h_next;
                s = s_next;
            } else {
                h = h_next;
                s = s_next;
            }
        }
        if train {
            self.cache = Some(SeqCache { steps: caches });
        }
        h
    }

    /// Backward through time from the gradient of the final hidden state.
    /// Accumulates parameter gradients; optionally returns gradients with
    /// respect to the step inputs.
    pub fn backward(
        &mut self,
        steps: &Array3<F>,
        mask: &Array2<F>,
        grad_h_final: &Array2<F>,
        need_input_grads: bool,
    ) -> Option<Array3<F>> {
        let cache = self.cache.take().expect("forward(train) before backward");
        let (batch, seq_len, _) = (steps.shape()[0], steps.shape()[1], steps.shape()[2]);
        let hd = self.hidden_dim;
        let mut dh = grad_h_final.clone();
        let mut ds = Array2::<F>::zeros((batch, hd));
        let mut dx_all = need_input_grads.then(|| Array3::<F>::zeros(steps.raw_dim()));

        for t in (0..seq_len).rev() {
            let sc = &cache.steps[t];
            let m = mask.index_axis(Axis(1), t);
            // Total cell-state gradient for unmasked rows.
            let one = F::one();
            let mut ds_total = Array2::<F>::zeros((batch, hd));
            for b in 0..batch {
                for k in 0..hd {
                    let th = sc.tanh_s[[b, k]];
                    ds_total[[b, k]] = ds[[b, k]] + dh[[b, k]] * (one - th * th);
                }
            }
            // Gate pre-activation gradients, zeroed on masked rows.
            let mut dz = Array2::<F>::zeros((batch, 3 * hd));
            for b in 0..batch {
                if m[b] > F::zero() {
                    for k in 0..hd {
                        let dst = ds_total[[b, k]];
                        let f = sc.f[[b, k]];
                        let i = sc.i[[b, k]];
                        let st = sc.s_tilde[[b, k]];
                        dz[[b, k]] = dst * sc.s_prev[[b, k]] * f * (one - f);
                        dz[[b, hd + k]] = dst * st * i * (one - i);
                        dz[[b, 2 * hd + k]] = dst * i * (one - st * st);
                    }
                }
            }
            let x_t = steps.index_axis(Axis(1), t).to_owned();
            self.grad_wx = &self.grad_wx + &dz.t().dot(&x_t);
            self.grad_wh = &self.grad_wh + &dz.t().dot(&sc.h_prev);
            self.grad_bias = &self.grad_bias + &dz.sum_axis(Axis(0));
            if let Some(dx) = dx_all.as_mut() {
                let dxt = dz.dot(&self.wx);
                dx.index_axis_mut(Axis(1), t).assign(&dxt);
            }
            // Propagate to the previous step: pass-through on masked rows.
            let dh_rec = dz.dot(&self.wh);
            let mut dh_prev = Array2::<F>::zeros((batch, hd));
            let mut ds_prev = Array2::<F>::zeros((batch, hd));
            for b in 0..batch {
                if m[b] > F::zero() {
                    for k in 0..hd {
                        dh_prev[[b, k]] = dh_rec[[b, k]];
                        ds_prev[[b, k]] = ds_total[[b, k]] * sc.f[[b, k]];
                    }
                } else {
                    for k in 0..hd {
                        dh_prev[[b, k]] = dh[[b, k]];
                        ds_prev[[b, k]] = ds[[b, k]];
                    }
                }
            }
            dh = dh_prev;
            ds = ds_prev;
        }
        dx_all
    }
}

impl<F: Scalar> HasTensors<F> for LstmCell<F> {
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>)) {
        let wx_shape = self.wx.shape().to_vec();
        f(
            TensorKind::Param,
            "wx",
            &wx_shape,
            self.wx.as_slice_mut().unwrap(),
            Some(self.grad_wx.as_slice_mut().unwrap()),
        );
        let wh_shape = self.wh.shape().to_vec();
        f(
            TensorKind::Param,
            "wh",
            &wh_shape,
            self.wh.as_slice_mut().unwrap(),
            Some(self.grad_wh.as_slice_mut().unwrap()),
        );
        let b_shape = self.bias.shape().to_vec();
        f(
            TensorKind::Param,
            "bias",
            &b_shape,
            self.bias.as_slice_mut().unwrap(),
            Some(self.grad_bias.as_slice_mut().unwrap()),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::SeedableRng;

    #[test]
    fn cell_update_pass_through_gates() {
        // f = 1, i = 0 keeps the previous state.
        let f = arr1(&[1.0, 1.0, 1.0]);
        let i = arr1(&[0.0, 0.0, 0.0]);
        let st = arr1(&[5.0, -3.0, 2.0]);
        let sp = arr1(&[0.25, -0.5, 0.75]);
        let s = cell_update(&f.view(), &i.view(), &st.view(), &sp.view());
        assert_eq!(s, sp);
    }

    #[test]
    fn cell_update_forget_everything() {
        // f = 0 writes only the gated candidate.
        let f = arr1(&[0.0, 0.0]);
        let i = arr1(&[0.5, 1.0]);
        let st = arr1(&[4.0, -2.0]);
        let sp = arr1(&[100.0, 100.0]);
        let s = cell_update(&f.view(), &i.view(), &st.view(), &sp.view());
        assert_eq!(s, arr1(&[2.0, -2.0]));
    }

    #[test]
    fn saturated_gates_approximate_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cell = LstmCell::<f64>::new(2, 2, &mut rng);
        // Saturate: forget-gate bias huge positive, write-gate huge negative.
        cell.wx.fill(0.0);
        cell.wh.fill(0.0);
        cell.bias.fill(0.0);
        cell.bias[0] = 40.0;
        cell.bias[1] = 40.0;
        cell.bias[2] = -40.0;
        cell.bias[3] = -40.0;
        let x = Array2::from_elem((1, 2), 0.3);
        let h = Array2::from_elem((1, 2), 0.1);
        let s = ndarray::arr2(&[[0.7, -0.2]]);
        let (_, s_new, f, i, _) = cell.step(&x, &h, &s);
        assert!(f.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(i.iter().all(|&v| v > 0.0 && v < 1e-15));
        assert!((s_new[[0, 0]] - 0.7).abs() < 1e-12);
        assert!((s_new[[0, 1]] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn masked_step_leaves_state_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cell = LstmCell::<f64>::new(3, 4, &mut rng);
        // Two steps: a real one then a masked one. Final hidden must equal
        // the hidden after the real step exactly.
        let steps = Array3::from_shape_fn((1, 2, 3), |(_, t, k)| (t * 3 + k) as f64 * 0.1 + 0.05);
        let mask_full = ndarray::arr2(&[[1.0, 0.0]]);
        let h2 = cell.forward(&steps, &mask_full, false);

        let one_step = steps.slice(ndarray::s![.., 0..1, ..]).to_owned();
        let mask_one = ndarray::arr2(&[[1.0]]);
        let h1 = cell.forward(&one_step, &mask_one, false);
        assert_eq!(h1, h2);
    }

    #[test]
    fn all_masked_sequence_returns_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut cell = LstmCell::<f64>::new(3, 4, &mut rng);
        let steps = Array3::from_elem((2, 5, 3), 0.9);
        let mask = Array2::zeros((2, 5));
        let h = cell.forward(&steps, &mask, false);
        assert!(h.iter().all(|&v| v == 0.0));
    }
}
