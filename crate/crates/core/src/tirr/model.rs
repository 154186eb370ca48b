//! Model definition and inference paths.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::events::{Side, UserId};
use crate::history::PreferenceHistory;
use crate::imgproc::{pad_and_mask, PaddedSequence};
use crate::nn::{c, relu_inplace, sigmoid, Dense, HasTensors, LstmCell, Scalar, TensorKind};
use crate::siamese::distance;

/// Dimensions of the sequence model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TirrSpec {
    pub seq_len: usize,
    pub step_dim: usize,
    pub hidden_dim: usize,
    /// Candidate branch output width.
    pub cand_dim: usize,
    /// Width of the merged dense layer.
    pub merge_dim: usize,
}

impl TirrSpec {
    /// The full model: 15 steps of 128-d inputs, 128-d LSTM, 128-d candidate
    /// branch, concat to 256, dense to 128, dropout, sigmoid output.
    pub fn full() -> Self {
        TirrSpec { seq_len: 15, step_dim: 128, hidden_dim: 128, cand_dim: 128, merge_dim: 128 }
    }

    /// Miniature variant for gradient verification: 3 steps, hidden dim 4.
    pub fn miniature() -> Self {
        TirrSpec { seq_len: 3, step_dim: 6, hidden_dim: 4, cand_dim: 4, merge_dim: 5 }
    }
}

/// Frozen per-user embeddings produced by the pretrained encoders.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingStore<F> {
    map: HashMap<UserId, Array1<F>>,
}

impl<F: Scalar> EmbeddingStore<F> {
    pub fn new() -> Self {
        EmbeddingStore { map: HashMap::new() }
    }

    pub fn insert(&mut self, user: UserId, embedding: Array1<F>) {
        self.map.insert(user, embedding);
    }

    pub fn get(&self, user: UserId) -> Result<&Array1<F>, ModelError> {
        self.map.get(&user).ok_or(ModelError::MissingEmbedding(user))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Per-step inputs for one history against one candidate: the polarity-signed
/// absolute difference between each remembered face and the candidate's face,
/// in history order (oldest first).
pub fn history_step_vectors<F: Scalar>(
    history: &PreferenceHistory,
    candidate_embedding: &ArrayView1<F>,
    store: &EmbeddingStore<F>,
) -> Result<Vec<Array1<F>>, ModelError> {
    let mut out = Vec::with_capacity(history.len());
    for item in &history.items {
        let emb = store.get(item.target)?;
        let mut d = distance(&emb.view(), candidate_embedding);
        if item.polarity < 0 {
            d.mapv_inplace(|v| -v);
        }
        out.push(d);
    }
    Ok(out)
}

struct ForwardCache<F> {
    steps: Array3<F>,
    mask: Array2<F>,
    cand_pre_relu: Array2<F>, // candidate branch activations (post-relu)
    merge_post_relu: Array2<F>,
    dropout_mask: Option<Array2<F>>,
    probs: Array1<F>,
}

/// The trainable match model. The encoder is not part of this struct: step
/// vectors and candidate embeddings come precomputed from frozen encoders.
pub struct TirrModel<F> {
    pub spec: TirrSpec,
    pub lstm: LstmCell<F>,
    pub cand_dense: Dense<F>,
    pub merge_dense: Dense<F>,
    pub out_dense: Dense<F>,
    pub dropout_rate: f64,
    cache: Option<ForwardCache<F>>,
}

impl<F: Scalar> TirrModel<F> {
    pub fn new(spec: TirrSpec, dropout_rate: f64, rng: &mut ChaCha8Rng) -> Self {
        TirrModel {
            spec,
            lstm: LstmCell::new(spec.step_dim, spec.hidden_dim, rng),
            cand_dense: Dense::new(spec.step_dim, spec.cand_dim, rng),
            merge_dense: Dense::new(spec.hidden_dim + spec.cand_dim, spec.merge_dim, rng),
            out_dense: Dense::new(spec.merge_dim, 1, rng),
            dropout_rate,
            cache: None,
        }
    }

    /// Batched directed scores.
    ///
    /// `steps`: `(n, seq_len, step_dim)`, `mask`: `(n, seq_len)`,
    /// `cand`: `(n, step_dim)` candidate embeddings. With `train` set,
    /// dropout is applied (using `rng`) and caches are kept for backward.
    pub fn forward_batch(
        &mut self,
        steps: &Array3<F>,
        mask: &Array2<F>,
        cand: &Array2<F>,
        train: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Array1<F> {
        let h_seq = self.lstm.forward(steps, mask, train);
        let mut c_act = self.cand_dense.forward(cand, train);
        relu_inplace(&mut c_act);
        let n = h_seq.shape()[0];
        let mut merged = Array2::<F>::zeros((n, self.spec.hidden_dim + self.spec.cand_dim));
        merged.slice_mut(s![.., 0..self.spec.hidden_dim]).assign(&h_seq);
        merged.slice_mut(s![.., self.spec.hidden_dim..]).assign(&c_act);
        let mut m_act = self.merge_dense.forward(&merged, train);
        relu_inplace(&mut m_act);
        let dropout_mask = if train && self.dropout_rate > 0.0 {
            let rng = rng.expect("training with dropout needs an rng");
            let keep = 1.0 - self.dropout_rate;
            let scale = c::<F>(1.0 / keep);
            let mask = Array2::from_shape_simple_fn(m_act.raw_dim(), || {
                if rng.gen_bool(keep) {
                    scale
                } else {
                    F::zero()
                }
            });
            m_act = &m_act * &mask;
            Some(mask)
        } else {
            None
        };
        let z = self.out_dense.forward(&m_act, train);
        let probs = z.index_axis(Axis(1), 0).mapv(sigmoid);
        if train {
            self.cache = Some(ForwardCache {
                steps: steps.clone(),
                mask: mask.clone(),
                cand_pre_relu: c_act,
                merge_post_relu: m_act,
                dropout_mask,
                probs: probs.clone(),
            });
        }
        probs
    }

    /// Backward from per-row gradients of the pre-sigmoid logit.
    pub fn backward_batch(&mut self, grad_z: &Array1<F>) {
        let cache = self.cache.take().expect("forward_batch(train) before backward");
        let n = grad_z.len();
        let gz = grad_z.view().insert_axis(Axis(1)).to_owned();
        let mut g_m = self.out_dense.backward(&gz);
        if let Some(mask) = &cache.dropout_mask {
            g_m = &g_m * mask;
        }
        // ReLU mask from the (post-relu, pre-dropout) merge activations:
        // dropout scaling preserves zero positions, so the cached
        // post-dropout tensor works as the gate too.
        ndarray::Zip::from(&mut g_m).and(&cache.merge_post_relu).for_each(|g, y| {
            if *y <= F::zero() {
                *g = F::zero();
            }
        });
        let g_merged = self.merge_dense.backward(&g_m);
        let g_h = g_merged.slice(s![.., 0..self.spec.hidden_dim]).to_owned();
        let mut g_c = g_merged.slice(s![.., self.spec.hidden_dim..]).to_owned();
        ndarray::Zip::from(&mut g_c).and(&cache.cand_pre_relu).for_each(|g, y| {
            if *y <= F::zero() {
                *g = F::zero();
            }
        });
        let _ = self.cand_dense.backward(&g_c);
        let _ = self.lstm.backward(&cache.steps, &cache.mask, &g_h, false);
        debug_assert_eq!(n, cache.probs.len());
    }

}

impl<F: Scalar> HasTensors<F> for TirrModel<F> {
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>)) {
        self.lstm.visit_tensors(&mut |kind, name, shape, vals, grads| {
            f(kind, &format!("lstm.{name}"), shape, vals, grads);
        });
        self.cand_dense.visit_tensors(&mut |kind, name, shape, vals, grads| {
            f(kind, &format!("cand_dense.{name}"), shape, vals, grads);
        });
        self.merge_dense.visit_tensors(&mut |kind, name, shape, vals, grads| {
            f(kind, &format!("merge_dense.{name}"), shape, vals, grads);
        });
        self.out_dense.visit_tensors(&mut |kind, name, shape, vals, grads| {
            f(kind, &format!("out_dense.{name}"), shape, vals, grads);
        });
    }
}

/// Assemble `(steps, mask)` batch tensors from padded sequences.
pub fn sequence_batch<F: Scalar>(seqs: &[PaddedSequence<F>], spec: &TirrSpec) -> (Array3<F>, Array2<F>) {
    let n = seqs.len();
    let mut steps = Array3::<F>::zeros((n, spec.seq_len, spec.step_dim));
    let mut mask = Array2::<F>::zeros((n, spec.seq_len));
    for (i, seq) in seqs.iter().enumerate() {
        steps.index_axis_mut(Axis(0), i).assign(&seq.steps);
        for (t, &m) in seq.mask.iter().enumerate() {
            mask[[i, t]] = if m { F::one() } else { F::zero() };
        }
    }
    (steps, mask)
}

/// Directed score of one history against one candidate (inference mode).
pub fn directed_score<F: Scalar>(
    model: &mut TirrModel<F>,
    history: &PreferenceHistory,
    candidate: UserId,
    store: &EmbeddingStore<F>,
) -> Result<F, ModelError> {
    let cand_emb = store.get(candidate)?.clone();
    let vectors = history_step_vectors(history, &cand_emb.view(), store)?;
    let views: Vec<_> = vectors.iter().map(|v| v.view()).collect();
    let seq = pad_and_mask(&views).map_err(|_| ModelError::MissingEmbedding(candidate))?;
    let (steps, mask) = sequence_batch(std::slice::from_ref(&seq), &model.spec);
    let cand = cand_emb.insert_axis(Axis(0));
    let p = model.forward_batch(&steps, &mask, &cand, false, None);
    Ok(p[0])
}

/// Reciprocal match probability: the mean of the two directed scores, with
/// the side-X user's direction always evaluated first so the result is
/// bit-identical under argument swap.
pub fn match_probability<F: Scalar>(
    model: &mut TirrModel<F>,
    a: (UserId, &PreferenceHistory),
    b: (UserId, &PreferenceHistory),
    store: &EmbeddingStore<F>,
) -> Result<F, ModelError> {
    let ((x, hist_x), (y, hist_y)) = if a.0.side == Side::X { (a, b) } else { (b, a) };
    let p_xy = directed_score(model, hist_x, y, store)?;
    let p_yx = directed_score(model, hist_y, x, store)?;
    Ok((p_xy + p_yx) * c::<F>(0.5))
}

/// Rank a candidate pool for `user` by match probability, descending, ties
/// broken by candidate id.
pub fn recommend_top_k<F: Scalar>(
    model: &mut TirrModel<F>,
    user: (UserId, &PreferenceHistory),
    pool: &[(UserId, &PreferenceHistory)],
    k: usize,
    store: &EmbeddingStore<F>,
) -> Result<Vec<(UserId, f64)>, ModelError> {
    if pool.is_empty() {
        return Err(ModelError::EmptyPool);
    }
    let mut scored: Vec<(UserId, f64)> = Vec::with_capacity(pool.len());
    for (cand, hist) in pool {
        let p = match_probability(model, user, (*cand, hist), store)?;
        scored.push((*cand, p.to_f64_val()));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{HistoryItem, PreferenceHistory};
    use crate::{EMBED_DIM, SEQ_LEN};
    use rand::SeedableRng;

    fn store_with(users: &[(UserId, f64)]) -> EmbeddingStore<f64> {
        let mut store = EmbeddingStore::new();
        for (u, v) in users {
            store.insert(*u, Array1::from_elem(EMBED_DIM, *v));
        }
        store
    }

    fn empty_history(u: UserId) -> PreferenceHistory {
        PreferenceHistory { owner: u, items: vec![] }
    }

    fn full_model(seed: u64) -> TirrModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TirrModel::new(TirrSpec::full(), 0.4, &mut rng)
    }

    #[test]
    fn empty_history_yields_empty_step_list() {
        let store = store_with(&[(UserId::y(0), 0.5)]);
        let cand = store.get(UserId::y(0)).unwrap().clone();
        let h = empty_history(UserId::x(0));
        assert!(history_step_vectors(&h, &cand.view(), &store).unwrap().is_empty());
    }

    #[test]
    fn candidate_equal_to_liked_history_item_gives_zero_step() {
        let store = store_with(&[(UserId::y(0), 0.3), (UserId::y(1), 0.3)]);
        let cand = store.get(UserId::y(1)).unwrap().clone();
        let h = PreferenceHistory {
            owner: UserId::x(0),
            items: vec![HistoryItem { target: UserId::y(0), polarity: 1, ts: 5 }],
        };
        let v = history_step_vectors(&h, &cand.view(), &store).unwrap();
        assert!(v[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dislike_step_is_negated_like_step() {
        let mut store = EmbeddingStore::new();
        store.insert(UserId::y(0), Array1::from_shape_fn(EMBED_DIM, |i| i as f64 * 0.01));
        store.insert(UserId::y(1), Array1::from_shape_fn(EMBED_DIM, |i| 1.0 - i as f64 * 0.005));
        let cand = store.get(UserId::y(1)).unwrap().clone();
        let liked = PreferenceHistory {
            owner: UserId::x(0),
            items: vec![HistoryItem { target: UserId::y(0), polarity: 1, ts: 1 }],
        };
        let disliked = PreferenceHistory {
            owner: UserId::x(0),
            items: vec![HistoryItem { target: UserId::y(0), polarity: -1, ts: 1 }],
        };
        let vl = history_step_vectors(&liked, &cand.view(), &store).unwrap();
        let vd = history_step_vectors(&disliked, &cand.view(), &store).unwrap();
        for (a, b) in vl[0].iter().zip(vd[0].iter()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn missing_history_target_embedding_errors() {
        let store = store_with(&[(UserId::y(1), 0.2)]);
        let cand = store.get(UserId::y(1)).unwrap().clone();
        let h = PreferenceHistory {
            owner: UserId::x(0),
            items: vec![HistoryItem { target: UserId::y(9), polarity: 1, ts: 0 }],
        };
        assert!(matches!(
            history_step_vectors(&h, &cand.view(), &store),
            Err(ModelError::MissingEmbedding(_))
        ));
    }

    #[test]
    fn empty_histories_score_only_by_candidate() {
        let mut model = full_model(3);
        let store = store_with(&[(UserId::x(0), 0.1), (UserId::x(1), 0.9), (UserId::y(0), 0.4)]);
        // Two different users with empty histories get the same directed
        // score for the same candidate.
        let h0 = empty_history(UserId::x(0));
        let h1 = empty_history(UserId::x(1));
        let s0 = directed_score(&mut model, &h0, UserId::y(0), &store).unwrap();
        let s1 = directed_score(&mut model, &h1, UserId::y(0), &store).unwrap();
        assert_eq!(s0.to_bits(), s1.to_bits());
    }

    #[test]
    fn inference_is_deterministic_despite_dropout_rate() {
        let mut model = full_model(4);
        let store = store_with(&[(UserId::x(0), 0.1), (UserId::y(0), 0.7)]);
        let h = empty_history(UserId::x(0));
        let a = directed_score(&mut model, &h, UserId::y(0), &store).unwrap();
        let b = directed_score(&mut model, &h, UserId::y(0), &store).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn match_probability_is_bit_symmetric() {
        let mut model = full_model(5);
        let mut store = EmbeddingStore::new();
        for i in 0..4 {
            store.insert(UserId::x(i), Array1::from_shape_fn(EMBED_DIM, |k| ((i as usize + k) % 7) as f64 * 0.1));
            store.insert(UserId::y(i), Array1::from_shape_fn(EMBED_DIM, |k| ((i as usize * k) % 5) as f64 * 0.2));
        }
        let hx = PreferenceHistory {
            owner: UserId::x(0),
            items: vec![
                HistoryItem { target: UserId::y(1), polarity: 1, ts: 1 },
                HistoryItem { target: UserId::y(2), polarity: -1, ts: 2 },
            ],
        };
        let hy = PreferenceHistory {
            owner: UserId::y(0),
            items: vec![HistoryItem { target: UserId::x(2), polarity: 1, ts: 3 }],
        };
        let x = (UserId::x(0), &hx);
        let y = (UserId::y(0), &hy);
        let r_xy = match_probability(&mut model, x, y, &store).unwrap();
        let r_yx = match_probability(&mut model, y, x, &store).unwrap();
        assert_eq!(r_xy.to_bits(), r_yx.to_bits());
        assert!(r_xy > 0.0 && r_xy < 1.0);
    }

    #[test]
    fn masking_invariance_under_zero_pad_extension() {
        // A history shorter than the cap gets leading masked zeros; scores
        // must match a manually assembled shorter sequence.
        let mut model = full_model(6);
        let mut store = EmbeddingStore::new();
        for i in 0..3 {
            store.insert(UserId::y(i), Array1::from_shape_fn(EMBED_DIM, |k| (k as f64 * 0.01) + i as f64 * 0.1));
        }
        store.insert(UserId::x(0), Array1::from_elem(EMBED_DIM, 0.25));
        let h2 = PreferenceHistory {
            owner: UserId::x(0),
            items: vec![
                HistoryItem { target: UserId::y(0), polarity: 1, ts: 1 },
                HistoryItem { target: UserId::y(1), polarity: -1, ts: 2 },
            ],
        };
        let cand_emb = store.get(UserId::y(2)).unwrap().clone();
        let vectors = history_step_vectors(&h2, &cand_emb.view(), &store).unwrap();
        let views: Vec<_> = vectors.iter().map(|v| v.view()).collect();
        let seq = pad_and_mask(&views).unwrap();
        assert_eq!(seq.real_len(), 2);
        assert_eq!(seq.mask[..SEQ_LEN - 2].iter().filter(|&&m| m).count(), 0);
        let score_padded = directed_score(&mut model, &h2, UserId::y(2), &store).unwrap();

        // Same two steps, assembled by hand at the tail, scored directly.
        let (steps, mask) = sequence_batch(std::slice::from_ref(&seq), &model.spec);
        let cand = cand_emb.insert_axis(Axis(0));
        let p = model.forward_batch(&steps, &mask, &cand, false, None);
        assert_eq!(p[0].to_bits(), score_padded.to_bits());
    }

    #[test]
    fn top_k_orders_by_score_then_id() {
        let mut model = full_model(7);
        let mut store = EmbeddingStore::new();
        store.insert(UserId::x(0), Array1::from_elem(EMBED_DIM, 0.2));
        for i in 0..5 {
            store.insert(UserId::y(i), Array1::from_shape_fn(EMBED_DIM, |k| (i as f64 + k as f64 * 0.03) * 0.05));
        }
        let hx = empty_history(UserId::x(0));
        let pool_hists: Vec<PreferenceHistory> = (0..5).map(|i| empty_history(UserId::y(i))).collect();
        let pool: Vec<(UserId, &PreferenceHistory)> =
            pool_hists.iter().map(|h| (h.owner, h)).collect();

        let top_all = recommend_top_k(&mut model, (UserId::x(0), &hx), &pool, 10, &store).unwrap();
        assert_eq!(top_all.len(), 5, "k beyond pool size returns the full pool");
        for w in top_all.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // Top-1 agrees with the exhaustive argmax.
        let top1 = recommend_top_k(&mut model, (UserId::x(0), &hx), &pool, 1, &store).unwrap();
        let best = top_all.first().unwrap();
        assert_eq!(top1[0].0, best.0);

        let empty: Vec<(UserId, &PreferenceHistory)> = vec![];
        assert!(matches!(
            recommend_top_k(&mut model, (UserId::x(0), &hx), &empty, 1, &store),
            Err(ModelError::EmptyPool)
        ));
    }

    #[test]
    fn scores_stay_in_open_unit_interval() {
        let mut model = full_model(8);
        let mut store = EmbeddingStore::new();
        store.insert(UserId::x(0), Array1::from_elem(EMBED_DIM, 5.0));
        store.insert(UserId::y(0), Array1::from_elem(EMBED_DIM, -5.0));
        let h = empty_history(UserId::x(0));
        let hy = empty_history(UserId::y(0));
        let r = match_probability(&mut model, (UserId::x(0), &h), (UserId::y(0), &hy), &store).unwrap();
        assert!(r > 0.0 && r < 1.0);
    }
}
