//! Match-model training on labeled pairs with frozen encoders.

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingStore, TirrModel, TirrSpec};
use crate::error::ModelError;
use crate::events::{LabeledPair, Side, UserId, ValidatedEventLog};
use crate::history::build_history;
use crate::nn::{c, flatten_grads, flatten_params, param_count, set_params_flat, zero_grads, Adam, Scalar};
use crate::siamese::bce_loss;

/// One training/evaluation example: a labeled pair with both users'
/// histories frozen at the pair's reference time. `x` is always the side-X
/// user, so batch assembly is order-independent.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub x: UserId,
    pub y: UserId,
    pub label: f64,
    /// (target, polarity), oldest first, capped.
    pub hist_x: Vec<(UserId, i8)>,
    pub hist_y: Vec<(UserId, i8)>,
}

/// Build canonical examples from labeled pairs, with histories drawn from
/// `log` strictly before each pair's reference time.
pub fn build_examples(pairs: &[LabeledPair], log: &ValidatedEventLog, cap: usize, max_age: u64) -> Vec<PairExample> {
    pairs
        .iter()
        .map(|p| {
            let (x, y) = if p.x.side == Side::X { (p.x, p.y) } else { (p.y, p.x) };
            let hx = build_history(x, log, p.reference_time, cap, max_age);
            let hy = build_history(y, log, p.reference_time, cap, max_age);
            PairExample {
                x,
                y,
                label: p.label.as_f64(),
                hist_x: hx.items.iter().map(|i| (i.target, i.polarity)).collect(),
                hist_y: hy.items.iter().map(|i| (i.target, i.polarity)).collect(),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TirrTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub spec: TirrSpec,
}

impl Default for TirrTrainConfig {
    fn default() -> Self {
        TirrTrainConfig {
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 64,
            dropout: 0.4,
            seed: 0,
            spec: TirrSpec::full(),
        }
    }
}

pub struct TrainedTirr<F> {
    pub model: TirrModel<F>,
    pub loss_log: Vec<f64>,
}

/// Fill one batch row with a history-vs-candidate sequence (padding at the
/// head) and the candidate embedding.
fn fill_direction<F: Scalar>(
    steps: &mut Array3<F>,
    mask: &mut Array2<F>,
    cand: &mut Array2<F>,
    row: usize,
    hist: &[(UserId, i8)],
    candidate: UserId,
    store: &EmbeddingStore<F>,
    spec: &TirrSpec,
) -> Result<(), ModelError> {
    let cand_emb = store.get(candidate)?;
    cand.row_mut(row).assign(cand_emb);
    assert!(hist.len() <= spec.seq_len, "history longer than the sequence length");
    let t0 = spec.seq_len - hist.len();
    for (k, (target, polarity)) in hist.iter().enumerate() {
        let emb = store.get(*target)?;
        let sign = c::<F>(*polarity as f64);
        for j in 0..spec.step_dim {
            steps[[row, t0 + k, j]] = sign * (emb[j] - cand_emb[j]).abs();
        }
        mask[[row, t0 + k]] = F::one();
    }
    Ok(())
}

/// Assemble the 2B-row batch (x->y directions first, then y->x).
fn assemble_batch<F: Scalar>(
    chunk: &[&PairExample],
    store: &EmbeddingStore<F>,
    spec: &TirrSpec,
) -> Result<(Array3<F>, Array2<F>, Array2<F>), ModelError> {
    let b = chunk.len();
    let mut steps = Array3::<F>::zeros((2 * b, spec.seq_len, spec.step_dim));
    let mut mask = Array2::<F>::zeros((2 * b, spec.seq_len));
    let mut cand = Array2::<F>::zeros((2 * b, spec.step_dim));
    for (j, ex) in chunk.iter().enumerate() {
        fill_direction(&mut steps, &mut mask, &mut cand, j, &ex.hist_x, ex.y, store, spec)?;
        fill_direction(&mut steps, &mut mask, &mut cand, b + j, &ex.hist_y, ex.x, store, spec)?;
    }
    Ok((steps, mask, cand))
}

/// Batched reciprocal scores for evaluation (inference mode).
pub fn match_probabilities_batch<F: Scalar>(
    model: &mut TirrModel<F>,
    examples: &[PairExample],
    store: &EmbeddingStore<F>,
    batch_size: usize,
) -> Result<Vec<f64>, ModelError> {
    let spec = model.spec;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&PairExample> = chunk.iter().collect();
        let (steps, mask, cand) = assemble_batch(&refs, store, &spec)?;
        let probs = model.forward_batch(&steps, &mask, &cand, false, None);
        let b = chunk.len();
        for j in 0..b {
            out.push(((probs[j] + probs[b + j]) * c::<F>(0.5)).to_f64_val());
        }
    }
    Ok(out)
}

/// Train the match model with the mean-of-directions probability under
/// binary cross-entropy. Encoders stay frozen: only precomputed embeddings
/// are consumed.
pub fn train_tirr<F: Scalar>(
    examples: &[PairExample],
    store: &EmbeddingStore<F>,
    cfg: &TirrTrainConfig,
) -> Result<TrainedTirr<F>, ModelError> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7122_0000);
    let mut model = TirrModel::<F>::new(cfg.spec, cfg.dropout, &mut init_rng);
    let mut adam = Adam::<F>::new(param_count(&mut model), cfg.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7122_0001));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7122_0002));

    let eps = 1e-7;
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut n_seen = 0usize;
        for chunk_ids in order.chunks(cfg.batch_size) {
            let chunk: Vec<&PairExample> = chunk_ids.iter().map(|&i| &examples[i]).collect();
            let b = chunk.len();
            let (steps, mask, cand) = assemble_batch(&chunk, store, &cfg.spec)?;
            zero_grads(&mut model);
            let probs = model.forward_batch(&steps, &mask, &cand, true, Some(&mut dropout_rng));
            let mut grad_z = Array1::<F>::zeros(2 * b);
            let mut batch_loss = 0.0f64;
            for j in 0..b {
                let p1 = probs[j];
                let p2 = probs[b + j];
                let r = ((p1 + p2) * c::<F>(0.5)).to_f64_val();
                let y = chunk[j].label;
                batch_loss += bce_loss(r, y);
                let rc = r.clamp(eps, 1.0 - eps);
                let dl_dr = (rc - y) / (rc * (1.0 - rc)) / b as f64;
                let p1f = p1.to_f64_val();
                let p2f = p2.to_f64_val();
                grad_z[j] = c::<F>(dl_dr * 0.5 * p1f * (1.0 - p1f));
                grad_z[b + j] = c::<F>(dl_dr * 0.5 * p2f * (1.0 - p2f));
            }
            batch_loss /= b as f64;
            if !batch_loss.is_finite() {
                return Err(ModelError::Divergence { epoch, loss: batch_loss });
            }
            model.backward_batch(&grad_z);
            let mut params = flatten_params(&mut model);
            let grads = flatten_grads(&mut model);
            adam.step(&mut params, &grads);
            set_params_flat(&mut model, &params);
            loss_sum += batch_loss * b as f64;
            n_seen += b;
        }
        loss_log.push(loss_sum / n_seen.max(1) as f64);
    }
    Ok(TrainedTirr { model, loss_log })
}
