//! Training of the unidirectional preference models.
//!
//! One model is trained per target side (faces of side X judged by side Y
//! users, and vice versa). Pairs expanded from triplets are shuffled per
//! epoch and optimized with the adaptive-moment optimizer; the whole run is
//! deterministic for a given seed.

use ndarray::{s, Array1, Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bce_loss, contrastive_loss, distance_batch, EncoderSpec, ImageSource, LossConfig, LossKind, SiameseModel, Triplet};
use crate::error::ModelError;
use crate::events::{Side, UserId};
use crate::imgproc::{IMG_CHANNELS, IMG_SIZE};
use crate::nn::{c, flatten_grads, flatten_params, param_count, set_params_flat, sigmoid, zero_grads, Adam, Scalar};

#[derive(Clone, Debug)]
pub struct SiameseTrainConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    /// Pairs per batch (each batch encodes twice as many images).
    pub batch_size: usize,
    pub seed: u64,
    pub spec: EncoderSpec,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig {
            loss: LossConfig::default(),
            epochs: 3,
            batch_size: 64,
            seed: 0,
            spec: EncoderSpec::full(),
        }
    }
}

/// A trained model plus its per-epoch mean training loss.
pub struct TrainedSiamese<F> {
    pub model: SiameseModel<F>,
    pub loss_log: Vec<f64>,
}

/// The two per-side models produced by one training call.
pub struct SiamesePair<F> {
    pub x_targets: TrainedSiamese<F>,
    pub y_targets: TrainedSiamese<F>,
}

impl<F> SiamesePair<F> {
    pub fn for_target_side(&self, side: Side) -> &TrainedSiamese<F> {
        match side {
            Side::X => &self.x_targets,
            Side::Y => &self.y_targets,
        }
    }
}

/// Copy user faces into a batch tensor.
pub fn image_batch<F: Scalar, S: ImageSource>(users: &[UserId], images: &S) -> Result<Array4<F>, ModelError> {
    let mut out = Array4::<F>::zeros((users.len(), IMG_CHANNELS, IMG_SIZE, IMG_SIZE));
    for (i, user) in users.iter().enumerate() {
        let img = images.image(*user).ok_or(ModelError::MissingImage(*user))?;
        let dst = out.index_axis_mut(ndarray::Axis(0), i);
        for (d, s) in dst.into_iter().zip(img.data().iter()) {
            *d = F::from_f64(*s as f64);
        }
    }
    Ok(out)
}

/// Train both per-side models from a mixed triplet set.
pub fn train_siamese<F: Scalar, S: ImageSource>(
    triplets: &[Triplet],
    images: &S,
    cfg: &SiameseTrainConfig,
) -> Result<SiamesePair<F>, ModelError> {
    let x_triplets: Vec<Triplet> = triplets.iter().filter(|t| t.target_side() == Side::X).copied().collect();
    let y_triplets: Vec<Triplet> = triplets.iter().filter(|t| t.target_side() == Side::Y).copied().collect();
    if x_triplets.is_empty() {
        return Err(ModelError::InsufficientJudges { side: Side::Y });
    }
    if y_triplets.is_empty() {
        return Err(ModelError::InsufficientJudges { side: Side::X });
    }
    let x_targets = train_side(&x_triplets, images, cfg, Side::X)?;
    let y_targets = train_side(&y_triplets, images, cfg, Side::Y)?;
    Ok(SiamesePair { x_targets, y_targets })
}

/// Train one side's model.
pub fn train_side<F: Scalar, S: ImageSource>(
    triplets: &[Triplet],
    images: &S,
    cfg: &SiameseTrainConfig,
    target_side: Side,
) -> Result<TrainedSiamese<F>, ModelError> {
    let side_salt = match target_side {
        Side::X => 0x51de_0000u64,
        Side::Y => 0x51de_0001u64,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ side_salt);
    let mut model = SiameseModel::<F>::new(target_side, cfg.spec.clone(), &mut init_rng);
    let mut adam = Adam::<F>::new(param_count(&mut model), cfg.loss.learning_rate);

    let mut pairs: Vec<(UserId, UserId, f64)> = triplets
        .iter()
        .flat_map(|t| [(t.anchor, t.positive, 1.0), (t.anchor, t.negative, 0.0)])
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(side_salt).wrapping_add(1));

    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        pairs.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut n_seen = 0usize;
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch_loss = train_batch(&mut model, &mut adam, chunk, images, &cfg.loss)?;
            if !batch_loss.is_finite() {
                return Err(ModelError::Divergence { epoch, loss: batch_loss });
            }
            loss_sum += batch_loss * chunk.len() as f64;
            n_seen += chunk.len();
        }
        loss_log.push(loss_sum / n_seen.max(1) as f64);
    }
    Ok(TrainedSiamese { model, loss_log })
}

fn train_batch<F: Scalar, S: ImageSource>(
    model: &mut SiameseModel<F>,
    adam: &mut Adam<F>,
    chunk: &[(UserId, UserId, f64)],
    images: &S,
    loss_cfg: &LossConfig,
) -> Result<f64, ModelError> {
    let users: Vec<UserId> = chunk.iter().map(|p| p.0).chain(chunk.iter().map(|p| p.1)).collect();
    let imgs = image_batch::<F, S>(&users, images)?;
    let labels: Vec<f64> = chunk.iter().map(|p| p.2).collect();

    zero_grads(model);
    let batch_loss = pair_batch_loss_and_grads(model, &imgs, &labels, loss_cfg);

    let mut params = flatten_params(model);
    let grads = flatten_grads(model);
    adam.step(&mut params, &grads);
    set_params_flat(model, &params);
    Ok(batch_loss)
}

/// Forward + backward over a prepared pair batch: the first half of `imgs`
/// holds each pair's first image, the second half the second image.
/// Accumulates parameter gradients (caller zeroes) and returns the mean
/// batch loss. This is the exact path the optimizer consumes; the gradient
/// checks verify it against finite differences.
pub fn pair_batch_loss_and_grads<F: Scalar>(
    model: &mut SiameseModel<F>,
    imgs: &Array4<F>,
    labels: &[f64],
    loss_cfg: &LossConfig,
) -> f64 {
    let b = labels.len();
    debug_assert_eq!(imgs.shape()[0], 2 * b);
    let h = model.encoder.forward(imgs, true);
    let h_a = h.slice(s![0..b, ..]).to_owned();
    let h_o = h.slice(s![b..2 * b, ..]).to_owned();
    let delta = &h_a - &h_o;
    let inv_b = c::<F>(1.0 / b as f64);

    let batch_loss = match loss_cfg.kind {
        LossKind::Bce => {
            let d = delta.mapv(|v| v.abs());
            let z = model.head.forward(&d, true);
            let mut loss = 0.0f64;
            let mut dz = Array2::<F>::zeros((b, 1));
            for j in 0..b {
                let p = sigmoid(z[[j, 0]]);
                let y = c::<F>(labels[j]);
                loss += bce_loss(p, y).to_f64_val();
                dz[[j, 0]] = (p - y) * inv_b;
            }
            let dd = model.head.backward(&dz);
            let mut g_h = Array2::<F>::zeros(h.raw_dim());
            for j in 0..b {
                for k in 0..delta.shape()[1] {
                    let sign = if delta[[j, k]] > F::zero() {
                        F::one()
                    } else if delta[[j, k]] < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    };
                    let g = dd[[j, k]] * sign;
                    g_h[[j, k]] = g;
                    g_h[[b + j, k]] = -g;
                }
            }
            model.encoder.backward(&g_h);
            loss / b as f64
        }
        LossKind::Contrastive => {
            let margin = c::<F>(loss_cfg.margin);
            let mut loss = 0.0f64;
            let mut g_h = Array2::<F>::zeros(h.raw_dim());
            let mut dist = Array1::<F>::zeros(b);
            for j in 0..b {
                let dsq: F = delta.row(j).iter().map(|v| *v * *v).sum();
                dist[j] = dsq.sqrt();
            }
            for j in 0..b {
                let similar = (labels[j] > 0.5) != loss_cfg.flip_contrastive;
                let dj = dist[j];
                loss += contrastive_loss(dj, similar, margin).to_f64_val();
                let dl_dd = if similar { dj } else { -(margin - dj).max(F::zero()) } * inv_b;
                if dj > F::zero() {
                    let scale = dl_dd / dj;
                    for k in 0..delta.shape()[1] {
                        let g = scale * delta[[j, k]];
                        g_h[[j, k]] = g;
                        g_h[[b + j, k]] = -g;
                    }
                }
            }
            model.encoder.backward(&g_h);
            // The probability head still has to be usable for scoring, so
            // fit it on the detached distance vectors (no encoder grads).
            let d = delta.mapv(|v| v.abs());
            let z = model.head.forward(&d, true);
            let mut dz = Array2::<F>::zeros((b, 1));
            for j in 0..b {
                let p = sigmoid(z[[j, 0]]);
                dz[[j, 0]] = (p - c::<F>(labels[j])) * inv_b;
            }
            let _ = model.head.backward(&dz);
            loss / b as f64
        }
    };

    let mut params = flatten_params(model);
    let grads = flatten_grads(model);
    adam.step(&mut params, &grads);
    set_params_flat(model, &params);
    Ok(batch_loss)
}

/// Fraction of triplets where the model scores the positive above the
/// negative (inference mode).
pub fn triplet_accuracy<F: Scalar, S: ImageSource>(
    model: &mut SiameseModel<F>,
    triplets: &[Triplet],
    images: &S,
    batch_size: usize,
) -> Result<f64, ModelError> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in triplets.chunks(batch_size.max(1)) {
        let users: Vec<UserId> = chunk
            .iter()
            .map(|t| t.anchor)
            .chain(chunk.iter().map(|t| t.positive))
            .chain(chunk.iter().map(|t| t.negative))
            .collect();
        let imgs = image_batch::<F, S>(&users, images)?;
        let h = model.encoder.forward(&imgs, false);
        let b = chunk.len();
        let h_a = h.slice(s![0..b, ..]).to_owned();
        let h_p = h.slice(s![b..2 * b, ..]).to_owned();
        let h_n = h.slice(s![2 * b..3 * b, ..]).to_owned();
        let p_pos = model.head_probability_batch(&distance_batch(&h_a, &h_p));
        let p_neg = model.head_probability_batch(&distance_batch(&h_a, &h_n));
        correct += p_pos.iter().zip(p_neg.iter()).filter(|(p, n)| p > n).count();
    }
    Ok(correct as f64 / triplets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::ImageTensor;

    struct NoImages;

    impl ImageSource for NoImages {
        fn image(&self, _user: UserId) -> Option<&ImageTensor> {
            None
        }
    }

    fn tiny_cfg(epochs: usize) -> SiameseTrainConfig {
        SiameseTrainConfig { epochs, batch_size: 8, seed: 42, spec: EncoderSpec::miniature(), ..Default::default() }
    }

    fn one_triplet() -> Vec<Triplet> {
        vec![Triplet { judge: UserId::x(0), anchor: UserId::y(0), positive: UserId::y(1), negative: UserId::y(2) }]
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = tiny_cfg(0);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51de_0001u64);
        let mut fresh = SiameseModel::<f64>::new(Side::Y, cfg.spec.clone(), &mut rng);
        let trained = train_side::<f64, _>(&one_triplet(), &NoImages, &cfg, Side::Y).unwrap();
        let mut got = trained.model;
        assert_eq!(flatten_params(&mut got), flatten_params(&mut fresh));
        assert!(trained.loss_log.is_empty());
    }

    #[test]
    fn missing_image_is_reported() {
        match train_side::<f64, _>(&one_triplet(), &NoImages, &tiny_cfg(1), Side::Y) {
            Err(ModelError::MissingImage(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected a missing-image error"),
        }
    }

    #[test]
    fn train_requires_triplets_on_both_sides() {
        match train_siamese::<f64, _>(&one_triplet(), &NoImages, &tiny_cfg(1)) {
            Err(ModelError::InsufficientJudges { side: Side::Y }) => {}
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected an insufficient-judges error"),
        }
    }
}
