//! The unidirectional preference model: a twin convolutional encoder with
//! shared weights, an absolute-difference embedding comparison and a
//! sigmoid probability head, trained on (anchor, positive, negative)
//! triplets of judged faces.

mod encoder;
mod loss;
mod train;
mod triplet;

pub use encoder::{Encoder, EncoderSpec, LayerSpec};
pub use loss::{bce_loss, contrastive_loss, LossConfig, LossKind};
pub use train::{image_batch, train_siamese, train_side, triplet_accuracy, SiamesePair, SiameseTrainConfig, TrainedSiamese};
pub use triplet::{eligible_judges, sample_triplets, Triplet};

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::events::{Side, UserId};
use crate::imgproc::ImageTensor;
use crate::nn::{sigmoid, Dense, HasTensors, Scalar, TensorKind};

/// Anything that can hand out the stored face of a user.
pub trait ImageSource {
    fn image(&self, user: UserId) -> Option<&ImageTensor>;
}

impl ImageSource for HashMap<UserId, ImageTensor> {
    fn image(&self, user: UserId) -> Option<&ImageTensor> {
        self.get(&user)
    }
}

/// Elementwise absolute difference of two embeddings. This vector is both
/// the head input and the per-step input of the sequence model.
pub fn distance<F: Scalar>(h1: &ArrayView1<F>, h2: &ArrayView1<F>) -> Array1<F> {
    let mut out = Array1::zeros(h1.len());
    for k in 0..h1.len() {
        out[k] = (h1[k] - h2[k]).abs();
    }
    out
}

/// Batched absolute difference, row for row.
pub fn distance_batch<F: Scalar>(h1: &Array2<F>, h2: &Array2<F>) -> Array2<F> {
    let mut out = Array2::zeros(h1.raw_dim());
    ndarray::Zip::from(&mut out).and(h1).and(h2).for_each(|o, a, b| *o = (*a - *b).abs());
    out
}

/// The full unidirectional preference model: encoder plus probability head,
/// specialized to faces of one side.
pub struct SiameseModel<F> {
    pub target_side: Side,
    pub encoder: Encoder<F>,
    pub head: Dense<F>,
}

impl<F: Scalar> SiameseModel<F> {
    pub fn new(target_side: Side, spec: EncoderSpec, rng: &mut ChaCha8Rng) -> Self {
        let embed_dim = spec.embed_dim();
        SiameseModel { target_side, encoder: Encoder::new(spec, rng), head: Dense::new(embed_dim, 1, rng) }
    }

    /// Embed a batch of images. Inference mode is deterministic.
    pub fn encode(&mut self, images: &ndarray::Array4<F>, train: bool) -> Array2<F> {
        self.encoder.forward(images, train)
    }

    /// Probability that the judge likes the compared image, from the
    /// absolute-difference vector. Pure; usable concurrently.
    pub fn head_probability(&self, d: &ArrayView1<F>) -> F {
        let z = self.head.weight.row(0).dot(d) + self.head.bias[0];
        sigmoid(z)
    }

    /// Batched head probabilities.
    pub fn head_probability_batch(&self, d: &Array2<F>) -> Array1<F> {
        let mut z = d.dot(&self.head.weight.t()).index_axis_move(Axis(1), 0);
        z += self.head.bias[0];
        z.mapv_into(sigmoid)
    }

    pub fn param_count(&mut self) -> usize {
        crate::nn::param_count(self)
    }

    /// Capture weights and tracked statistics into a checkpoint.
    pub fn to_checkpoint(&mut self, mut meta: CheckpointMeta) -> Checkpoint {
        meta.kind = "siamese".into();
        meta.extra.insert("target_side".into(), self.target_side.letter().to_string());
        let mut ck = Checkpoint::new(meta);
        ck.capture("", self);
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), crate::checkpoint::CheckpointError> {
        ck.restore("", self)
    }
}

impl<F: Scalar> HasTensors<F> for SiameseModel<F> {
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>)) {
        self.encoder.visit_tensors(&mut |kind, name, shape, vals, grads| {
            f(kind, &format!("encoder.{name}"), shape, vals, grads);
        });
        self.head.visit_tensors(&mut |kind, name, shape, vals, grads| {
            f(kind, &format!("head.{name}"), shape, vals, grads);
        });
    }
}
