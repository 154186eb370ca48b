//! The convolutional face encoder.
//!
//! Layer stack of the full 100x100 encoder (output: 128-d embedding):
//!
//! | layer  | kernel | out shape   | params  |
//! |--------|--------|-------------|---------|
//! | conv1  | 7x7    | 100x100x3   | 444     |
//! | pool   | 3x3/3  | 34x34x3     |         |
//! | norm1  |        | 34x34x3     | 12      |
//! | conv2  | 3x3    | 34x34x64    | 1792    |
//! | pool   | 3x3/3  | 12x12x64    |         |
//! | norm2  |        | 12x12x64    | 256     |
//! | conv3  | 2x2    | 12x12x192   | 49344   |
//! | pool   | 3x3/3  | 4x4x192     |         |
//! | conv4  | 2x2    | 4x4x384     | 295296  |
//! | pool   | 3x3/3  | 2x2x384     |         |
//! | conv5  | 1x1    | 2x2x256     | 98560   |
//! | conv6  | 3x3    | 2x2x256     | 590080  |
//! | pool   | 3x3/3  | 1x1x256     |         |
//! | dense1 |        | 256         | 65792   |
//! | dense2 |        | 128         | 32896   |
//!
//! Convolutions are stride-1 same-padding with ReLU; pooling is 3x3 stride 3
//! in ceiling mode (spatial trace 100 -> 34 -> 12 -> 4 -> 2 -> 1); the
//! normalization layers carry 4 values per channel (2 trainable, 2 tracked).
//! Total: 1,134,472.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{pooled_size, relu_inplace, ChannelNorm, Conv2d, Dense, HasTensors, MaxPool, Scalar, TensorKind};

/// One entry of an encoder layer specification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { in_c: usize, out_c: usize, k: usize },
    Pool,
    Norm { c: usize },
    Flatten,
    Dense { inp: usize, out: usize },
}

/// Declarative encoder layout; the full and miniature variants share all
/// layer kinds so the miniature gradient checks exercise the same code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_hw: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl EncoderSpec {
    /// The full 100x100 face encoder described in the module docs.
    pub fn full() -> Self {
        use LayerSpec::*;
        EncoderSpec {
            input_hw: 100,
            input_channels: 3,
            layers: vec![
                Conv { in_c: 3, out_c: 3, k: 7 },
                Pool,
                Norm { c: 3 },
                Conv { in_c: 3, out_c: 64, k: 3 },
                Pool,
                Norm { c: 64 },
                Conv { in_c: 64, out_c: 192, k: 2 },
                Pool,
                Conv { in_c: 192, out_c: 384, k: 2 },
                Pool,
                Conv { in_c: 384, out_c: 256, k: 1 },
                Conv { in_c: 256, out_c: 256, k: 3 },
                Pool,
                Flatten,
                Dense { inp: 256, out: 256 },
                Dense { inp: 256, out: 128 },
            ],
        }
    }

    /// A tiny 8x8 encoder with the same layer kinds, under 500 parameters,
    /// used for finite-difference gradient verification.
    pub fn miniature() -> Self {
        use LayerSpec::*;
        EncoderSpec {
            input_hw: 8,
            input_channels: 2,
            layers: vec![
                Conv { in_c: 2, out_c: 3, k: 3 },
                Pool,
                Norm { c: 3 },
                Conv { in_c: 3, out_c: 4, k: 2 },
                Pool,
                Flatten,
                Dense { inp: 4, out: 10 },
                Dense { inp: 10, out: 8 },
            ],
        }
    }

    /// Embedding dimension: output of the final dense layer.
    pub fn embed_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Dense { out, .. } => Some(*out),
                _ => None,
            })
            .expect("encoder spec ends in a dense layer")
    }

    /// `(name, trainable + tracked parameter count)` per parameterized
    /// layer, in order. Convs and denses count weights + biases; norms
    /// count 4 per channel.
    pub fn named_param_counts(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        let mut conv_i = 0;
        let mut norm_i = 0;
        let mut dense_i = 0;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { in_c, out_c, k } => {
                    conv_i += 1;
                    out.push((format!("conv{conv_i}"), out_c * (in_c * k * k) + out_c));
                }
                LayerSpec::Norm { c } => {
                    norm_i += 1;
                    out.push((format!("norm{norm_i}"), 4 * c));
                }
                LayerSpec::Dense { inp, out: o } => {
                    dense_i += 1;
                    out.push((format!("dense{dense_i}"), o * inp + o));
                }
                _ => {}
            }
        }
        out
    }

    pub fn total_param_count(&self) -> usize {
        self.named_param_counts().iter().map(|(_, n)| n).sum()
    }

    /// Spatial side length after the input and after each pooling layer.
    pub fn spatial_trace(&self) -> Vec<usize> {
        let mut trace = vec![self.input_hw];
        let mut hw = self.input_hw;
        for layer in &self.layers {
            if matches!(layer, LayerSpec::Pool) {
                hw = pooled_size(hw);
                trace.push(hw);
            }
        }
        trace
    }
}

enum Stage<F> {
    Conv(Conv2d<F>, Option<Array4<F>>),
    Pool(MaxPool),
    Norm(ChannelNorm<F>),
    Flatten(usize, usize), // (channels, hw) at flatten time
    DenseRelu(Dense<F>, Option<Array2<F>>),
    DenseLinear(Dense<F>),
}

/// The encoder network. Convolutions and the first dense layer use ReLU;
/// the final dense output is the linear embedding.
pub struct Encoder<F> {
    pub spec: EncoderSpec,
    stages: Vec<Stage<F>>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new(spec: EncoderSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut hw = spec.input_hw;
        let mut channels = spec.input_channels;
        let mut first_conv = true;
        let n_dense = spec.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
        let mut dense_seen = 0;
        for layer in &spec.layers {
            match layer {
                LayerSpec::Conv { in_c, out_c, k } => {
                    debug_assert_eq!(*in_c, channels);
                    let mut conv = Conv2d::new(*in_c, *out_c, *k, rng);
                    if first_conv {
                        conv.needs_input_grad = false;
                        first_conv = false;
                    }
                    channels = *out_c;
                    stages.push(Stage::Conv(conv, None));
                }
                LayerSpec::Pool => {
                    hw = pooled_size(hw);
                    stages.push(Stage::Pool(MaxPool::new()));
                }
                LayerSpec::Norm { c } => {
                    debug_assert_eq!(*c, channels);
                    stages.push(Stage::Norm(ChannelNorm::new(*c)));
                }
                LayerSpec::Flatten => {
                    stages.push(Stage::Flatten(channels, hw));
                }
                LayerSpec::Dense { inp, out } => {
                    dense_seen += 1;
                    let dense = Dense::new(*inp, *out, rng);
                    if dense_seen < n_dense {
                        stages.push(Stage::DenseRelu(dense, None));
                    } else {
                        stages.push(Stage::DenseLinear(dense));
                    }
                }
            }
        }
        Encoder { spec, stages }
    }

    /// `(batch, c, h, w)` -> `(batch, embed_dim)`.
    pub fn forward(&mut self, images: &Array4<F>, train: bool) -> Array2<F> {
        let mut a4 = images.clone();
        let mut a2: Option<Array2<F>> = None;
        for stage in self.stages.iter_mut() {
            match stage {
                Stage::Conv(conv, relu_cache) => {
                    let mut y = conv.forward(&a4, train);
                    relu_inplace(&mut y);
                    if train {
                        *relu_cache = Some(y.clone());
                    }
                    a4 = y;
                }
                Stage::Pool(pool) => {
                    a4 = pool.forward(&a4, train);
                }
                Stage::Norm(norm) => {
                    a4 = norm.forward(&a4, train);
                }
                Stage::Flatten(c, hw) => {
                    let b = a4.shape()[0];
                    a2 = Some(
                        a4.clone()
                            .into_shape_with_order((b, *c * *hw * *hw))
                            .expect("flatten shape"),
                    );
                }
                Stage::DenseRelu(dense, relu_cache) => {
                    let mut y = dense.forward(a2.as_ref().expect("flatten before dense"), train);
                    relu_inplace(&mut y);
                    if train {
                        *relu_cache = Some(y.clone());
                    }
                    a2 = Some(y);
                }
                Stage::DenseLinear(dense) => {
                    let y = dense.forward(a2.as_ref().expect("flatten before dense"), train);
                    a2 = Some(y);
                }
            }
        }
        a2.expect("encoder spec must end with dense layers")
    }

    /// Backward from the embedding gradient; accumulates parameter grads.
    pub fn backward(&mut self, grad_embedding: &Array2<F>) {
        let mut g2 = grad_embedding.clone();
        let mut g4: Option<Array4<F>> = None;
        for stage in self.stages.iter_mut().rev() {
            match stage {
                Stage::DenseLinear(dense) => {
                    g2 = dense.backward(&g2);
                }
                Stage::DenseRelu(dense, relu_cache) => {
                    let cache = relu_cache.take().expect("forward(train) before backward");
                    ndarray::Zip::from(&mut g2).and(&cache).for_each(|g, y| {
                        if *y <= F::zero() {
                            *g = F::zero();
                        }
                    });
                    g2 = dense.backward(&g2);
                }
                Stage::Flatten(c, hw) => {
                    let b = g2.shape()[0];
                    g4 = Some(
                        g2.clone()
                            .into_shape_with_order((b, *c, *hw, *hw))
                            .expect("unflatten shape"),
                    );
                }
                Stage::Norm(norm) => {
                    let g = g4.take().expect("flatten boundary crossed");
                    g4 = Some(norm.backward(&g));
                }
                Stage::Pool(pool) => {
                    let g = g4.take().expect("flatten boundary crossed");
                    g4 = Some(pool.backward(&g));
                }
                Stage::Conv(conv, relu_cache) => {
                    let mut g = g4.take().expect("flatten boundary crossed");
                    let cache = relu_cache.take().expect("forward(train) before backward");
                    ndarray::Zip::from(&mut g).and(&cache).for_each(|gv, y| {
                        if *y <= F::zero() {
                            *gv = F::zero();
                        }
                    });
                    g4 = Some(conv.backward(&g));
                }
            }
        }
    }
}

impl<F: Scalar> HasTensors<F> for Encoder<F> {
    fn visit_tensors(&mut self, f: &mut dyn FnMut(TensorKind, &str, &[usize], &mut [F], Option<&mut [F]>)) {
        let mut conv_i = 0;
        let mut norm_i = 0;
        let mut dense_i = 0;
        for stage in self.stages.iter_mut() {
            match stage {
                Stage::Conv(conv, _) => {
                    conv_i += 1;
                    let prefix = format!("conv{conv_i}");
                    conv.visit_tensors(&mut |kind, name, shape, vals, grads| {
                        f(kind, &format!("{prefix}.{name}"), shape, vals, grads);
                    });
                }
                Stage::Norm(norm) => {
                    norm_i += 1;
                    let prefix = format!("norm{norm_i}");
                    norm.visit_tensors(&mut |kind, name, shape, vals, grads| {
                        f(kind, &format!("{prefix}.{name}"), shape, vals, grads);
                    });
                }
                Stage::DenseRelu(dense, _) | Stage::DenseLinear(dense) => {
                    dense_i += 1;
                    let prefix = format!("dense{dense_i}");
                    dense.visit_tensors(&mut |kind, name, shape, vals, grads| {
                        f(kind, &format!("{prefix}.{name}"), shape, vals, grads);
                    });
                }
                _ => {}
            }
        }
    }
}
