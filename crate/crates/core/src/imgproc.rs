//! Deterministic preprocessing: stored images to encoder-ready tensors, and
//! history padding/masking for the sequence model.

use ndarray::{Array2, Array3, ArrayView1};
use thiserror::Error;

use crate::nn::Scalar;
use crate::{EMBED_DIM, SEQ_LEN};

/// Side length of encoder input images.
pub const IMG_SIZE: usize = 100;
/// Color channels (RGB).
pub const IMG_CHANNELS: usize = 3;

/// An axis-aligned pixel rectangle, `(x, y)` top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

/// A 100x100 RGB image, channel-major `(3, 100, 100)`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    /// Wrap raw data, clamping values into `[0, 1]`.
    pub fn new(mut data: Array3<f32>) -> Result<Self, ImgError> {
        if data.shape() != [IMG_CHANNELS, IMG_SIZE, IMG_SIZE] {
            return Err(ImgError::BadShape(data.shape().to_vec()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(ImageTensor { data })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// Flat copy in `(c, h, w)` order converted to the model element type.
    pub fn to_elems<F: Scalar>(&self) -> Vec<F> {
        self.data.iter().map(|&v| F::from(v).unwrap()).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ImgError {
    #[error("bounding box has zero area")]
    DegenerateBbox,
    #[error("bounding box {bbox:?} exceeds image bounds {w}x{h}")]
    BboxOutOfBounds { bbox: Rect, w: usize, h: usize },
    #[error("sequence of {0} vectors exceeds the maximum of {max} steps", max = SEQ_LEN)]
    SequenceTooLong(usize),
    #[error("step vector {index} has dimension {got}, expected {want}")]
    BadStepDim { index: usize, got: usize, want: usize },
    #[error("image has unexpected shape {0:?}")]
    BadShape(Vec<usize>),
}

/// Crop `source` (channel-major `(3, H, W)`) to `bbox` expanded to a square,
/// then bilinearly resize to 100x100. Deterministic; a 100x100 source with a
/// full-image bbox passes through unchanged.
pub fn crop_and_scale(source: &Array3<f32>, bbox: Rect) -> Result<ImageTensor, ImgError> {
    let (channels, src_h, src_w) = (source.shape()[0], source.shape()[1], source.shape()[2]);
    debug_assert_eq!(channels, IMG_CHANNELS);
    if bbox.area() == 0 {
        return Err(ImgError::DegenerateBbox);
    }
    if (bbox.x + bbox.w) as usize > src_w || (bbox.y + bbox.h) as usize > src_h {
        return Err(ImgError::BboxOutOfBounds { bbox, w: src_w, h: src_h });
    }

    // Expand the shorter side about the bbox center, then clamp the square
    // back into the image.
    let side = bbox.w.max(bbox.h) as i64;
    let cx = bbox.x as i64 + bbox.w as i64 / 2;
    let cy = bbox.y as i64 + bbox.h as i64 / 2;
    let clamp_origin = |c: i64, limit: i64| -> i64 { (c - side / 2).clamp(0, (limit - side).max(0)) };
    let x0 = clamp_origin(cx, src_w as i64);
    let y0 = clamp_origin(cy, src_h as i64);
    let crop_w = side.min(src_w as i64) as usize;
    let crop_h = side.min(src_h as i64) as usize;
    let (x0, y0) = (x0 as usize, y0 as usize);

    // Bilinear resample with corner alignment so identity scales are exact.
    let mut out = Array3::<f32>::zeros((IMG_CHANNELS, IMG_SIZE, IMG_SIZE));
    let scale = |dst: usize, dst_n: usize, src_n: usize| -> f32 {
        if dst_n <= 1 || src_n <= 1 {
            0.0
        } else {
            dst as f32 * (src_n - 1) as f32 / (dst_n - 1) as f32
        }
    };
    for oy in 0..IMG_SIZE {
        let fy = scale(oy, IMG_SIZE, crop_h);
        let y1 = fy.floor() as usize;
        let y2 = (y1 + 1).min(crop_h - 1);
        let wy = fy - y1 as f32;
        for ox in 0..IMG_SIZE {
            let fx = scale(ox, IMG_SIZE, crop_w);
            let x1 = fx.floor() as usize;
            let x2 = (x1 + 1).min(crop_w - 1);
            let wx = fx - x1 as f32;
            for c in 0..IMG_CHANNELS {
                let p11 = source[[c, y0 + y1, x0 + x1]];
                let p12 = source[[c, y0 + y1, x0 + x2]];
                let p21 = source[[c, y0 + y2, x0 + x1]];
                let p22 = source[[c, y0 + y2, x0 + x2]];
                let top = p11 + (p12 - p11) * wx;
                let bot = p21 + (p22 - p21) * wx;
                out[[c, oy, ox]] = top + (bot - top) * wy;
            }
        }
    }
    ImageTensor::new(out)
}

/// A fixed-length step sequence with its validity mask. Padding sits at the
/// head so the most recent steps are adjacent to the prediction step; the
/// mask is false on padding and true on a contiguous suffix.
#[derive(Clone, Debug)]
pub struct PaddedSequence<F> {
    pub steps: Array2<F>,
    pub mask: [bool; SEQ_LEN],
}

impl<F: Scalar> PaddedSequence<F> {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Zero-pad up to `SEQ_LEN` step vectors to the fixed sequence shape.
pub fn pad_and_mask<F: Scalar>(vectors: &[ArrayView1<F>]) -> Result<PaddedSequence<F>, ImgError> {
    if vectors.len() > SEQ_LEN {
        return Err(ImgError::SequenceTooLong(vectors.len()));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != EMBED_DIM {
            return Err(ImgError::BadStepDim { index: i, got: v.len(), want: EMBED_DIM });
        }
    }
    let pad = SEQ_LEN - vectors.len();
    let mut steps = Array2::<F>::zeros((SEQ_LEN, EMBED_DIM));
    let mut mask = [false; SEQ_LEN];
    for (i, v) in vectors.iter().enumerate() {
        steps.row_mut(pad + i).assign(v);
        mask[pad + i] = true;
    }
    Ok(PaddedSequence { steps, mask })
}
