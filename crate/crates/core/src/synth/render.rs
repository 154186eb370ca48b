//! Procedural face rendering.
//!
//! Draws an abstract face schematic (outline, hair, eyes, brows, mouth) on a
//! 100x100 canvas. Geometry and colors are smooth functions of the user's
//! trait vector, and a low-frequency per-trait color field is mixed into the
//! face interior so every trait dimension has a recoverable pixel footprint
//! even after face cropping. The variant seed adds small pose/lighting-style
//! jitter only; rendering is a pure function of (traits, variant seed).

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::events::UserId;
use crate::imgproc::{Rect, IMG_SIZE};
use crate::synth::SyntheticUser;

/// A rendered face with its known face bounding box.
#[derive(Clone, Debug)]
pub struct RenderedImage {
    /// Channel-major `(3, 100, 100)`, values in `[0, 1]`.
    pub pixels: Array3<f32>,
    pub face_bbox: Rect,
    pub source_user: UserId,
    pub variant_seed: u64,
}

/// Number of trait dimensions with a visual encoding.
const VISUAL_DIMS: usize = 8;

/// Map a unit-norm trait vector to visual controls in `[-1, 1]`.
fn visual_controls(traits: &[f64]) -> [f32; VISUAL_DIMS] {
    let d = traits.len().max(1) as f64;
    let scale = d.sqrt() / 2.0;
    let mut u = [0.0f32; VISUAL_DIMS];
    for (k, slot) in u.iter_mut().enumerate() {
        if k < traits.len() {
            *slot = (traits[k] * scale).clamp(-1.0, 1.0) as f32;
        }
    }
    u
}

#[inline]
fn ellipse_cov(px: f32, py: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> f32 {
    let e = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
    // Soft edge about e = 1.
    let soft = 0.08;
    ((1.0 + soft - e) / (2.0 * soft)).clamp(0.0, 1.0)
}

#[inline]
fn blend(dst: &mut [f32; 3], color: [f32; 3], alpha: f32) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + color[c] * alpha;
    }
}

pub fn render_face(user: &SyntheticUser, variant_seed: u64) -> RenderedImage {
    let u = visual_controls(&user.trait_vector);

    // Pose/lighting jitter from the variant seed only.
    let mut vrng = ChaCha8Rng::seed_from_u64(variant_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(7));
    let dx: f32 = vrng.gen_range(-2.0..2.0);
    let dy: f32 = vrng.gen_range(-2.0..2.0);
    let pose: f32 = vrng.gen_range(0.97..1.03);
    let brightness: f32 = vrng.gen_range(-0.03..0.03);

    // Geometry. Face height is fixed so the crop scale is stable; width is
    // the trait-driven aspect signal.
    let cx = 49.5 + dx;
    let cy = 50.0 + dy;
    let rx = (36.0 + 4.0 * u[2]) * pose;
    let ry = 42.0 * pose;
    let hair_f = 1.05;
    let eye_dx = 0.45 * rx;
    let eye_y = cy - (0.18 + 0.07 * u[3]) * ry;
    let eye_r = 3.4 + 1.3 * u[5];
    let mouth_y = cy + 0.45 * ry;
    let mouth_halfw = (0.32 + 0.10 * u[6]) * rx;
    let mouth_curve = 3.5 * u[7];
    let brow_y = eye_y - 1.6 * eye_r - 2.5;
    let brow_tilt = 0.35 * u[7];

    // Colors.
    let skin = [
        0.84 + 0.06 * u[0] - 0.02 * u[1],
        0.70 + 0.03 * u[0] + 0.04 * u[1],
        0.58 - 0.02 * u[0] + 0.09 * u[1],
    ];
    let hair = [0.28 + 0.18 * u[4], 0.20 + 0.10 * u[4], 0.14 + 0.05 * u[4]];
    let iris = [0.25 + 0.20 * u[5].max(0.0), 0.30 + 0.15 * u[5].abs(), 0.55 - 0.25 * u[5]];
    let lips = [0.66 + 0.10 * u[6], 0.32, 0.38 + 0.05 * u[6]];
    let brow_c = [0.18, 0.13, 0.10];
    let sclera = [0.95, 0.95, 0.93];

    // Low-frequency per-trait field inside the face, in face coordinates so
    // it survives cropping.
    const FREQS: [(f32, f32); VISUAL_DIMS] =
        [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 0.0), (0.0, 2.0), (2.0, 1.0), (1.0, 2.0), (2.0, 2.0)];

    let mut pixels = Array3::<f32>::zeros((3, IMG_SIZE, IMG_SIZE));
    for py in 0..IMG_SIZE {
        for px in 0..IMG_SIZE {
            let fx = px as f32;
            let fy = py as f32;
            // Fixed backdrop with a gentle vertical gradient.
            let mut c = [0.82, 0.85, 0.88 - 0.06 * fy / IMG_SIZE as f32];

            // Hair: ring around the face plus a top fringe.
            let outer = ellipse_cov(fx, fy, cx, cy, rx * hair_f, ry * hair_f);
            let face = ellipse_cov(fx, fy, cx, cy, rx, ry);
            let ring = (outer - face).max(0.0);
            if ring > 0.0 {
                blend(&mut c, hair, ring);
            }
            if face > 0.0 {
                blend(&mut c, skin, face);
                if fy < cy - 0.62 * ry {
                    blend(&mut c, hair, face); // fringe
                } else {
                    // Trait field on the visible face interior.
                    let xn = (fx - cx) / rx;
                    let yn = (fy - cy) / ry;
                    for k in 0..VISUAL_DIMS {
                        let (kx, ky) = FREQS[k];
                        let pat = (std::f32::consts::PI * kx * xn).cos() * (std::f32::consts::PI * ky * yn).cos();
                        c[k % 3] += 0.03 * u[k] * pat * face;
                    }
                }
            }

            // Eyes: sclera, iris, pupil.
            for side in [-1.0f32, 1.0] {
                let ex = cx + side * eye_dx;
                let sc = ellipse_cov(fx, fy, ex, eye_y, eye_r * 1.35, eye_r * 0.95);
                if sc > 0.0 {
                    blend(&mut c, sclera, sc);
                    let ic = ellipse_cov(fx, fy, ex, eye_y, eye_r * 0.62, eye_r * 0.62);
                    if ic > 0.0 {
                        blend(&mut c, iris, ic);
                        let pc = ellipse_cov(fx, fy, ex, eye_y, eye_r * 0.25, eye_r * 0.25);
                        blend(&mut c, [0.05, 0.05, 0.05], pc);
                    }
                }
                // Brow: a tilted thin band above the eye.
                let rel = fx - ex;
                if rel.abs() < eye_r * 1.6 {
                    let by = brow_y + side * brow_tilt * rel;
                    let dist = (fy - by).abs();
                    let a = ((1.4 - dist) / 1.4).clamp(0.0, 1.0);
                    blend(&mut c, brow_c, a);
                }
            }

            // Mouth: a curved band.
            let mrel = (fx - cx) / mouth_halfw;
            if mrel.abs() < 1.0 {
                let my = mouth_y + mouth_curve * (mrel * mrel - 0.5);
                let dist = (fy - my).abs();
                let a = ((1.8 - dist) / 1.8).clamp(0.0, 1.0);
                blend(&mut c, lips, a);
            }

            for ch in 0..3 {
                pixels[[ch, py, px]] = (c[ch] + brightness).clamp(0.0, 1.0);
            }
        }
    }

    // Face bbox: outer (hair) ellipse bounds, clamped to the canvas.
    let x0 = ((cx - rx * hair_f).floor().max(0.0)) as u32;
    let y0 = ((cy - ry * hair_f).floor().max(0.0)) as u32;
    let x1 = ((cx + rx * hair_f).ceil().min((IMG_SIZE - 1) as f32)) as u32;
    let y1 = ((cy + ry * hair_f).ceil().min((IMG_SIZE - 1) as f32)) as u32;
    let face_bbox = Rect { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 };

    RenderedImage { pixels, face_bbox, source_user: user.id, variant_seed }
}
