//! Simplified comparison systems sharing the evaluation surface: an
//! attribute-preference recommender (RECON-lite), an image-anchor
//! aggregator without the temporal model (ImRec-lite), and a latent-factor
//! collaborative filter (LFRR-lite). Directed scores are combined with the
//! harmonic mean.

mod imrec;
mod lfrr;
mod recon;

pub use imrec::{ImrecLite, DEFAULT_MAX_ANCHORS};
pub use lfrr::{LfrrConfig, LfrrLite};
pub use recon::{AttributeTable, ReconLite};

/// Harmonic-mean combination of two directed scores in `[0, 1]`. Zero if
/// both are zero; annihilated by either side being zero.
pub fn harmonic_reciprocal(q_xy: f64, q_yx: f64) -> f64 {
    let sum = q_xy + q_yx;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * q_xy * q_yx / sum
    }
}
