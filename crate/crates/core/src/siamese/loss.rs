//! Loss functions for pair training.

use serde::{Deserialize, Serialize};

use crate::nn::{c, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Contrastive,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Contrastive => "contrastive",
        }
    }
}

/// Loss selection and the optimizer's learning rate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Contrastive margin.
    pub margin: f64,
    /// Flip which label the quadratic-distance term attaches to. The
    /// standard convention (false) penalizes distance on similar pairs.
    pub flip_contrastive: bool,
    pub learning_rate: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::Bce, margin: 1.0, flip_contrastive: false, learning_rate: 1e-4 }
    }
}

const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy with the probability clipped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<F: Scalar>(p: F, label: F) -> F {
    let eps = c::<F>(BCE_EPS);
    let p = p.max(eps).min(F::one() - eps);
    -(label * p.ln() + (F::one() - label) * (F::one() - p).ln())
}

/// Margin contrastive loss on a scalar embedding distance.
///
/// Similar pairs are penalized by squared distance; dissimilar pairs by the
/// squared margin shortfall.
pub fn contrastive_loss<F: Scalar>(d: F, similar: bool, margin: F) -> F {
    let half = c::<F>(0.5);
    if similar {
        half * d * d
    } else {
        let gap = (margin - d).max(F::zero());
        half * gap * gap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_confident_correct_is_near_zero() {
        let l = bce_loss(1.0f64 - 1e-7, 1.0);
        assert!(l < 1e-6, "loss {l}");
    }

    #[test]
    fn bce_at_half_is_ln_two_for_both_labels() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5f64, 1.0) - ln2).abs() < 1e-12);
        assert!((bce_loss(0.5f64, 0.0) - ln2).abs() < 1e-12);
    }

    #[test]
    fn bce_confident_wrong_matches_hand_value() {
        // -ln(0.1) ~ 2.302585
        let l = bce_loss(0.9f64, 0.0);
        assert!((l - 2.302585092994046).abs() < 1e-9, "loss {l}");
    }

    #[test]
    fn bce_clips_extreme_probabilities() {
        assert!(bce_loss(0.0f64, 1.0).is_finite());
        assert!(bce_loss(1.0f64, 0.0).is_finite());
    }

    #[test]
    fn contrastive_similar_zero_distance_is_zero() {
        assert_eq!(contrastive_loss(0.0f64, true, 1.0), 0.0);
    }

    #[test]
    fn contrastive_dissimilar_beyond_margin_is_zero() {
        assert_eq!(contrastive_loss(1.0f64, false, 1.0), 0.0);
        assert_eq!(contrastive_loss(2.5f64, false, 1.0), 0.0);
    }

    #[test]
    fn contrastive_dissimilar_at_zero_is_half_margin_squared() {
        assert!((contrastive_loss(0.0f64, false, 1.0) - 0.5).abs() < 1e-15);
        assert!((contrastive_loss(0.0f64, false, 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn losses_are_nonnegative() {
        for i in 0..50 {
            let p = i as f64 / 49.0;
            assert!(bce_loss(p, 0.0f64) >= 0.0);
            assert!(bce_loss(p, 1.0) >= 0.0);
            let d = i as f64 / 10.0;
            assert!(contrastive_loss(d, true, 1.0) >= 0.0);
            assert!(contrastive_loss(d, false, 1.0) >= 0.0);
        }
    }
}
