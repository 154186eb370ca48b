//! Image-anchor baseline without the temporal model.
//!
//! Each direction scores the candidate against up to five of the judge's
//! most recently liked faces using the pretrained pair head, averaged, then
//! the directions are combined harmonically. This replaces the original
//! system's random-forest aggregation with a mean over anchors; the
//! retained comparison claim is ordering, not absolute numbers.

use std::collections::HashMap;

use crate::baselines::harmonic_reciprocal;
use crate::error::ModelError;
use crate::events::{EventKind, PreferenceEvent, UserId};
use crate::nn::Scalar;
use crate::siamese::{distance, SiamesePair};
use crate::tirr::EmbeddingStore;

pub const DEFAULT_MAX_ANCHORS: usize = 5;

/// Recent positive anchors per judge, extracted from training events.
#[derive(Clone, Debug)]
pub struct ImrecLite {
    anchors: HashMap<UserId, Vec<UserId>>,
    pub max_anchors: usize,
}

impl ImrecLite {
    /// Collect each judge's most recent `max_anchors` liked targets.
    pub fn fit(events: &[PreferenceEvent], max_anchors: usize) -> Self {
        let mut all: HashMap<UserId, Vec<UserId>> = HashMap::new();
        for ev in events {
            if ev.kind != EventKind::Dislike {
                all.entry(ev.actor).or_default().push(ev.target);
            }
        }
        let anchors = all
            .into_iter()
            .map(|(judge, mut targets)| {
                if targets.len() > max_anchors {
                    targets.drain(..targets.len() - max_anchors);
                }
                (judge, targets)
            })
            .collect();
        ImrecLite { anchors, max_anchors }
    }

    pub fn anchors_of(&self, judge: UserId) -> &[UserId] {
        self.anchors.get(&judge).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Directed score: mean pair-head probability of the candidate against
    /// the judge's anchors; 0.5 when the judge has no anchors.
    pub fn directed_score<F: Scalar>(
        &self,
        judge: UserId,
        candidate: UserId,
        models: &SiamesePair<F>,
        store: &EmbeddingStore<F>,
    ) -> Result<f64, ModelError> {
        let anchors = self.anchors_of(judge);
        if anchors.is_empty() {
            return Ok(0.5);
        }
        let cand_emb = store.get(candidate)?;
        let model = &models.for_target_side(candidate.side).model;
        let mut sum = 0.0;
        for anchor in anchors {
            let a_emb = store.get(*anchor)?;
            let d = distance(&a_emb.view(), &cand_emb.view());
            sum += model.head_probability(&d.view()).to_f64_val();
        }
        Ok(sum / anchors.len() as f64)
    }

    pub fn score<F: Scalar>(
        &self,
        x: UserId,
        y: UserId,
        models: &SiamesePair<F>,
        store: &EmbeddingStore<F>,
    ) -> Result<f64, ModelError> {
        let q_xy = self.directed_score(x, y, models, store)?;
        let q_yx = self.directed_score(y, x, models, store)?;
        Ok(harmonic_reciprocal(q_xy, q_yx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Side;
    use crate::siamese::{EncoderSpec, SiameseModel, TrainedSiamese};
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models() -> SiamesePair<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        SiamesePair {
            x_targets: TrainedSiamese {
                model: SiameseModel::new(Side::X, EncoderSpec::miniature(), &mut rng),
                loss_log: vec![],
            },
            y_targets: TrainedSiamese {
                model: SiameseModel::new(Side::Y, EncoderSpec::miniature(), &mut rng),
                loss_log: vec![],
            },
        }
    }

    fn store() -> EmbeddingStore<f64> {
        let mut s = EmbeddingStore::new();
        for i in 0..6 {
            s.insert(UserId::x(i), Array1::from_elem(8, i as f64 * 0.1));
            s.insert(UserId::y(i), Array1::from_elem(8, 0.5 - i as f64 * 0.05));
        }
        s
    }

    #[test]
    fn judge_without_anchors_scores_half() {
        let model = ImrecLite::fit(&[], DEFAULT_MAX_ANCHORS);
        let q = model.directed_score(UserId::x(0), UserId::y(0), &models(), &store()).unwrap();
        assert_eq!(q, 0.5);
    }

    #[test]
    fn anchor_recency_cap() {
        let events: Vec<PreferenceEvent> = (0..9)
            .map(|i| PreferenceEvent::new(i as u64, UserId::x(0), UserId::y(i % 6), EventKind::Like))
            .collect();
        let model = ImrecLite::fit(&events, 5);
        let anchors = model.anchors_of(UserId::x(0));
        assert_eq!(anchors.len(), 5);
        // Most recent five targets (indices 4..9 mod 6).
        assert_eq!(anchors.last(), Some(&UserId::y(2)));
    }

    #[test]
    fn identical_anchor_candidate_collapses_to_zero_distance_probability() {
        // All anchors equal to the candidate: directed score equals the head
        // probability at zero distance, the same constant for any such pair.
        let events = vec![
            PreferenceEvent::new(0, UserId::x(0), UserId::y(1), EventKind::Like),
            PreferenceEvent::new(1, UserId::x(1), UserId::y(1), EventKind::Like),
        ];
        let model = ImrecLite::fit(&events, 5);
        let pair = models();
        let s = store();
        let q0 = model.directed_score(UserId::x(0), UserId::y(1), &pair, &s).unwrap();
        let q1 = model.directed_score(UserId::x(1), UserId::y(1), &pair, &s).unwrap();
        assert_eq!(q0, q1);
        let zero_d = Array1::<f64>::zeros(8);
        let expect = pair.y_targets.model.head_probability(&zero_d.view()).to_f64_val();
        assert!((q0 - expect).abs() < 1e-15);
    }

    #[test]
    fn combined_score_is_symmetric() {
        let events = vec![
            PreferenceEvent::new(0, UserId::x(0), UserId::y(1), EventKind::Like),
            PreferenceEvent::new(1, UserId::y(0), UserId::x(2), EventKind::Like),
        ];
        let model = ImrecLite::fit(&events, 5);
        let pair = models();
        let s = store();
        let a = model.score(UserId::x(0), UserId::y(0), &pair, &s).unwrap();
        let b = model.score(UserId::y(0), UserId::x(0), &pair, &s).unwrap();
        assert_eq!(a, b);
    }
}
