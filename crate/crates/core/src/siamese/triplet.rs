//! Triplet sampling for encoder pretraining.
//!
//! A triplet is drawn from a single judge's events: two faces the judge
//! expressed positive preference for (anchor and positive) and one they
//! disliked (negative). Each triplet expands into a positive pair
//! `(anchor, positive) -> 1` and a negative pair `(anchor, negative) -> 0`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::events::{EventKind, PreferenceEvent, Side, UserId};

/// One sampled triplet. Faces are referenced by user id; the judge sits on
/// the opposite side of all three.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub judge: UserId,
    pub anchor: UserId,
    pub positive: UserId,
    pub negative: UserId,
}

impl Triplet {
    /// Side of the faces being judged.
    pub fn target_side(&self) -> Side {
        self.anchor.side
    }
}

/// Per-judge liked/disliked target lists, in event order.
fn judge_pools(events: &[PreferenceEvent]) -> BTreeMap<UserId, (Vec<UserId>, Vec<UserId>)> {
    let mut pools: BTreeMap<UserId, (Vec<UserId>, Vec<UserId>)> = BTreeMap::new();
    for ev in events {
        let entry = pools.entry(ev.actor).or_default();
        match ev.kind {
            EventKind::Like | EventKind::Reciprocate => entry.0.push(ev.target),
            EventKind::Dislike => entry.1.push(ev.target),
        }
    }
    pools
}

/// Sample `n` triplets from the given events, with replacement, uniformly
/// over eligible judges (>= 2 likes and >= 1 dislike). Deterministic for a
/// given seed. Emits a warning when `n` exceeds the number of distinct
/// triplets available.
pub fn sample_triplets(events: &[PreferenceEvent], n: usize, seed: u64) -> Result<Vec<Triplet>, ModelError> {
    let pools = judge_pools(events);
    let eligible: Vec<(&UserId, &(Vec<UserId>, Vec<UserId>))> =
        pools.iter().filter(|(_, (likes, dislikes))| likes.len() >= 2 && !dislikes.is_empty()).collect();
    if eligible.is_empty() {
        let side = events.first().map(|e| e.actor.side).unwrap_or(Side::X);
        return Err(ModelError::InsufficientJudges { side });
    }

    let distinct: usize = eligible
        .iter()
        .map(|(_, (likes, dislikes))| likes.len() * (likes.len() - 1) * dislikes.len())
        .sum();
    if n > distinct {
        log::warn!("requested {n} triplets but only {distinct} distinct ones exist; sampling with replacement");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (judge, (likes, dislikes)) = eligible[rng.gen_range(0..eligible.len())];
        let anchor_idx = rng.gen_range(0..likes.len());
        let mut pos_idx = rng.gen_range(0..likes.len() - 1);
        if pos_idx >= anchor_idx {
            pos_idx += 1;
        }
        let negative = *dislikes.choose(&mut rng).expect("non-empty dislikes");
        out.push(Triplet { judge: *judge, anchor: likes[anchor_idx], positive: likes[pos_idx], negative });
    }
    Ok(out)
}

/// Judges eligible to produce triplets on a given target side.
pub fn eligible_judges(events: &[PreferenceEvent], target_side: Side) -> usize {
    judge_pools(events)
        .iter()
        .filter(|(judge, (likes, dislikes))| {
            judge.side == target_side.opposite() && likes.len() >= 2 && !dislikes.is_empty()
        })
        .count()
}
