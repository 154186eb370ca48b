//! Three-way event-disjoint dataset splitting.
//!
//! The pipeline trains its three stages on three disjoint event sets:
//! encoder pretraining, match-model training and evaluation. Events are
//! assigned per unordered user pair so a like and its response can never
//! straddle two splits.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventKind, PreferenceEvent, UserId, ValidatedEventLog};

/// Role of a split within the training protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRole {
    /// Encoder pretraining events.
    Siamese,
    /// Match-model training events.
    Match,
    /// Held-out evaluation events.
    Eval,
}

impl SplitRole {
    pub const ALL: [SplitRole; 3] = [SplitRole::Siamese, SplitRole::Match, SplitRole::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Siamese => "siamese",
            SplitRole::Match => "match",
            SplitRole::Eval => "eval",
        }
    }
}

/// The three pairwise event-disjoint splits. Users may appear in several
/// splits; expressions never do.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub siamese_set: Vec<PreferenceEvent>,
    pub match_set: Vec<PreferenceEvent>,
    pub eval_set: Vec<PreferenceEvent>,
}

impl DatasetBundle {
    pub fn by_role(&self, role: SplitRole) -> &[PreferenceEvent] {
        match role {
            SplitRole::Siamese => &self.siamese_set,
            SplitRole::Match => &self.match_set,
            SplitRole::Eval => &self.eval_set,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("fractions must be non-negative and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("split {role:?} received zero match pairs")]
    EmptySplit { role: SplitRole },
}

/// Split the log into three event-disjoint sets, keeping each unordered
/// user pair whole within one split. Deterministic for a given seed.
///
/// Fractions apply in expectation at pair granularity; a split that ends up
/// with no match pair at all is an error.
pub fn split_three_way(
    log: &ValidatedEventLog,
    fractions: [f64; 3],
    seed: u64,
) -> Result<DatasetBundle, SplitError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(SplitError::InvalidFractions(fractions));
    }

    // Group event indices by unordered pair, in deterministic key order.
    let mut by_pair: BTreeMap<(UserId, UserId), Vec<usize>> = BTreeMap::new();
    for (i, ev) in log.events().iter().enumerate() {
        by_pair.entry(ev.pair_key()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for indices in by_pair.values() {
        let u: f64 = rng.gen();
        let slot = if u < fractions[0] {
            0
        } else if u < fractions[0] + fractions[1] {
            1
        } else {
            2
        };
        assignment[slot].extend_from_slice(indices);
    }

    let mut sets: Vec<Vec<PreferenceEvent>> = assignment
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            idx.into_iter().map(|i| log.events()[i]).collect()
        })
        .collect();

    // Pair-atomic assignment keeps a reciprocation with its like, so a match
    // pair exists in a split iff the split contains a reciprocation.
    for (role, set) in SplitRole::ALL.iter().zip(&sets) {
        if !set.iter().any(|ev| ev.kind == EventKind::Reciprocate) {
            return Err(SplitError::EmptySplit { role: *role });
        }
    }

    let eval_set = sets.pop().unwrap();
    let match_set = sets.pop().unwrap();
    let siamese_set = sets.pop().unwrap();
    Ok(DatasetBundle { siamese_set, match_set, eval_set })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{validate_events, EventKind, PreferenceEvent};

    fn sample_log(n_pairs: u32) -> ValidatedEventLog {
        // Every pair gets a like and a response so all splits see matches.
        let mut events = Vec::new();
        let mut ts = 0;
        for i in 0..n_pairs {
            let x = UserId::x(i % 40);
            let y = UserId::y(i / 40 + 100 * (i % 2));
            events.push(PreferenceEvent::new(ts, x, y, EventKind::Like));
            let kind = if i % 3 == 0 { EventKind::Dislike } else { EventKind::Reciprocate };
            events.push(PreferenceEvent::new(ts + 1, y, x, kind));
            ts += 2;
        }
        validate_events(events).unwrap()
    }

    #[test]
    fn partition_property() {
        let log = sample_log(500);
        let bundle = split_three_way(&log, [0.5, 0.3, 0.2], 7).unwrap();
        let total = bundle.siamese_set.len() + bundle.match_set.len() + bundle.eval_set.len();
        assert_eq!(total, log.len());

        let mut union: Vec<PreferenceEvent> = Vec::new();
        union.extend_from_slice(&bundle.siamese_set);
        union.extend_from_slice(&bundle.match_set);
        union.extend_from_slice(&bundle.eval_set);
        union.sort_by_key(|e| (e.ts, e.actor.index, e.target.index));
        let mut input: Vec<PreferenceEvent> = log.events().to_vec();
        input.sort_by_key(|e| (e.ts, e.actor.index, e.target.index));
        assert_eq!(union, input);
    }

    #[test]
    fn deterministic_given_seed() {
        let log = sample_log(200);
        let a = split_three_way(&log, [0.5, 0.3, 0.2], 7).unwrap();
        let b = split_three_way(&log, [0.5, 0.3, 0.2], 7).unwrap();
        assert_eq!(a.siamese_set, b.siamese_set);
        assert_eq!(a.match_set, b.match_set);
        assert_eq!(a.eval_set, b.eval_set);
        let c = split_three_way(&log, [0.5, 0.3, 0.2], 8).unwrap();
        assert_ne!(a.siamese_set, c.siamese_set);
    }

    #[test]
    fn degenerate_fraction_gives_empty_split() {
        let log = sample_log(50);
        let err = split_three_way(&log, [1.0, 0.0, 0.0], 7).unwrap_err();
        assert!(matches!(err, SplitError::EmptySplit { .. }));
    }

    #[test]
    fn bad_fractions_rejected() {
        let log = sample_log(10);
        assert!(matches!(
            split_three_way(&log, [0.5, 0.5, 0.5], 7),
            Err(SplitError::InvalidFractions(_))
        ));
        assert!(matches!(
            split_three_way(&log, [-0.2, 0.6, 0.6], 7),
            Err(SplitError::InvalidFractions(_))
        ));
    }

    #[test]
    fn pairs_stay_whole() {
        let log = sample_log(300);
        let bundle = split_three_way(&log, [0.4, 0.4, 0.2], 3).unwrap();
        for (i, set) in [&bundle.siamese_set, &bundle.match_set, &bundle.eval_set].iter().enumerate() {
            for ev in set.iter() {
                let key = ev.pair_key();
                for (j, other) in [&bundle.siamese_set, &bundle.match_set, &bundle.eval_set].iter().enumerate() {
                    if i != j {
                        assert!(
                            !other.iter().any(|o| o.pair_key() == key),
                            "pair {key:?} appears in two splits"
                        );
                    }
                }
            }
        }
    }
}
