//! Per-user preference histories: the ordered, capped sequence of a user's
//! own past expressions that feeds the sequence model.

use serde::{Deserialize, Serialize};

use crate::events::{UserId, ValidatedEventLog};

/// Default cap on history length.
pub const DEFAULT_HISTORY_CAP: usize = 15;

/// One remembered expression: whom it was about, with what polarity, when.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub target: UserId,
    /// `+1` for like/reciprocate, `-1` for dislike.
    pub polarity: i8,
    pub ts: u64,
}

/// A user's recent expressions, oldest first, all strictly before the
/// reference time used to build it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceHistory {
    pub owner: UserId,
    pub items: Vec<HistoryItem>,
}

impl PreferenceHistory {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }
}

/// Build `user`'s history at `reference_time`: the most recent `cap`
/// expressions strictly before the reference time and no older than
/// `max_age` ticks, oldest first. An empty history is legal.
pub fn build_history(
    user: UserId,
    log: &ValidatedEventLog,
    reference_time: u64,
    cap: usize,
    max_age: u64,
) -> PreferenceHistory {
    let cutoff = reference_time.saturating_sub(max_age);
    let mut items: Vec<HistoryItem> = log
        .actor_events(user)
        .iter()
        .map(|&i| log.events()[i])
        .filter(|ev| ev.ts < reference_time && ev.ts >= cutoff)
        .map(|ev| HistoryItem { target: ev.target, polarity: ev.kind.polarity(), ts: ev.ts })
        .collect();
    if items.len() > cap {
        items.drain(..items.len() - cap);
    }
    PreferenceHistory { owner: user, items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{validate_events, EventKind, PreferenceEvent};

    fn like(ts: u64, a: UserId, t: UserId) -> PreferenceEvent {
        PreferenceEvent::new(ts, a, t, EventKind::Like)
    }

    #[test]
    fn cap_keeps_most_recent() {
        let x = UserId::x(0);
        let events: Vec<_> = (0..20).map(|i| like(i, x, UserId::y(i as u32))).collect();
        let log = validate_events(events).unwrap();
        let h = build_history(x, &log, 100, 15, 1_000);
        assert_eq!(h.len(), 15);
        assert_eq!(h.items.first().unwrap().ts, 5);
        assert_eq!(h.items.last().unwrap().ts, 19);
    }

    #[test]
    fn user_without_events_gets_empty_history() {
        let log = validate_events(vec![like(0, UserId::x(0), UserId::y(0))]).unwrap();
        let h = build_history(UserId::x(9), &log, 10, 15, 1_000);
        assert!(h.is_empty());
    }

    #[test]
    fn age_filter_drops_stale_items() {
        let x = UserId::x(0);
        let log = validate_events(vec![
            like(0, x, UserId::y(0)),
            like(60, x, UserId::y(1)),
            like(70, x, UserId::y(2)),
        ])
        .unwrap();
        // reference 100, max_age 50: cutoff 50, the ts=0 like is too old.
        let h = build_history(x, &log, 100, 15, 50);
        assert_eq!(h.len(), 2);
        assert_eq!(h.items[0].ts, 60);
    }

    #[test]
    fn items_strictly_before_reference_time() {
        let x = UserId::x(0);
        let log = validate_events(vec![like(5, x, UserId::y(0)), like(10, x, UserId::y(1))]).unwrap();
        let h = build_history(x, &log, 10, 15, 1_000);
        assert_eq!(h.len(), 1);
        assert_eq!(h.items[0].ts, 5);
    }

    #[test]
    fn dislike_polarity_is_negative() {
        let x = UserId::x(0);
        let y = UserId::y(0);
        let log = validate_events(vec![
            PreferenceEvent::new(0, y, x, EventKind::Like),
            PreferenceEvent::new(1, x, y, EventKind::Dislike),
        ])
        .unwrap();
        let h = build_history(x, &log, 10, 15, 1_000);
        assert_eq!(h.items[0].polarity, -1);
    }

    #[test]
    fn timestamps_strictly_increasing() {
        let x = UserId::x(0);
        let events: Vec<_> = (0..10).map(|i| like(i * 3, x, UserId::y(i as u32))).collect();
        let log = validate_events(events).unwrap();
        let h = build_history(x, &log, 1_000, 15, 10_000);
        for w in h.items.windows(2) {
            assert!(w[0].ts < w[1].ts);
        }
    }
}
