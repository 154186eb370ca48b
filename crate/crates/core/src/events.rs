//! Preference-event domain types, log validation and labeled-pair extraction.
//!
//! The event log is the atom of every dataset in this crate: a sequence of
//! timestamped directed expressions (`Like`, `Dislike`, `Reciprocate`)
//! between users on two disjoint sides. A `Dislike` and a `Reciprocate` are
//! responses to a received `Like`; a mutual pair of positive expressions is
//! a match.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Which of the two disjoint user sets a user belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    X,
    Y,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::X => Side::Y,
            Side::Y => Side::X,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Side::X => 'x',
            Side::Y => 'y',
        }
    }
}

/// A user identifier. Carries its side so bipartiteness is checkable without
/// a lookup table. Renders as `x12` / `y7` in logs and manifests.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId {
    pub side: Side,
    pub index: u32,
}

impl UserId {
    pub fn new(side: Side, index: u32) -> Self {
        UserId { side, index }
    }

    pub fn x(index: u32) -> Self {
        UserId::new(Side::X, index)
    }

    pub fn y(index: u32) -> Self {
        UserId::new(Side::Y, index)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.side.letter(), self.index)
    }
}

impl fmt::Debug for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for UserId {
    type Err = LogParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let side = match s.chars().next() {
            Some('x') => Side::X,
            Some('y') => Side::Y,
            _ => return Err(LogParseError::BadUserId(s.to_string())),
        };
        let index = s[1..]
            .parse::<u32>()
            .map_err(|_| LogParseError::BadUserId(s.to_string()))?;
        Ok(UserId { side, index })
    }
}

impl Serialize for UserId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UserId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The kind of a directed preference expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Like,
    Dislike,
    Reciprocate,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Like => "LIKE",
            EventKind::Dislike => "DISLIKE",
            EventKind::Reciprocate => "RECIPROCATE",
        }
    }

    /// Polarity of the expression as seen by sequence models.
    pub fn polarity(self) -> i8 {
        match self {
            EventKind::Like | EventKind::Reciprocate => 1,
            EventKind::Dislike => -1,
        }
    }
}

impl FromStr for EventKind {
    type Err = LogParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LIKE" => Ok(EventKind::Like),
            "DISLIKE" => Ok(EventKind::Dislike),
            "RECIPROCATE" => Ok(EventKind::Reciprocate),
            other => Err(LogParseError::BadKind(other.to_string())),
        }
    }
}

/// One timestamped directed expression. Timestamps are abstract integer
/// ticks; ties are broken by position in the input sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceEvent {
    pub ts: u64,
    pub actor: UserId,
    pub target: UserId,
    pub kind: EventKind,
}

impl PreferenceEvent {
    pub fn new(ts: u64, actor: UserId, target: UserId, kind: EventKind) -> Self {
        PreferenceEvent { ts, actor, target, kind }
    }

    /// The unordered pair key `(x-side user, y-side user)`.
    pub fn pair_key(&self) -> (UserId, UserId) {
        if self.actor.side == Side::X {
            (self.actor, self.target)
        } else {
            (self.target, self.actor)
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("event {seq}: actor {actor} and target {target} are on the same side")]
    BipartitenessViolation { seq: usize, actor: UserId, target: UserId },
    #[error("event {seq}: reciprocation {actor}->{target} without a prior like {target}->{actor}")]
    DanglingReciprocation { seq: usize, actor: UserId, target: UserId },
    #[error("event {seq}: duplicate expression {actor}->{target} ({kind:?})")]
    DuplicateEvent { seq: usize, actor: UserId, target: UserId, kind: EventKind },
}

#[derive(Debug, Error)]
pub enum LogParseError {
    #[error("bad user id: {0:?}")]
    BadUserId(String),
    #[error("bad event kind: {0:?}")]
    BadKind(String),
    #[error("line {0}: expected 4 tab-separated fields")]
    BadLine(usize),
    #[error("line {line}: bad timestamp {value:?}")]
    BadTimestamp { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An event log that passed [`validate_events`]. Events are held in
/// `(ts, input sequence)` order; a per-actor index gives each user's own
/// expressions in order.
#[derive(Clone, Debug)]
pub struct ValidatedEventLog {
    events: Vec<PreferenceEvent>,
    by_actor: BTreeMap<UserId, Vec<usize>>,
}

impl ValidatedEventLog {
    pub fn events(&self) -> &[PreferenceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Indices (into `events()`) of the expressions made by `user`, in order.
    pub fn actor_events(&self, user: UserId) -> &[usize] {
        self.by_actor.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn actors(&self) -> impl Iterator<Item = UserId> + '_ {
        self.by_actor.keys().copied()
    }
}

/// Validate an event log: bipartite sides, reciprocations answering a real
/// prior like, no duplicate expressions and at most one response per like.
///
/// Returns the log ordered by `(ts, input sequence)` with a per-actor index.
pub fn validate_events(events: Vec<PreferenceEvent>) -> Result<ValidatedEventLog, EventError> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].ts, i));

    let mut liked: HashSet<(UserId, UserId)> = HashSet::new();
    let mut responded: HashSet<(UserId, UserId)> = HashSet::new();
    let mut seen: HashSet<(UserId, UserId, EventKind)> = HashSet::new();

    let mut sorted = Vec::with_capacity(events.len());
    for &i in &order {
        let ev = events[i];
        if ev.actor.side == ev.target.side {
            return Err(EventError::BipartitenessViolation { seq: i, actor: ev.actor, target: ev.target });
        }
        if !seen.insert((ev.actor, ev.target, ev.kind)) {
            return Err(EventError::DuplicateEvent { seq: i, actor: ev.actor, target: ev.target, kind: ev.kind });
        }
        match ev.kind {
            EventKind::Like => {
                liked.insert((ev.actor, ev.target));
            }
            EventKind::Reciprocate => {
                // Must answer an open like from the target.
                if !liked.contains(&(ev.target, ev.actor)) {
                    return Err(EventError::DanglingReciprocation { seq: i, actor: ev.actor, target: ev.target });
                }
                if !responded.insert((ev.target, ev.actor)) {
                    return Err(EventError::DuplicateEvent { seq: i, actor: ev.actor, target: ev.target, kind: ev.kind });
                }
            }
            EventKind::Dislike => {
                // A dislike answering a like resolves the pair; a second
                // response of either kind is rejected. A dislike with no
                // prior like is legal (the tuple just never yields a label).
                if liked.contains(&(ev.target, ev.actor)) && !responded.insert((ev.target, ev.actor)) {
                    return Err(EventError::DuplicateEvent { seq: i, actor: ev.actor, target: ev.target, kind: ev.kind });
                }
            }
        }
        sorted.push(ev);
    }

    let mut by_actor: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
    for (idx, ev) in sorted.iter().enumerate() {
        by_actor.entry(ev.actor).or_default().push(idx);
    }

    Ok(ValidatedEventLog { events: sorted, by_actor })
}

/// Outcome class of a labeled pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchLabel {
    /// Like answered by a reciprocation.
    Match,
    /// Like answered by a dislike.
    LikeDislike,
}

impl MatchLabel {
    pub fn as_f64(self) -> f64 {
        match self {
            MatchLabel::Match => 1.0,
            MatchLabel::LikeDislike => 0.0,
        }
    }

    pub fn is_match(self) -> bool {
        matches!(self, MatchLabel::Match)
    }
}

/// A like that received an answer: the supervised unit for match prediction.
/// `x` is the initiator, `y` the responder; `reference_time` is the
/// timestamp of the deciding response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub x: UserId,
    pub y: UserId,
    pub label: MatchLabel,
    pub reference_time: u64,
}

/// Extract every answered like from the log. Likes answered by a
/// reciprocation become matches; likes answered by a dislike become
/// like-dislike tuples; unanswered likes are dropped.
pub fn extract_labeled_pairs(log: &ValidatedEventLog) -> Vec<LabeledPair> {
    let mut pending: HashMap<(UserId, UserId), ()> = HashMap::new();
    let mut pairs = Vec::new();
    for ev in log.events() {
        match ev.kind {
            EventKind::Like => {
                pending.insert((ev.actor, ev.target), ());
            }
            EventKind::Reciprocate => {
                if pending.remove(&(ev.target, ev.actor)).is_some() {
                    pairs.push(LabeledPair {
                        x: ev.target,
                        y: ev.actor,
                        label: MatchLabel::Match,
                        reference_time: ev.ts,
                    });
                }
            }
            EventKind::Dislike => {
                if pending.remove(&(ev.target, ev.actor)).is_some() {
                    pairs.push(LabeledPair {
                        x: ev.target,
                        y: ev.actor,
                        label: MatchLabel::LikeDislike,
                        reference_time: ev.ts,
                    });
                }
            }
        }
    }
    pairs
}

// ---------------------------------------------------------------------------
// Text serialization: one event per line, `ts<TAB>actor<TAB>target<TAB>kind`.
// Field order is fixed so logs are diffable.
// ---------------------------------------------------------------------------

pub fn format_event(ev: &PreferenceEvent) -> String {
    format!("{}\t{}\t{}\t{}", ev.ts, ev.actor, ev.target, ev.kind.as_str())
}

pub fn parse_event(line: &str, lineno: usize) -> Result<PreferenceEvent, LogParseError> {
    let mut parts = line.split('\t');
    let (ts, actor, target, kind) = match (parts.next(), parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), Some(c), Some(d), None) => (a, b, c, d),
        _ => return Err(LogParseError::BadLine(lineno)),
    };
    let ts = ts
        .parse::<u64>()
        .map_err(|_| LogParseError::BadTimestamp { line: lineno, value: ts.to_string() })?;
    Ok(PreferenceEvent {
        ts,
        actor: actor.parse()?,
        target: target.parse()?,
        kind: kind.parse()?,
    })
}

pub fn events_to_string(events: &[PreferenceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&format_event(ev));
        out.push('\n');
    }
    out
}

pub fn events_from_str(text: &str) -> Result<Vec<PreferenceEvent>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_event(l, i + 1))
        .collect()
}

/// Content digest of an event collection over its canonical text form.
/// Used for split provenance: training records the digest of the events it
/// consumed and evaluation refuses digests that overlap the eval split.
pub fn event_digest(events: &[PreferenceEvent]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(events_to_string(events).as_bytes());
    hex::encode(hasher.finalize())
}
