//! Reciprocal recommendation lab.
//!
//! Everything needed to study mutual-match prediction end to end on a
//! synthetic dating world: event-log domain types and dataset splitting,
//! a procedural face renderer with a ground-truth preference oracle,
//! a Siamese image encoder with an LSTM match predictor on top (TIRR),
//! simplified comparison baselines (RECON-lite, ImRec-lite, LFRR-lite)
//! and a reciprocal evaluation kit.
//!
//! All randomness is seeded and all training is deterministic, so full
//! pipeline runs are reproducible byte for byte.

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod events;
pub mod evalkit;
pub mod history;
pub mod imgproc;
pub mod nn;
pub mod siamese;
pub mod split;
pub mod synth;
pub mod tirr;

pub use events::{EventKind, LabeledPair, MatchLabel, PreferenceEvent, Side, UserId, ValidatedEventLog};
pub use history::{HistoryItem, PreferenceHistory, DEFAULT_HISTORY_CAP};
pub use split::DatasetBundle;

/// Dimension of the encoder output space; also the per-step input width of
/// the sequence model.
pub const EMBED_DIM: usize = 128;

/// Fixed sequence length of the match predictor (histories are capped here).
pub const SEQ_LEN: usize = 15;
