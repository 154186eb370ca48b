//! Synthetic dating world: users with latent traits, a ground-truth
//! preference oracle with temporal taste drift, procedurally rendered faces
//! and a browsing simulator that emits preference events.
//!
//! The oracle stands in for the (unreleasable) behavior of real users, so
//! every model in this crate can be scored against exact ground truth.

mod render;
mod world;

pub use render::{render_face, RenderedImage};
pub use world::{
    generate_world, oracle_like_prob, oracle_match_prob, sample_events, taste_at, SyntheticUser, SyntheticWorld,
    WorldConfig,
};
