//! The temporal match predictor: an LSTM reads a user's preference history
//! as a sequence of signed embedding-difference vectors against a candidate,
//! a dense branch reads the candidate's own embedding, and a sigmoid output
//! produces a directed score. The reciprocal score averages the two
//! directions and is exactly symmetric.

mod model;
mod train;

pub use model::{
    directed_score, history_step_vectors, match_probability, recommend_top_k, sequence_batch, EmbeddingStore,
    TirrModel, TirrSpec,
};
pub use train::{build_examples, match_probabilities_batch, train_tirr, PairExample, TirrTrainConfig, TrainedTirr};
