//! Structure-poisoning attacks on graph node-classification models.
//!
//! The toolkit relaxes a graph's adjacency matrix to a symmetric matrix of
//! edge log-probabilities, optimizes those log-probabilities against a
//! two-layer GCN surrogate with approximate hyper-gradients, samples
//! budget-constrained edge flips from the learned probability map, and
//! evaluates the resulting poisoned graphs (victim retraining, transfer
//! statistics, and preprocessing defenses).
//!
//! Modules map onto the pipeline stages:
//!
//! * [`graph`] — immutable graph representation, GCN normalization,
//!   perturbation application.
//! * [`surrogate`] — two-layer GCN with manual backpropagation through both
//!   the weights and the relaxed edge weights.
//! * [`attack`] — the log-probability optimization loop (Gumbel top-k
//!   sampling, single-step adaptation, FOA/FDA hyper-gradients).
//! * [`poison`] — difference scoring and categorical sampling of edge flips,
//!   plus the DICE baseline.
//! * [`defense`] — Jaccard-similarity edge filtering.
//! * [`eval`] — victim retraining, accuracy reports, attack statistics.
//! * [`data`] — dataset ingestion, synthetic generators, file formats.

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod eval;
pub mod graph;
pub mod pipeline;
pub mod poison;
mod sparse;
pub mod surrogate;

pub use error::{DgaError, Result};
pub use graph::{
    FeatureMatrix, FlipOp, Graph, LabelVector, NormalizedAdjacency, PerturbationSet, Split,
};

/// Derives an independent RNG seed for a named sub-stream of a base seed.
///
/// Distinct stages (surrogate init, Gumbel noise, poison sampling, victim
/// runs) each consume their own stream so that adding iterations to one
/// stage never shifts the randomness of another.
pub fn seed_stream(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags for [`seed_stream`].
pub mod streams {
    pub const SURROGATE: u64 = 1;
    pub const GUMBEL: u64 = 2;
    pub const POISON: u64 = 3;
    pub const VICTIM: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const CANDIDATE: u64 = 6;
    pub const EVALUATOR: u64 = 7;
}
