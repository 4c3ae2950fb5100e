//! Moral sentiment change tracing for timestamped corpora.
//!
//! The pipeline runs in stages:
//!
//! 1. [`embedding`] loads static word vectors.
//! 2. [`lexicon`] parses a moral seed lexicon and builds the tiered centroids.
//! 3. [`corpus`] ingests documents, resolves entity aliases and turns each
//!    entity-bearing document into a single vector.
//! 4. [`classifier`] maps vectors onto the relevance / polarity / foundation
//!    hierarchy with a distance softmax.
//! 5. [`timecourse`] averages document probabilities per time bin and finds
//!    change points with a sliding-window permutation test.
//! 6. [`topics`] fits chained per-slice Gibbs LDA to supply `P(topic | doc)`.
//! 7. [`tracer`] attributes a change to topics and document sets and scores
//!    source coherence against baselines.
//! 8. [`evaluation`] scores model judgments against annotated ground truth.
//!
//! [`pipeline`] wires these together behind a reproducible [`pipeline::RunConfig`].

pub mod classifier;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod lexicon;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod timecourse;
pub mod topics;
pub mod tracer;

pub use error::{Error, Result};
