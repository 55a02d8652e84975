//! Streaming multi-interest retrieval.
//!
//! Each user is modelled as a set of *interest units*: clusters of clicked
//! documents summarized by the last clicked title and the most frequent key
//! terms. Units are updated click by click ([`unit_store`]), and documents are
//! retrieved by querying a vector [`index`] once per unit and ranking the
//! union by summed similarity to all units ([`retrieval`]).
//!
//! The [`eval`] harness computes sampled HR@N / NDCG@N, [`simulator`]
//! generates synthetic click streams with interest drift, and [`study`]
//! runs the ablations on top of both.

pub mod embedding;
pub mod eval;
pub mod index;
pub mod keyterm;
pub mod par;
pub mod records;
pub mod retrieval;
pub mod simulator;
pub mod study;
pub mod text;
pub mod unit_store;

pub use embedding::{similarity, Embedder, EmbedderConfig, Embedding, TextEmbedder};
pub use index::{DocumentIndex, IndexConfig, IndexMode};
pub use keyterm::{StopwordExtractor, TermCounts};
pub use par::Parallelism;
pub use retrieval::{retrieve, RankedResult, RetrievalConfig};
pub use unit_store::{
    update_profile, Document, InterestUnit, ProfileStore, UnitConfig, UserProfile,
};
