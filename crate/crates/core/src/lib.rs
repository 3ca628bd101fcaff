//! Data-active pre-training for graph encoders at desk scale.
//!
//! The pipeline selects which graphs (and which samples inside them) a
//! contrastive encoder should see next, instead of training on everything.
//! Candidate graphs are ranked by a time-annealed mix of structural
//! properties (network entropy, density, average degree, degree variance,
//! scale-free exponent) and the model's own predictive uncertainty; samples
//! whose loss falls below a threshold are dropped; a quadratic proximal
//! penalty anchored at the previous graph's parameters counters forgetting.
//! Frozen embeddings are evaluated with a logistic probe.
//!
//! Modules, bottom up: [`rng`] (deterministic randomness), [`graph`]
//! (compact undirected graphs), [`stats`] (small numeric helpers),
//! [`properties`] (structural descriptors), [`synthgen`] (configuration
//! model generator), [`linalg`] (dense symmetric eigensolver), [`sampler`]
//! (random-walk subgraph instances), [`encoder`] (message-passing encoder
//! with hand-written gradients), [`objective`] (contrastive loss,
//! uncertainty, proximal penalty), [`selector`] (graph scoring and
//! scheduling), [`trainer`] (the training loop and baselines), [`probe`]
//! (frozen-embedding evaluation), [`config`] + [`cli`] (the command-line
//! front end).

pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod objective;
pub mod parallel;
pub mod probe;
pub mod properties;
pub mod rng;
pub mod sampler;
pub mod selector;
pub mod stats;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
