//! Word sense disambiguation from sentence context.
//!
//! The crate trains a held-out-word LSTM language model whose projected
//! final hidden state embeds a sentence context, builds per-sense centroid
//! vectors from labeled examples, classifies by nearest centroid under
//! cosine similarity, and optionally refines predictions with graph label
//! propagation over labeled, unlabeled, and query sentences. A
//! bag-of-word-vectors backend provides an order-insensitive baseline, and
//! an evaluation harness scores predictions with precision/recall/F1,
//! density sweeps, and ablations.
//!
//! Everything is deterministic: explicit seeds drive all randomness, maps
//! iterate in sorted order, and computation is single-threaded, so a rerun
//! with the same configuration reproduces outputs byte for byte.

pub mod classify;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embed;
mod error;
pub mod eval;
pub mod lm;
pub mod propagate;
pub mod synth;

pub use error::{Error, Result};
