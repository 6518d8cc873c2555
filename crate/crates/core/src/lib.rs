//! Multi-chain multi-hop rule learning for knowledge-graph completion.
//!
//! The crate is organised bottom-up:
//!
//! - [`kg`] loads and indexes the triple store and per-relation task splits.
//! - [`chains`] enumerates bounded-depth relation chains, builds per-relation
//!   chain vocabularies and encodes query pairs as availability vectors.
//! - [`neural`] is a small dense network core (MLP / linear scorers, softmax
//!   cross-entropy, exact gradients, Adam).
//! - [`game`] trains the generator / predictor / complement-predictor game.
//! - [`eval`] holds ranking metrics, run modes and the planted-rule benchmark.
//! - [`pipeline`] wires everything into the `mcmh` command-line tool.

pub mod chains;
pub mod error;
pub mod eval;
pub mod game;
pub mod kg;
pub mod neural;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
