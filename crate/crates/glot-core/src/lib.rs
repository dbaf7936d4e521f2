//! Graph-based pooling over frozen-model token hidden states.
//!
//! A sentence's token hidden states are turned into a sparse similarity
//! graph, refined by a small trainable GNN, and collapsed into one vector
//! by an attention readout. The crate also ships the baseline poolers
//! (mean, max, boundary token, adaptive scoring), task heads and losses,
//! a deterministic trainer, evaluation metrics, a binary hidden-state
//! cache format, and a synthetic signal-dilution dataset generator.
//!
//! Inner loops that are data-parallel across sentences or samples run on
//! rayon by default; disabling the `parallel` feature swaps in sequential
//! fallbacks with identical outputs.

pub mod data;
pub mod diagnostic;
pub mod error;
pub mod graph;
pub mod gnn;
pub mod heads;
pub mod metrics;
pub mod numeric;
pub mod par;
pub mod pooling;
pub mod test_utils;
pub mod train;

pub use error::{GlotError, Result};
pub use numeric::{Matrix, ParamId, ParamStore, Tape};
