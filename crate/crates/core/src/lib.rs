//! Landmark (LMK) pooling for dense text embeddings.
//!
//! The crate bundles everything needed to compare pooling strategies end to
//! end at small scale: a word-level tokenizer with landmark insertion, a
//! bidirectional RoPE transformer encoder with hand-written backward passes,
//! CLS / mean / Mean@k / landmark / latent-attention pooling, InfoNCE
//! training, exact retrieval with ranking metrics, and a set of diagnostics
//! (attention span, RoPE decay, directional hits, planted-key long-context
//! retrieval).

pub mod diagnostics;
pub mod encoder;
mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pooling;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use model::Model;

/// Version string recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
