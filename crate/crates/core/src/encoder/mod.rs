//! Bidirectional transformer encoder with rotary position embeddings.
//!
//! Blocks are pre-norm (`x + Attn(LN(x))`, then `x + FFN(LN(x))`) with a
//! final layer norm. Attention is global in every layer, positions enter
//! only through RoPE, and padded columns are excluded before the softmax.

mod block;
mod config;
mod forward;
mod params;
mod rope;

pub(crate) use block::{block_backward, block_forward, BlockShape};
pub use config::EncoderConfig;
pub(crate) use forward::{backward, forward_train};
pub use forward::{attention_logits, forward, forward_at, AttentionTrace, HiddenStates};
pub use params::{EncoderParams, LayerParams, EMBED_INIT_STD};
pub(crate) use rope::RopeTable;
pub use rope::{rope_frequencies, rotate};
