//! Analyses of pooling behaviour: attention span, RoPE decay, directional
//! hits, landmark overhead and planted-key long-context retrieval.

mod decay;
mod directional;
mod longctx;
mod span;

pub use decay::{lmk_overhead, rope_decay_curve, write_curve_csv, Overhead};
pub use directional::{directional_hits, DirectionalConfig, DirectionalHits, REFERENCE_HIT_AT_10};
pub use longctx::{
    content_for_budget, planted_pools, synthetic_longctx_suite, wilson_interval, KeyBagEmbedder, LongCtxConfig,
    LongCtxReport, LongCtxRow, ModelEmbedder, PlantedDoc, PlantedKeyConfig, PlantedKeyGenerator, RandomEmbedder,
    TextEmbedder, Z_95,
};
pub use span::{attention_span_profile, SpanProfile};
