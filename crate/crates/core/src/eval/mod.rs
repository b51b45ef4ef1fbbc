//! Corpus embedding, exact search and ranking metrics.

mod corpus;
mod metrics;
mod search;

pub use corpus::{Corpus, Hit, Qrels, Record, Run};
pub use metrics::{evaluate, ndcg_at_k, MetricReport, QueryMetrics};
pub use search::{embed_corpus, search, search_all};
