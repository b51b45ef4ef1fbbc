//! Word-level tokenization with landmark insertion.

mod chunking;
mod sequence;
mod text;
mod vocab;

pub use chunking::{make_chunks, ChunkingStrategy, Granularity, DEFAULT_GRANULARITIES};
pub use sequence::{
    landmark_encode, landmark_tokenize, standard_encode, standard_tokenize, TokenSequence, UNLIMITED,
};
pub(crate) use sequence::is_structural;
pub use text::{sentence_boundaries, split_words};
pub use vocab::{
    encode_text, TokenId, Vocabulary, CLS, LMK, MASK, NUM_SPECIAL, PAD, SEP, SPECIAL_TOKENS, UNK,
};
