use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::TokenId;
use crate::error::{invalid, Result};

/// Granularity set used by variable chunking when none is configured.
pub const DEFAULT_GRANULARITIES: [usize; 4] = [32, 64, 128, 256];

/// How content tokens are split into chunks before landmark insertion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChunkingStrategy {
    Fixed { granularity: usize },
    /// One granularity is drawn uniformly per sequence.
    Variable { granularities: Vec<usize> },
    Sentence,
}

impl Default for ChunkingStrategy {
    fn default() -> Self {
        ChunkingStrategy::Variable {
            granularities: DEFAULT_GRANULARITIES.to_vec(),
        }
    }
}

/// Granularity actually applied to one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Tokens(usize),
    Sentence,
}

impl ChunkingStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            ChunkingStrategy::Fixed { granularity } if *granularity < 1 => {
                Err(invalid("granularity must be at least 1"))
            }
            ChunkingStrategy::Variable { granularities } if granularities.is_empty() => {
                Err(invalid("variable granularity set is empty"))
            }
            ChunkingStrategy::Variable { granularities } if granularities.contains(&0) => {
                Err(invalid("granularity must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Resolves the granularity for one sequence. Only `Variable` consumes
    /// randomness (one draw).
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Granularity> {
        self.validate()?;
        Ok(match self {
            ChunkingStrategy::Fixed { granularity } => Granularity::Tokens(*granularity),
            ChunkingStrategy::Variable { granularities } => {
                Granularity::Tokens(granularities[rng.random_range(0..granularities.len())])
            }
            ChunkingStrategy::Sentence => Granularity::Sentence,
        })
    }
}

/// Chunk end offsets for `len` tokens under a resolved granularity.
pub(crate) fn chunk_ends(len: usize, granularity: Granularity, boundaries: &[usize]) -> Vec<usize> {
    match granularity {
        Granularity::Tokens(g) => (1..=len.div_ceil(g)).map(|i| (i * g).min(len)).collect(),
        Granularity::Sentence => {
            let mut ends: Vec<usize> = boundaries
                .iter()
                .copied()
                .filter(|&b| b > 0 && b < len)
                .collect();
            ends.dedup();
            if len > 0 {
                ends.push(len);
            }
            ends
        }
    }
}

/// Splits `tokens` into consecutive chunks.
///
/// `Sentence` requires `sentence_boundaries` (word positions where sentences
/// end, as produced by [`super::sentence_boundaries`]).
pub fn make_chunks<R: Rng + ?Sized>(
    tokens: &[TokenId],
    strategy: &ChunkingStrategy,
    sentence_boundaries: Option<&[usize]>,
    rng: &mut R,
) -> Result<(Vec<Vec<TokenId>>, Granularity)> {
    let granularity = strategy.resolve(rng)?;
    let boundaries = match granularity {
        Granularity::Sentence => sentence_boundaries
            .ok_or_else(|| invalid("sentence chunking requires sentence boundaries"))?,
        Granularity::Tokens(_) => &[],
    };
    let mut start = 0;
    let chunks = chunk_ends(tokens.len(), granularity, boundaries)
        .into_iter()
        .map(|end| {
            let c = tokens[start..end].to_vec();
            start = end;
            c
        })
        .collect();
    Ok((chunks, granularity))
}
