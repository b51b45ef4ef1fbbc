//! Directional hits: does a chunk encoded on its own retrieve the landmark
//! that closes it (left hit) or the one that opens it (right hit)?
//!
//! Chunk `j` sits between landmark `j - 1` on its left and landmark `j` on
//! its right. Only chunks with both neighbours (j >= 1) are scored.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::pooling::{pool_marker_mean, Marker};
use crate::tokenizer::{landmark_encode, ChunkingStrategy, TokenId, LMK};

/// Hit@10 of full-scale trained models at granularity 32. Reference only;
/// toy models are not expected to reach it.
pub const REFERENCE_HIT_AT_10: f64 = 0.58;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalConfig {
    pub granularity: usize,
    pub k: usize,
    pub max_len: usize,
    /// Minimum chunks per document; `None` means `2 * k`.
    pub min_chunks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalHits {
    pub k: usize,
    pub granularity: usize,
    pub documents: usize,
    /// Scored chunks over all documents.
    pub chunks: usize,
    pub left: f64,
    pub right: f64,
    pub any: f64,
}

fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
    m
}

pub fn directional_hits(model: &Model, docs: &[Vec<TokenId>], config: &DirectionalConfig) -> Result<DirectionalHits> {
    if config.k == 0 || config.granularity == 0 {
        return Err(invalid("k and granularity must be at least 1"));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let needed = config.min_chunks.unwrap_or(2 * config.k).max(2);
    let fixed = ChunkingStrategy::Fixed { granularity: config.granularity };
    // fixed chunking never draws
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut left, mut right, mut any, mut scored) = (0usize, 0usize, 0usize, 0usize);
    for doc in docs {
        let seq = landmark_encode(doc, None, &fixed, config.max_len, LMK, &mut rng)?;
        let landmarks = seq.marker_positions.len();
        if landmarks < needed {
            return Err(Error::TooFewChunks { needed, got: landmarks });
        }
        let states = model.forward(&seq, false)?.states;
        let lmk = unit_rows(states.select(ndarray::Axis(0), &seq.marker_positions));
        let content = seq.content_ids();
        for (j, chunk) in content.chunks(config.granularity).enumerate().skip(1) {
            let alone = landmark_encode(chunk, None, &fixed, config.max_len, LMK, &mut rng)?;
            let h = model.forward(&alone, false)?;
            let e = pool_marker_mean(&h, &alone, Marker::Landmark)?.normalize();
            let scores = lmk.dot(&e.vector);
            let mut order: Vec<usize> = (0..landmarks).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let top = &order[..config.k.min(landmarks)];
            let l = top.contains(&j);
            let r = top.contains(&(j - 1));
            left += l as usize;
            right += r as usize;
            any += (l || r) as usize;
            scored += 1;
        }
    }
    let rate = |c: usize| c as f64 / scored as f64;
    Ok(DirectionalHits {
        k: config.k,
        granularity: config.granularity,
        documents: docs.len(),
        chunks: scored,
        left: rate(left),
        right: rate(right),
        any: rate(any),
    })
}
