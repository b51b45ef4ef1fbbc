use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chunking::{chunk_ends, ChunkingStrategy, Granularity};
use super::text::sentence_boundaries;
use super::vocab::{TokenId, Vocabulary, CLS, PAD, SEP};
use crate::error::{invalid, Result};

/// Use as `max_len` to disable truncation.
pub const UNLIMITED: usize = usize::MAX;

/// Encoder input: ids, attention mask and the positions of pooling markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub mask: Vec<u8>,
    /// Inserted marker positions (landmarks, inference-time CLS markers or the
    /// closing SEP). The leading CLS is never listed.
    pub marker_positions: Vec<usize>,
    pub content_length: usize,
    pub granularity_used: Option<Granularity>,
}

impl TokenSequence {
    /// Builds a sequence from raw ids; every id is unmasked. Marker positions
    /// are the non-leading occurrences of `marker`.
    pub fn from_ids(ids: Vec<TokenId>, marker: TokenId) -> Self {
        let marker_positions = ids
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &id)| id == marker)
            .map(|(i, _)| i)
            .collect();
        let content_length = ids.iter().filter(|&&id| !is_structural(id)).count();
        Self {
            mask: vec![1; ids.len()],
            ids,
            marker_positions,
            content_length,
            granularity_used: None,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unmasked positions.
    pub fn active_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Appends PAD positions (mask 0) up to `total` tokens.
    pub fn padded(mut self, total: usize) -> Self {
        while self.ids.len() < total {
            self.ids.push(PAD);
            self.mask.push(0);
        }
        self
    }

    /// Unmasked content ids in order (CLS, SEP and PAD removed).
    pub fn content_ids(&self) -> Vec<TokenId> {
        self.ids
            .iter()
            .zip(&self.mask)
            .filter(|(&id, &m)| m == 1 && !is_structural(id))
            .map(|(&id, _)| id)
            .collect()
    }

    /// Positions of unmasked content tokens.
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.ids.len())
            .filter(|&i| self.mask[i] == 1 && !is_structural(self.ids[i]))
            .collect()
    }
}

/// CLS, SEP and PAD frame the content; MASK and UNK count as content.
pub(crate) fn is_structural(id: TokenId) -> bool {
    matches!(id, CLS | SEP | PAD)
}

/// Largest prefix length whose landmark encoding fits in `max_len`.
fn budgeted_length(len: usize, max_len: usize, granularity: Granularity, boundaries: &[usize]) -> usize {
    let fits = |n: usize| -> bool {
        let markers = chunk_ends(n, granularity, boundaries).len().max(1);
        n.saturating_add(markers).saturating_add(1) <= max_len
    };
    if fits(len) {
        return len;
    }
    // cost is monotone in n, so binary search the last n that fits
    let (mut lo, mut hi) = (0usize, len);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Landmark encoding of already-tokenized content:
/// `[CLS] z1 [M] z2 [M] ... zn [M]`, truncated to the token budget.
pub fn landmark_encode<R: Rng + ?Sized>(
    tokens: &[TokenId],
    boundaries: Option<&[usize]>,
    strategy: &ChunkingStrategy,
    max_len: usize,
    marker: TokenId,
    rng: &mut R,
) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(invalid(format!("max_len {max_len} cannot hold [CLS] and a marker")));
    }
    let granularity = strategy.resolve(rng)?;
    let boundaries = match granularity {
        Granularity::Sentence => {
            boundaries.ok_or_else(|| invalid("sentence chunking requires sentence boundaries"))?
        }
        Granularity::Tokens(_) => &[],
    };
    let n = budgeted_length(tokens.len(), max_len, granularity, boundaries);
    let ends = chunk_ends(n, granularity, boundaries);

    let mut ids = Vec::with_capacity(n + ends.len() + 2);
    let mut marker_positions = Vec::with_capacity(ends.len().max(1));
    ids.push(CLS);
    let mut start = 0;
    for end in ends {
        ids.extend_from_slice(&tokens[start..end]);
        marker_positions.push(ids.len());
        ids.push(marker);
        start = end;
    }
    if marker_positions.is_empty() {
        marker_positions.push(ids.len());
        ids.push(marker);
    }
    Ok(TokenSequence {
        mask: vec![1; ids.len()],
        ids,
        marker_positions,
        content_length: n,
        granularity_used: Some(granularity),
    })
}

/// Landmark tokenization of raw text. `marker` is normally the landmark
/// (SEP); passing CLS gives the MultiCLS inference encoding.
pub fn landmark_tokenize<R: Rng + ?Sized>(
    text: &str,
    vocab: &Vocabulary,
    strategy: &ChunkingStrategy,
    max_len: usize,
    marker: TokenId,
    rng: &mut R,
) -> Result<TokenSequence> {
    let tokens = vocab.encode(text);
    let boundaries = matches!(strategy, ChunkingStrategy::Sentence).then(|| sentence_boundaries(text));
    landmark_encode(&tokens, boundaries.as_deref(), strategy, max_len, marker, rng)
}

/// `[CLS] x1 .. xt [SEP]` of already-tokenized content.
pub fn standard_encode(tokens: &[TokenId], max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(invalid(format!("max_len {max_len} cannot hold [CLS] and [SEP]")));
    }
    let n = tokens.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(n + 2);
    ids.push(CLS);
    ids.extend_from_slice(&tokens[..n]);
    ids.push(SEP);
    Ok(TokenSequence {
        mask: vec![1; ids.len()],
        marker_positions: vec![n + 1],
        ids,
        content_length: n,
        granularity_used: None,
    })
}

pub fn standard_tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    standard_encode(&vocab.encode(text), max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::LMK;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const M: TokenId = LMK;

    fn fixed(g: usize) -> ChunkingStrategy {
        ChunkingStrategy::Fixed { granularity: g }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn algorithm_expansion() {
        let (a, b, c, d, e) = (10, 11, 12, 13, 14);
        let seq = landmark_encode(&[a, b, c, d, e], None, &fixed(2), UNLIMITED, M, &mut rng()).unwrap();
        assert_eq!(seq.ids, vec![CLS, a, b, M, c, d, M, e, M]);
        assert_eq!(seq.marker_positions, vec![3, 6, 8]);
        assert_eq!(seq.content_length, 5);
        assert_eq!(seq.mask, vec![1; 9]);
    }

    #[test]
    fn overhead_at_32k_tokens() {
        let tokens: Vec<TokenId> = (0..32_768).map(|i| 5 + (i % 100) as TokenId).collect();
        let seq = landmark_encode(&tokens, None, &fixed(128), UNLIMITED, M, &mut rng()).unwrap();
        assert_eq!(seq.marker_positions.len(), 256);
        assert_eq!(seq.len(), 32_768 + 256 + 1);
    }

    #[test]
    fn budget_truncation() {
        let tokens: Vec<TokenId> = (0..20).map(|i| 5 + i).collect();
        // brute-force scan for the largest n with n + ceil(n/2) + 1 <= 10
        let oracle = (0..=20).filter(|&n: &usize| n + n.div_ceil(2).max(1) + 1 <= 10).max().unwrap();
        assert_eq!(oracle, 6);
        let seq = landmark_encode(&tokens, None, &fixed(2), 10, M, &mut rng()).unwrap();
        assert_eq!(seq.content_length, 6);
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.content_ids(), tokens[..6].to_vec());
    }

    #[test]
    fn empty_text_is_cls_marker() {
        let v = Vocabulary::from_words(["a"]);
        let seq = landmark_tokenize("", &v, &fixed(4), 8, M, &mut rng()).unwrap();
        assert_eq!(seq.ids, vec![CLS, M]);
        assert_eq!(seq.marker_positions, vec![1]);
        let seq = landmark_tokenize("a a a", &v, &fixed(4), 2, M, &mut rng()).unwrap();
        assert_eq!(seq.ids, vec![CLS, M]);
        assert!(landmark_tokenize("a", &v, &fixed(4), 1, M, &mut rng()).is_err());
    }

    #[test]
    fn multicls_uses_cls_markers() {
        let seq = landmark_encode(&[7, 8, 9], None, &fixed(2), UNLIMITED, CLS, &mut rng()).unwrap();
        assert_eq!(seq.ids, vec![CLS, 7, 8, CLS, 9, CLS]);
        assert_eq!(seq.marker_positions, vec![3, 5]);
    }

    #[test]
    fn sentence_landmarks() {
        let v = Vocabulary::from_words(["hi", "bye", "."]);
        let seq =
            landmark_tokenize("Hi. Bye.", &v, &ChunkingStrategy::Sentence, UNLIMITED, M, &mut rng()).unwrap();
        let hi = v.id("hi").unwrap();
        let bye = v.id("bye").unwrap();
        let dot = v.id(".").unwrap();
        assert_eq!(seq.ids, vec![CLS, hi, dot, M, bye, dot, M]);
        assert_eq!(seq.granularity_used, Some(Granularity::Sentence));
        // budget of 5 keeps "hi ." plus one marker, plus the partial second sentence if it fits
        let seq = landmark_tokenize("Hi. Bye.", &v, &ChunkingStrategy::Sentence, 5, M, &mut rng()).unwrap();
        assert_eq!(seq.ids, vec![CLS, hi, dot, M]);
    }

    #[test]
    fn standard_examples() {
        let v = Vocabulary::from_words(["a", "b"]);
        let seq = standard_tokenize("a b", &v, 8).unwrap();
        assert_eq!(seq.ids, vec![CLS, 5, 6, SEP]);
        assert_eq!(seq.marker_positions, vec![3]);
        let letters: Vec<String> = (b'a'..=b'z').map(|c| (c as char).to_string()).collect();
        let v = Vocabulary::from_words(letters.iter().cloned());
        let seq = standard_tokenize(&letters.join(" "), &v, 10).unwrap();
        assert_eq!(seq.content_length, 8);
        assert_eq!(seq.len(), 10);
        let seq = standard_tokenize("", &v, 10).unwrap();
        assert_eq!(seq.ids, vec![CLS, SEP]);
        assert!(standard_tokenize("a", &v, 1).is_err());
    }

    #[test]
    fn padding_masks_tail() {
        let seq = standard_encode(&[9], 8).unwrap().padded(5);
        assert_eq!(seq.ids, vec![CLS, 9, SEP, PAD, PAD]);
        assert_eq!(seq.mask, vec![1, 1, 1, 0, 0]);
        assert_eq!(seq.active_len(), 3);
    }
}
