use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::text::split_words;
use crate::error::{invalid, Error, Result};

pub type TokenId = u32;

pub const CLS: TokenId = 0;
pub const SEP: TokenId = 1;
pub const PAD: TokenId = 2;
pub const MASK: TokenId = 3;
pub const UNK: TokenId = 4;

/// Special tokens in their fixed file order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[CLS]", "[SEP]", "[PAD]", "[MASK]", "[UNK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Landmark marker. The separator token doubles as the landmark.
pub const LMK: TokenId = SEP;

/// Word-level vocabulary with the five special tokens at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary of at most `max_size` entries (specials included)
    /// from word frequencies. Ties are broken lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[S], max_size: usize) -> Result<Self> {
        if max_size <= NUM_SPECIAL {
            return Err(invalid(format!(
                "max_size {max_size} must exceed the {NUM_SPECIAL} special tokens"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        for special in SPECIAL_TOKENS {
            counts.remove(special);
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIAL);
        Ok(Self::from_words(ranked.into_iter().map(|(w, _)| w)))
    }

    /// Specials followed by `words` in the given order; duplicates are skipped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            vocab.push(s.to_string());
        }
        for w in words {
            vocab.push(w.into());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        if self.index.contains_key(&token) {
            return;
        }
        self.index.insert(token.clone(), self.tokens.len() as TokenId);
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Token ids for `text` without special tokens; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Token strings for `ids`; ids outside the vocabulary decode as `[UNK]`.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]))
            .collect()
    }

    /// Writes `token<TAB>id` lines, specials first.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, tok) in self.tokens.iter().enumerate() {
            writeln!(w, "{tok}\t{id}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("vocab line {}: missing tab", lineno + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad id {id:?}", lineno + 1)))?;
            if id != tokens.len() {
                return Err(Error::Format(format!(
                    "vocab line {}: expected id {}, found {id}",
                    lineno + 1,
                    tokens.len()
                )));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < NUM_SPECIAL
            || tokens[..NUM_SPECIAL].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
        {
            return Err(Error::Format(
                "vocab must start with [CLS], [SEP], [PAD], [MASK], [UNK]".into(),
            ));
        }
        let vocab = Self::from_words(tokens.drain(NUM_SPECIAL..));
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_tsv(std::io::BufReader::new(f))
    }
}

/// Token ids for `text`, no special tokens inserted.
pub fn encode_text(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    vocab.encode(text)
}
