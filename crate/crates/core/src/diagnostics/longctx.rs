//! Synthetic long-context retrieval with planted key phrases.
//!
//! Documents are runs of filler words with one key phrase (a few words from
//! a separate key vocabulary) planted at a chosen relative position. The
//! query is the key phrase itself. Each pool holds documents with distinct
//! key phrases, and every document's phrase is one trial against the whole
//! pool.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::{embed_corpus, search};
use crate::model::{EncodeOptions, Model};
use crate::tokenizer::{Vocabulary, NUM_SPECIAL};
use crate::train::Triplet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedKeyConfig {
    pub filler_words: usize,
    pub key_words: usize,
    pub key_len: usize,
    /// Filler words from the positive appended to each training query.
    pub context_words: usize,
}

impl Default for PlantedKeyConfig {
    fn default() -> Self {
        Self { filler_words: 1795, key_words: 200, key_len: 3, context_words: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDoc {
    pub text: String,
    pub key: Vec<usize>,
    /// Index of the first key word among the content words.
    pub key_start: usize,
    pub content_len: usize,
}

impl PlantedDoc {
    /// Key start over the last possible start, in `[0, 1]`.
    pub fn relative_position(&self, key_len: usize) -> f64 {
        let span = self.content_len.saturating_sub(key_len);
        if span == 0 { 0.0 } else { self.key_start as f64 / span as f64 }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedKeyGenerator {
    pub config: PlantedKeyConfig,
}

impl PlantedKeyGenerator {
    pub fn new(config: PlantedKeyConfig) -> Result<Self> {
        if config.key_len == 0 || config.key_words < config.key_len || config.filler_words == 0 {
            return Err(invalid("planted keys need filler words and at least key_len key words"));
        }
        Ok(Self { config })
    }

    /// Filler words `w0..`, then key words `k0..`, after the special tokens.
    pub fn vocabulary(&self) -> Vocabulary {
        let words = (0..self.config.filler_words)
            .map(|i| format!("w{i}"))
            .chain((0..self.config.key_words).map(|i| format!("k{i}")));
        Vocabulary::from_words(words)
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIAL + self.config.filler_words + self.config.key_words
    }

    pub fn key_phrase<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        sample(rng, self.config.key_words, self.config.key_len).into_vec()
    }

    pub fn query(&self, key: &[usize]) -> String {
        key.iter().map(|k| format!("k{k}")).collect::<Vec<_>>().join(" ")
    }

    fn filler<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<String> {
        (0..n).map(|_| format!("w{}", rng.random_range(0..self.config.filler_words))).collect()
    }

    fn plant(&self, filler: &[String], key: &[usize], start: usize) -> String {
        let mut words = filler.to_vec();
        for (i, k) in key.iter().enumerate() {
            words[start + i] = format!("k{k}");
        }
        words.join(" ")
    }

    fn start_for(&self, content_len: usize, relative: f64) -> usize {
        let span = content_len - self.config.key_len;
        ((relative.clamp(0.0, 1.0) * span as f64).round() as usize).min(span)
    }

    /// `content_len` words with `key` planted at `relative` in `[0, 1]`.
    pub fn document<R: Rng + ?Sized>(&self, key: &[usize], content_len: usize, relative: f64, rng: &mut R) -> Result<PlantedDoc> {
        if content_len < key.len() {
            return Err(invalid(format!("{content_len} words cannot hold a key of {}", key.len())));
        }
        let filler = self.filler(content_len, rng);
        let key_start = self.start_for(content_len, relative);
        Ok(PlantedDoc { text: self.plant(&filler, key, key_start), key: key.to_vec(), key_start, content_len })
    }

    /// `count` distinct key phrases (as sets).
    pub fn distinct_keys<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut seen = BTreeSet::new();
        let mut keys = Vec::with_capacity(count);
        while keys.len() < count {
            let key = self.key_phrase(rng);
            let mut set = key.clone();
            set.sort_unstable();
            if seen.insert(set) {
                keys.push(key);
            }
        }
        keys
    }

    /// Training triplets: the positive has the key at a uniform position,
    /// each hard negative is the same filler with another key at the same
    /// place. Content lengths are uniform in `lengths`.
    pub fn triplets<R: Rng + ?Sized>(
        &self,
        count: usize,
        lengths: std::ops::RangeInclusive<usize>,
        hard_negatives: usize,
        rng: &mut R,
    ) -> Result<Vec<Triplet>> {
        if *lengths.start() < self.config.key_len || lengths.is_empty() {
            return Err(invalid("content lengths must hold a key phrase"));
        }
        (0..count)
            .map(|_| {
                let keys = self.distinct_keys(hard_negatives + 1, rng);
                let n = rng.random_range(lengths.clone());
                let filler = self.filler(n, rng);
                let start = self.start_for(n, rng.random::<f64>());
                let mut query = self.query(&keys[0]);
                for _ in 0..self.config.context_words {
                    query.push(' ');
                    query.push_str(&filler[rng.random_range(0..n)]);
                }
                Ok(Triplet {
                    query,
                    positive: self.plant(&filler, &keys[0], start),
                    negatives: keys[1..].iter().map(|k| self.plant(&filler, k, start)).collect(),
                })
            })
            .collect()
    }
}

/// Anything that maps texts to L2-normalized rows.
pub trait TextEmbedder {
    fn name(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Array2<f64>>;
}

pub struct ModelEmbedder<'a> {
    pub name: String,
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub options: EncodeOptions,
    pub seed: u64,
}

impl TextEmbedder for ModelEmbedder<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
        Ok(embed_corpus(texts, self.model, self.vocab, &self.options, 16, self.seed)?.rows)
    }
}

/// Counts of key words; retrieves planted keys perfectly.
pub struct KeyBagEmbedder {
    pub key_words: usize,
}

impl TextEmbedder for KeyBagEmbedder {
    fn name(&self) -> String {
        "key-bag".into()
    }

    fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
        let mut m = Array2::<f64>::zeros((texts.len(), self.key_words));
        for (mut row, t) in m.rows_mut().into_iter().zip(texts) {
            for w in t.split_whitespace() {
                if let Some(k) = w.strip_prefix('k').and_then(|k| k.parse::<usize>().ok()) {
                    if k < self.key_words {
                        row[k] += 1.0;
                    }
                }
            }
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        Ok(m)
    }
}

/// Gaussian vector seeded by a hash of the text; chance-level retrieval.
pub struct RandomEmbedder {
    pub dim: usize,
    pub seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl TextEmbedder for RandomEmbedder {
    fn name(&self) -> String {
        "random".into()
    }

    fn embed(&self, texts: &[String]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((texts.len(), self.dim));
        for (mut row, t) in m.rows_mut().into_iter().zip(texts) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(t.as_bytes()));
            let v: Array1<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            row.assign(&(&v / v.dot(&v).sqrt()));
        }
        Ok(m)
    }
}

/// Wilson score interval for `hits` out of `n` at normal quantile `z`.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let center = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongCtxConfig {
    /// Total token budgets to evaluate.
    pub lengths: Vec<usize>,
    /// Trials per length, rounded up to whole pools.
    pub trials: usize,
    pub pool_size: usize,
    /// Range of relative key positions.
    pub key_range: (f64, f64),
    /// Content per document is the largest `n` whose landmark encoding at
    /// this granularity fits the budget, so every strategy sees the same words.
    pub budget_granularity: usize,
    pub seed: u64,
}

impl Default for LongCtxConfig {
    fn default() -> Self {
        Self { lengths: vec![128, 256, 512, 1024], trials: 300, pool_size: 100, key_range: (0.0, 1.0), budget_granularity: 16, seed: 0 }
    }
}

/// Content words that fit in `budget` tokens with markers every `g` words.
pub fn content_for_budget(budget: usize, g: usize) -> usize {
    (0..=budget).rev().find(|&n| n + n.div_ceil(g).max(1) + 1 <= budget).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongCtxRow {
    pub embedder: String,
    pub length: usize,
    pub content_tokens: usize,
    pub trials: usize,
    pub hits: usize,
    pub p_at_1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Trials whose key starts in the final quarter.
    pub final_quarter_trials: usize,
    pub final_quarter_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongCtxReport {
    pub seed: u64,
    pub pool_size: usize,
    pub chance: f64,
    pub rows: Vec<LongCtxRow>,
}

impl LongCtxReport {
    pub fn row(&self, embedder: &str, length: usize) -> Option<&LongCtxRow> {
        self.rows.iter().find(|r| r.embedder == embedder && r.length == length)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "embedder,length,content_tokens,trials,hits,p_at_1,ci_low,ci_high,final_quarter_trials,final_quarter_hits")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.embedder, r.length, r.content_tokens, r.trials, r.hits, r.p_at_1, r.ci_low, r.ci_high,
                r.final_quarter_trials, r.final_quarter_hits
            )?;
        }
        Ok(())
    }
}

/// Pools of planted documents for one budget; identical for every embedder.
pub fn planted_pools(
    generator: &PlantedKeyGenerator,
    config: &LongCtxConfig,
    length: usize,
) -> Result<Vec<Vec<PlantedDoc>>> {
    let n = content_for_budget(length, config.budget_granularity);
    if n < generator.config.key_len {
        return Err(invalid(format!("budget {length} leaves no room for a key")));
    }
    let (lo, hi) = config.key_range;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(invalid("key_range must satisfy 0 <= lo <= hi <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(length as u64);
    let pools = config.trials.div_ceil(config.pool_size);
    (0..pools)
        .map(|_| {
            generator
                .distinct_keys(config.pool_size, &mut rng)
                .into_iter()
                .map(|key| {
                    // integer starts whose relative position lies in the range
                    let span = n - generator.config.key_len;
                    let first = (lo * span as f64).ceil() as usize;
                    let last = ((hi * span as f64).floor() as usize).max(first).min(span);
                    let start = rng.random_range(first..=last);
                    let rel = if span == 0 { 0.0 } else { start as f64 / span as f64 };
                    generator.document(&key, n, rel, &mut rng)
                })
                .collect()
        })
        .collect()
}

/// P@1 of every embedder at every budget.
pub fn synthetic_longctx_suite(
    embedders: &[&dyn TextEmbedder],
    generator: &PlantedKeyGenerator,
    config: &LongCtxConfig,
) -> Result<LongCtxReport> {
    if config.pool_size < 2 || config.trials == 0 || config.budget_granularity == 0 {
        return Err(invalid("need pool_size >= 2, trials >= 1 and budget_granularity >= 1"));
    }
    if embedders.is_empty() {
        return Err(invalid("no embedders"));
    }
    let key_len = generator.config.key_len;
    let mut rows = Vec::new();
    for &length in &config.lengths {
        let pools = planted_pools(generator, config, length)?;
        for emb in embedders {
            let (mut hits, mut trials, mut fq_hits, mut fq_trials) = (0, 0, 0, 0);
            for pool in &pools {
                let ids: Vec<String> = (0..pool.len()).map(|i| format!("{i:06}")).collect();
                let docs = emb.embed(&pool.iter().map(|d| d.text.clone()).collect::<Vec<_>>())?;
                let queries = emb.embed(&pool.iter().map(|d| generator.query(&d.key)).collect::<Vec<_>>())?;
                if docs.nrows() != pool.len() || queries.nrows() != pool.len() {
                    return Err(Error::Shape(format!("{} returned the wrong number of rows", emb.name())));
                }
                for (i, doc) in pool.iter().enumerate() {
                    let top = search(queries.row(i), docs.view(), &ids, 1)?;
                    let hit = top[0].doc_id == ids[i];
                    trials += 1;
                    hits += hit as usize;
                    if doc.relative_position(key_len) >= 0.75 {
                        fq_trials += 1;
                        fq_hits += hit as usize;
                    }
                }
            }
            let (ci_low, ci_high) = wilson_interval(hits, trials, Z_95);
            rows.push(LongCtxRow {
                embedder: emb.name(),
                length,
                content_tokens: pools[0][0].content_len,
                trials,
                hits,
                p_at_1: hits as f64 / trials as f64,
                ci_low,
                ci_high,
                final_quarter_trials: fq_trials,
                final_quarter_hits: fq_hits,
            });
        }
    }
    Ok(LongCtxReport { seed: config.seed, pool_size: config.pool_size, chance: 1.0 / config.pool_size as f64, rows })
}
