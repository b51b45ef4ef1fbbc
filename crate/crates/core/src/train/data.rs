use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pooling::PoolingStrategy;
use crate::tokenizer::ChunkingStrategy;

/// Contrastive training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub temperature: f64,
    pub steps: usize,
    /// Queries per step.
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub query_max_len: usize,
    pub doc_max_len: usize,
    pub pooling: PoolingStrategy,
    pub chunking: ChunkingStrategy,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.02,
            steps: 1000,
            batch_size: 16,
            hard_negatives: 7,
            learning_rate: 1e-3,
            warmup_steps: 250,
            query_max_len: 32,
            doc_max_len: 128,
            pooling: PoolingStrategy::LMK,
            chunking: ChunkingStrategy::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature must be positive"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.batch_size < 2 && self.hard_negatives < 1 {
            return Err(invalid("need batch_size >= 2 or at least one hard negative"));
        }
        if self.learning_rate < 0.0 {
            return Err(invalid("learning_rate must be non-negative"));
        }
        if self.query_max_len < 2 || self.doc_max_len < 2 {
            return Err(invalid("max lengths must be at least 2"));
        }
        self.pooling.validate()?;
        self.chunking.validate()
    }
}

/// One training record: a query, its positive and mined hard negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn new(triplets: Vec<Triplet>) -> Self {
        Self { triplets }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets.is_empty() {
            return Err(invalid("empty batch"));
        }
        if self.triplets.len() < 2 && self.triplets.iter().all(|t| t.negatives.is_empty()) {
            return Err(invalid("a single-query batch needs hard negatives"));
        }
        Ok(())
    }

    /// Documents in candidate order (each positive followed by its
    /// negatives) and the column of every query's positive.
    pub fn candidates(&self) -> (Vec<&str>, Vec<usize>) {
        let mut docs = Vec::new();
        let mut positives = Vec::with_capacity(self.triplets.len());
        for t in &self.triplets {
            positives.push(docs.len());
            docs.push(t.positive.as_str());
            docs.extend(t.negatives.iter().map(String::as_str));
        }
        (docs, positives)
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub loss: f64,
    /// 1-based rank of each query's positive among all candidates.
    pub ranks: Vec<usize>,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// Reads line-delimited JSON triplets (`query`, `positive`, `negatives`).
pub fn read_triplets<R: BufRead>(r: R) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triplet = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("training record {}: {e}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    read_triplets(std::io::BufReader::new(std::fs::File::open(path)?))
}
