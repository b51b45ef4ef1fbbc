//! Run configuration: one JSON document plus `--section.key=value` overrides.

use std::path::Path;

use anyhow::{Context, Result};
use lmk_core::diagnostics::{LongCtxConfig, PlantedKeyConfig};
use lmk_core::encoder::EncoderConfig;
use lmk_core::model::EncodeOptions;
use lmk_core::pooling::{LatentConfig, PoolingStrategy};
use lmk_core::tokenizer::ChunkingStrategy;
use lmk_core::train::{RetroMaeConfig, TrainingConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeSection {
    pub pooling: PoolingStrategy,
    pub chunking: ChunkingStrategy,
    pub max_len: usize,
    pub batch_size: usize,
}

impl Default for EncodeSection {
    fn default() -> Self {
        Self { pooling: PoolingStrategy::LMK, chunking: ChunkingStrategy::Fixed { granularity: 32 }, max_len: 512, batch_size: 32 }
    }
}

impl EncodeSection {
    pub fn options(&self) -> EncodeOptions {
        EncodeOptions::new(self.pooling.clone(), self.chunking.clone(), self.max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub max_size: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self { max_size: 30_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub k: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: vec![1, 10, 100] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub n_bins: usize,
    /// Training length recorded in span profiles.
    pub trained_max_len: Option<usize>,
    pub granularity: usize,
    pub k: usize,
    pub max_len: usize,
    pub min_chunks: Option<usize>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { n_bins: 20, trained_max_len: None, granularity: 32, k: 10, max_len: 8192, min_chunks: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The only source of randomness; copied into every section.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub latent: LatentConfig,
    pub vocab: VocabSection,
    pub training: TrainingConfig,
    pub pretraining: RetroMaeConfig,
    pub encode: EncodeSection,
    pub search: SearchSection,
    pub eval: EvalSection,
    pub diagnostics: DiagnosticsSection,
    pub longctx: LongCtxConfig,
    pub planted: PlantedKeyConfig,
}

/// Splits `--a.b=value` overrides from the rest of the arguments.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((key, value)) if key.contains('.') => overrides.push((key.to_string(), value.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> std::result::Result<(), UsageError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| UsageError(format!("config key {key:?}: {:?} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(UsageError(format!("unknown config key {key:?}")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).ok_or_else(|| UsageError(format!("unknown config section in {key:?}")))?;
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or the defaults), applies overrides and propagates the
    /// seed.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let base: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        for (key, raw) in overrides {
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            set_path(&mut value, key, v)?;
        }
        let mut config: RunConfig = serde_json::from_value(value)
            .map_err(|e| UsageError(format!("invalid override: {e}")))?;
        config.training.seed = config.seed;
        config.pretraining.seed = config.seed;
        config.longctx.seed = config.seed;
        Ok(config)
    }
}
