//! Training configuration and its `key = value` file format.
//!
//! Keys are the field names; nested synthetic-world fields use dotted
//! names such as `world.objects`. Arrays are written comma-separated.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::SyntheticWorld;
use crate::error::{Error, Result};
use crate::memory::MemoryVariant;
use crate::reasoner::{EdgeNorm, ModelConfig};
use crate::tensor::DType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub decay_start: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    /// Stop once validation top-1 reaches this value; 0 disables.
    pub target_accuracy: f64,
    pub steps: usize,
    pub memory: MemoryVariant,
    pub knowledge_guided: bool,
    pub edge_norm: EdgeNorm,
    pub seed: u64,
    pub precision: DType,

    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub memory_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub top_k: usize,
    pub max_detections: usize,
    /// Zero every memory slot (knowledge ablation).
    pub zero_memory: bool,

    /// `native`, `krvqr` or `fvqa`.
    pub format: String,
    pub dataset: String,
    pub kb: String,
    pub embeddings: String,
    /// Directory for the KRVQR/FVQA adapters.
    pub data_dir: String,
    pub output: String,

    pub samples: usize,
    pub world: SyntheticWorld,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-4,
            warmup_epochs: 2,
            decay_start: 20,
            decay_factor: 0.5,
            epochs: 40,
            target_accuracy: 0.0,
            steps: 2,
            memory: MemoryVariant::Proposed,
            knowledge_guided: true,
            edge_norm: EdgeNorm::Global,
            seed: 0,
            precision: DType::F32,
            lstm_hidden: 512,
            lstm_layers: 2,
            memory_dim: 300,
            width: 1024,
            heads: 4,
            head_hidden: 1024,
            dropout: 0.1,
            top_k: 5,
            max_detections: 36,
            zero_memory: false,
            format: "native".into(),
            dataset: String::new(),
            kb: String::new(),
            embeddings: String::new(),
            data_dir: String::new(),
            output: "run".into(),
            samples: 5000,
            world: SyntheticWorld::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn parse_like(template: &Value, raw: &str, key: &str) -> Result<Value> {
    let bad = || Error::Config(format!("`{raw}` is not a valid value for `{key}`"));
    Ok(match template {
        Value::Bool(_) => Value::Bool(match raw {
            "true" | "on" | "yes" | "1" => true,
            "false" | "off" | "no" | "0" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => serde_json::Number::from_f64(raw.parse::<f64>().map_err(|_| bad())?)
            .map(Value::Number)
            .ok_or_else(bad)?,
        Value::Array(items) => {
            let first = items.first().cloned().unwrap_or(Value::Null);
            Value::Array(
                raw.split(',')
                    .map(|p| parse_like(&first, p.trim(), key))
                    .collect::<Result<_>>()?,
            )
        }
        _ => Value::String(raw.to_string()),
    })
}

impl TrainConfig {
    /// Every settable key, in declaration order.
    pub fn keys() -> Vec<String> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(Self::default()).expect("serialisable"), &mut out);
        out.into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m: &mut Map<String, Value>| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        if slot.is_object() {
            return Err(Error::Config(format!("`{key}` is a section, not a key")));
        }
        *slot = parse_like(slot, raw.trim(), key)?;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// The configuration as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("serialisable"), &mut out);
        out.iter()
            .map(|(k, v)| {
                let s = match v {
                    Value::String(s) => s.clone(),
                    Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                    other => other.to_string(),
                };
                format!("{k} = {s}\n")
            })
            .collect()
    }

    /// Model shape for a given embedding width and answer count.
    pub fn model(&self, word_dim: usize, answers: usize) -> ModelConfig {
        ModelConfig {
            word_dim,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: self.lstm_layers,
            memory_dim: self.memory_dim,
            width: self.width,
            heads: self.heads,
            head_hidden: self.head_hidden,
            steps: self.steps,
            dropout: self.dropout,
            memory: self.memory,
            knowledge_guided: self.knowledge_guided,
            edge_norm: self.edge_norm,
            answers,
        }
    }

    /// Small widths for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            lstm_hidden: 32,
            memory_dim: 32,
            width: 64,
            head_hidden: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config("decay_factor must be in (0, 1)".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}
