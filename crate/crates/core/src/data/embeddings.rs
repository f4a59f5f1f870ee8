use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;

use crate::error::{Error, Result};

/// Word-vector width used by pretrained GloVe tables at full scale.
pub const DEFAULT_WORD_DIM: usize = 300;

/// Lowercase, split on whitespace, trim surrounding punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation() && c != '_')
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Token → fixed-width vector. Out-of-vocabulary lookups yield the zero
/// vector and bump a counter.
#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    zero: Vec<f64>,
    oov: AtomicUsize,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            tokens: self.tokens.clone(),
            index: self.index.clone(),
            vectors: self.vectors.clone(),
            zero: self.zero.clone(),
            oov: AtomicUsize::new(self.oov.load(Ordering::Relaxed)),
        }
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            zero: vec![0.0; dim],
            oov: AtomicUsize::new(0),
        }
    }

    /// Adds a token; returns false (and keeps the original) on duplicates.
    pub fn insert(&mut self, token: impl Into<String>, vector: &[f64]) -> Result<bool> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::InvalidShape {
                shape: vec![vector.len()],
                reason: format!("embedding for `{token}` must have length {}", self.dim),
            });
        }
        if self.index.contains_key(&token) {
            return Ok(false);
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// The token's vector, or zeros (counted as OOV).
    pub fn vector(&self, token: &str) -> &[f64] {
        match self.get(token) {
            Some(v) => v,
            None => {
                self.oov.fetch_add(1, Ordering::Relaxed);
                &self.zero
            }
        }
    }

    pub fn oov_count(&self) -> usize {
        self.oov.load(Ordering::Relaxed)
    }

    /// Arithmetic mean of the token vectors; OOV tokens contribute zeros
    /// and still count in the divisor.
    pub fn embed_phrase<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Empty("phrase tokens"));
        }
        let mut out = vec![0.0; self.dim];
        for t in tokens {
            for (o, v) in out.iter_mut().zip(self.vector(t.as_ref())) {
                *o += v;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::Config(format!(
                "embedding table has dim {}, expected {expected}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                s.push(' ');
                s.push_str(&format!("{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Parses `token f1 f2 … fd` lines. Blank lines are skipped.
pub fn parse_embeddings(text: &str, source: &Path) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut duplicates = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let vector: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    path: source.to_path_buf(),
                    line: line_no,
                    msg: format!("malformed float `{p}`"),
                })
            })
            .collect::<Result<_>>()?;
        if vector.is_empty() {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: line_no,
                msg: "token without vector".into(),
            });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != t.dim() {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: line_no,
                msg: format!("vector length {} differs from {}", vector.len(), t.dim()),
            });
        }
        if !t.insert(token, &vector)? {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warn!("{}: {duplicates} duplicate tokens ignored (first occurrence kept)", source.display());
    }
    table.ok_or(Error::Empty("embedding file"))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}
