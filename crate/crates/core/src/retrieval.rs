//! Fact retrieval by average cosine similarity between triplet words and
//! the question's entities plus detected object labels.

use log::warn;
use serde::Serialize;

use crate::data::{extract_question_entities, tokenize, EmbeddingTable, Fact, Sample};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 5;
/// Detections kept per image, by score.
pub const MAX_DETECTIONS: usize = 36;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    /// Text of each query word (entity phrase or object label), for dumps.
    pub phrases: Vec<String>,
    pub words: Vec<Vec<f64>>,
    pub k: usize,
}

impl RetrievalQuery {
    pub fn new(words: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("retrieval k must be at least 1".into()));
        }
        Ok(Self {
            phrases: vec![String::new(); words.len()],
            words,
            k,
        })
    }

    /// Question entities (matched against `kb`) followed by the distinct
    /// labels of the top detections. Each phrase is one mean word vector.
    pub fn for_sample(sample: &Sample, kb: &[Fact], table: &EmbeddingTable, k: usize) -> Result<Self> {
        let mut q = Self::new(Vec::new(), k)?;
        for e in extract_question_entities(&sample.tokens(), kb) {
            q.words.push(table.embed_phrase(&e)?);
            q.phrases.push(e.join(" "));
        }
        let mut labels: Vec<Vec<String>> = Vec::new();
        for d in sample.top_detections(MAX_DETECTIONS) {
            let toks = tokenize(&d.label);
            if !labels.contains(&toks) {
                q.words.push(table.embed_phrase(&toks)?);
                q.phrases.push(toks.join(" "));
                labels.push(toks);
            }
        }
        Ok(q)
    }
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Mean cosine similarity over every (triplet word, query word) pair.
pub fn score_fact(fact: &Fact, query: &RetrievalQuery) -> f64 {
    let pairs = fact.word_vecs.len() * query.words.len();
    if pairs == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for w in &fact.word_vecs {
        for q in &query.words {
            total += cosine(w, q);
        }
    }
    total / pairs as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored {
    /// Index of the fact within its KB.
    pub index: usize,
    pub score: f64,
}

/// The top `query.k` facts by score, ties by ascending KB index; facts
/// scoring exactly 0 are dropped.
pub fn retrieve_top_k(kb: &[Fact], query: &RetrievalQuery) -> Vec<Scored> {
    if query.words.is_empty() {
        warn!("retrieval query is empty; every fact scores 0");
        return Vec::new();
    }
    let mut scored: Vec<Scored> = kb
        .iter()
        .enumerate()
        .map(|(index, f)| Scored {
            index,
            score: score_fact(f, query),
        })
        .filter(|s| s.score != 0.0)
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    scored.truncate(query.k);
    scored
}
