use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::embeddings::{tokenize, EmbeddingTable};
use crate::error::{Error, Result};

/// KB identifier used when records carry none.
pub const DEFAULT_KB: &str = "default";

/// A raw subject/relation/object record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<String>,
}

impl Triple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            kb: None,
        }
    }

    pub fn in_kb(mut self, kb: &str) -> Self {
        self.kb = Some(kb.into());
        self
    }

    pub fn kb_id(&self) -> &str {
        self.kb.as_deref().unwrap_or(DEFAULT_KB)
    }
}

impl std::fmt::Display for Triple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "<{}, {}, {}>", self.subject, self.relation, self.object)
    }
}

/// A triple with its word vectors: per-element means (`subject_vec`,
/// `relation_vec`, `object_vec`), the mean over every word of the triple
/// (`fact_vec`) and the individual word vectors used for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub triple: Triple,
    pub subject: Vec<String>,
    pub relation: Vec<String>,
    pub object: Vec<String>,
    pub subject_vec: Vec<f64>,
    pub relation_vec: Vec<f64>,
    pub object_vec: Vec<f64>,
    pub fact_vec: Vec<f64>,
    pub word_vecs: Vec<Vec<f64>>,
}

impl Fact {
    pub fn embed(triple: Triple, table: &EmbeddingTable) -> Result<Self> {
        let subject = tokenize(&triple.subject);
        let relation = tokenize(&triple.relation);
        let object = tokenize(&triple.object);
        for (name, part) in [("subject", &subject), ("relation", &relation), ("object", &object)] {
            if part.is_empty() {
                return Err(Error::Config(format!("fact {triple} has an empty {name}")));
            }
        }
        let words: Vec<&String> = subject.iter().chain(&relation).chain(&object).collect();
        let word_vecs: Vec<Vec<f64>> = words.iter().map(|w| table.vector(w).to_vec()).collect();
        let fact_vec = table.embed_phrase(&words)?;
        Ok(Self {
            subject_vec: table.embed_phrase(&subject)?,
            relation_vec: table.embed_phrase(&relation)?,
            object_vec: table.embed_phrase(&object)?,
            fact_vec,
            word_vecs,
            subject,
            relation,
            object,
            triple,
        })
    }

    /// Element vectors in memory order: subject, relation, object.
    pub fn elements(&self) -> [&[f64]; 3] {
        [&self.subject_vec, &self.relation_vec, &self.object_vec]
    }

    pub fn element_text(&self, j: usize) -> &str {
        match j {
            0 => &self.triple.subject,
            1 => &self.triple.relation,
            _ => &self.triple.object,
        }
    }
}

/// Facts partitioned by KB identifier; order within a partition is the
/// file order and is the retrieval tie-break.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    parts: BTreeMap<String, Vec<Fact>>,
}

impl KnowledgeBase {
    pub fn from_triples(triples: Vec<Triple>, table: &EmbeddingTable) -> Result<Self> {
        let mut parts: BTreeMap<String, Vec<Fact>> = BTreeMap::new();
        for (index, t) in triples.into_iter().enumerate() {
            let kb = t.kb_id().to_string();
            let fact = Fact::embed(t, table).map_err(|e| Error::Record {
                index,
                msg: e.to_string(),
            })?;
            parts.entry(kb).or_default().push(fact);
        }
        Ok(Self { parts })
    }

    pub fn get(&self, kb: &str) -> &[Fact] {
        self.parts.get(kb).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.parts.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.parts.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.parts.values().flatten().map(|f| &f.triple)
    }
}

/// Parses a KB file. Tab-separated lines hold `subject\trelation\tobject`
/// with an optional fourth KB-id column. Structured files are either a
/// JSON array or one JSON object per line with `subject`, `relation`,
/// `object` and optional `kb` fields.
pub fn parse_triples(text: &str) -> Result<Vec<Triple>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let raw: Vec<serde_json::Value> = serde_json::from_str(trimmed)?;
        return raw.into_iter().enumerate().map(|(i, v)| triple_from_json(i, v)).collect();
    }
    if trimmed.starts_with('{') {
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| triple_from_json(i, serde_json::from_str(l)?))
            .collect();
    }
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(index, line)| {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() < 3 || fields[..3].iter().any(|f| f.is_empty()) {
                return Err(Error::Record {
                    index,
                    msg: format!("expected subject, relation and object, found {} fields", fields.len()),
                });
            }
            let mut t = Triple::new(fields[0], fields[1], fields[2]);
            if let Some(kb) = fields.get(3).filter(|s| !s.is_empty()) {
                t.kb = Some(kb.to_string());
            }
            Ok(t)
        })
        .collect()
}

fn triple_from_json(index: usize, v: serde_json::Value) -> Result<Triple> {
    let field = |name: &str| -> Result<String> {
        v.get(name)
            .and_then(|x| x.as_str())
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .ok_or_else(|| Error::Record {
                index,
                msg: format!("missing field `{name}`"),
            })
    };
    Ok(Triple {
        subject: field("subject")?,
        relation: field("relation")?,
        object: field("object")?,
        kb: v.get("kb").and_then(|x| x.as_str()).map(str::to_string),
    })
}

pub fn load_kb(path: &Path, table: &EmbeddingTable) -> Result<KnowledgeBase> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let triples = parse_triples(&text)?;
    if triples.is_empty() {
        warn!("{}: knowledge base is empty", path.display());
    }
    KnowledgeBase::from_triples(triples, table)
}

/// Writes triples as JSON lines (keeps KB ids) or TSV for `.tsv` paths.
pub fn save_triples<'a>(path: &Path, triples: impl IntoIterator<Item = &'a Triple>) -> Result<()> {
    let tsv = path.extension().is_some_and(|e| e == "tsv");
    let mut out = String::new();
    for t in triples {
        if tsv {
            out.push_str(&format!("{}\t{}\t{}", t.subject, t.relation, t.object));
            if let Some(kb) = &t.kb {
                out.push('\t');
                out.push_str(kb);
            }
        } else {
            out.push_str(&serde_json::to_string(t)?);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
