//! Adapters for KRVQR- and FVQA-shaped files.
//!
//! KRVQR layout (one directory):
//! * `questions.json`: array of `{question_id, image_id, question, answer, reasoning_steps, split}`
//! * `kb.tsv` (or `kb.jsonl`): triples
//! * `detections.json`: map from image id to `[{label, bbox, score}]`
//!
//! FVQA layout (one directory):
//! * `all_qs_dict_release.json`: map from question id to `{question, answer, img_file, fact}`
//! * `all_fact_triples_release.json`: map from fact id to `{e1_label, r, e2_label}`
//! * `detections.json`: map from image file to detections
//! * `train_list.txt`, `test_list.txt` and optionally `val_list.txt`: image files per split

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::dataset::{Detection, QuestionKind, Sample, Split};
use super::kb::{parse_triples, Triple, DEFAULT_KB};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Native,
    Krvqr,
    Fvqa,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(DataFormat::Native),
            "krvqr" => Ok(DataFormat::Krvqr),
            "fvqa" => Ok(DataFormat::Fvqa),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExternalData {
    pub samples: Vec<Sample>,
    pub triples: Vec<Triple>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn detections(dir: &Path) -> Result<HashMap<String, Vec<Detection>>> {
    let path = dir.join("detections.json");
    let map: HashMap<String, Vec<Detection>> = serde_json::from_str(&read(&path)?)?;
    for (image, dets) in &map {
        for d in dets {
            d.validate()
                .map_err(|e| Error::InvalidDetection(format!("image {image}: {e}")))?;
        }
    }
    Ok(map)
}

#[derive(Deserialize)]
struct KrvqrQuestion {
    question_id: serde_json::Value,
    image_id: serde_json::Value,
    question: String,
    answer: String,
    #[serde(default)]
    reasoning_steps: Option<u8>,
    split: Split,
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn load_krvqr(dir: &Path) -> Result<ExternalData> {
    let qs: Vec<KrvqrQuestion> = serde_json::from_str(&read(&dir.join("questions.json"))?)?;
    let kb_path = ["kb.tsv", "kb.jsonl", "kb.json"]
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| Error::Config(format!("{}: no kb.tsv or kb.jsonl", dir.display())))?;
    let triples = parse_triples(&read(&kb_path)?)?;
    let dets = detections(dir)?;
    let mut samples = Vec::with_capacity(qs.len());
    for (index, q) in qs.into_iter().enumerate() {
        let image = id_string(&q.image_id);
        let s = Sample {
            id: id_string(&q.question_id),
            question: q.question,
            detections: dets.get(&image).cloned().unwrap_or_default(),
            answer: q.answer,
            split: q.split,
            kb: DEFAULT_KB.into(),
            kind: match q.reasoning_steps {
                Some(1) => QuestionKind::OneStep,
                Some(2) => QuestionKind::TwoStep,
                _ => QuestionKind::Unknown,
            },
        };
        s.validate().map_err(|e| Error::Record {
            index,
            msg: e.to_string(),
        })?;
        samples.push(s);
    }
    Ok(ExternalData { samples, triples })
}

#[derive(Deserialize)]
struct FvqaQuestion {
    question: String,
    answer: String,
    img_file: String,
}

#[derive(Deserialize)]
struct FvqaFact {
    e1_label: String,
    r: String,
    e2_label: String,
}

/// `/r/UsedFor` → `used for`; `/r/IsA` → `is a`.
pub fn normalize_relation(r: &str) -> String {
    let name = r.rsplit('/').next().unwrap_or(r);
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push(' ');
        }
        if c == '_' {
            out.push(' ');
        } else {
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn split_list(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn load_fvqa(dir: &Path) -> Result<ExternalData> {
    let qs: BTreeMap<String, FvqaQuestion> =
        serde_json::from_str(&read(&dir.join("all_qs_dict_release.json"))?)?;
    let facts: BTreeMap<String, FvqaFact> =
        serde_json::from_str(&read(&dir.join("all_fact_triples_release.json"))?)?;
    let dets = detections(dir)?;
    let mut split_of: HashMap<String, Split> = HashMap::new();
    for (file, split) in [
        ("train_list.txt", Split::Train),
        ("val_list.txt", Split::Val),
        ("test_list.txt", Split::Test),
    ] {
        for img in split_list(&dir.join(file))? {
            split_of.insert(img, split);
        }
    }
    let triples = facts
        .values()
        .map(|f| Triple::new(&f.e1_label, &normalize_relation(&f.r), &f.e2_label))
        .collect();
    let mut samples = Vec::with_capacity(qs.len());
    for (index, (id, q)) in qs.into_iter().enumerate() {
        let split = *split_of.get(&q.img_file).ok_or_else(|| Error::Record {
            index,
            msg: format!("image {} is in no split list", q.img_file),
        })?;
        let s = Sample {
            id,
            question: q.question,
            detections: dets.get(&q.img_file).cloned().unwrap_or_default(),
            answer: q.answer.to_lowercase(),
            split,
            kb: DEFAULT_KB.into(),
            kind: QuestionKind::OneStep,
        };
        s.validate().map_err(|e| Error::Record {
            index,
            msg: e.to_string(),
        })?;
        samples.push(s);
    }
    Ok(ExternalData { samples, triples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_names() {
        assert_eq!(normalize_relation("/r/UsedFor"), "used for");
        assert_eq!(normalize_relation("/r/IsA"), "is a");
        assert_eq!(normalize_relation("related to"), "related to");
        assert_eq!(normalize_relation("/r/part_of"), "part of");
    }
}
