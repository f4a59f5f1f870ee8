use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embeddings::tokenize;
use super::kb::DEFAULT_KB;
use crate::error::{Error, Result};

/// A precomputed object detection; `bbox` is `(x1, y1, x2, y2)` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: [f64; 4],
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

impl Detection {
    pub fn new(label: &str, bbox: [f64; 4], score: f64) -> Result<Self> {
        let d = Self {
            label: label.into(),
            bbox,
            score,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let [x1, y1, x2, y2] = self.bbox;
        if !self.bbox.iter().all(|v| v.is_finite()) || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidDetection(format!(
                "`{}` has degenerate box {:?}",
                self.label, self.bbox
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidDetection(format!(
                "`{}` has score {} outside [0, 1]",
                self.label, self.score
            )));
        }
        if tokenize(&self.label).is_empty() {
            return Err(Error::InvalidDetection("empty label".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.bbox[0] + self.bbox[2]) / 2.0,
            (self.bbox[1] + self.bbox[3]) / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionKind {
    OneStep,
    TwoStep,
    Unknown,
}

impl Default for QuestionKind {
    fn default() -> Self {
        QuestionKind::Unknown
    }
}

/// One dataset record: question, detections, gold answer and the KB the
/// question is grounded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(default)]
    pub id: String,
    pub question: String,
    pub detections: Vec<Detection>,
    pub answer: String,
    pub split: Split,
    #[serde(default = "default_kb")]
    pub kb: String,
    #[serde(default, rename = "type")]
    pub kind: QuestionKind,
}

fn default_kb() -> String {
    DEFAULT_KB.to_string()
}

impl Sample {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.question)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens().is_empty() {
            return Err(Error::Empty("question"));
        }
        for d in &self.detections {
            d.validate()?;
        }
        Ok(())
    }

    /// The top `r` detections by score (stable on ties).
    pub fn top_detections(&self, r: usize) -> Vec<Detection> {
        let mut d = self.detections.clone();
        d.sort_by(|a, b| b.score.total_cmp(&a.score));
        d.truncate(r);
        d
    }
}

pub fn parse_dataset(text: &str) -> Result<Vec<Sample>> {
    let trimmed = text.trim_start();
    let samples: Vec<Sample> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(index, l)| {
                serde_json::from_str(l).map_err(|e| Error::Record {
                    index,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    };
    for (index, s) in samples.iter().enumerate() {
        s.validate().map_err(|e| Error::Record {
            index,
            msg: e.to_string(),
        })?;
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Candidate answers: the distinct training answers in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for AnswerVocab {
    fn from(v: Vec<String>) -> Self {
        Self::new(v)
    }
}

impl From<AnswerVocab> for Vec<String> {
    fn from(v: AnswerVocab) -> Self {
        v.answers
    }
}

impl AnswerVocab {
    pub fn new(answers: Vec<String>) -> Self {
        let mut v = Self {
            answers: Vec::new(),
            index: HashMap::new(),
        };
        for a in answers {
            v.push(a);
        }
        v
    }

    pub fn from_training(samples: &[Sample]) -> Self {
        Self::new(
            samples
                .iter()
                .filter(|s| s.split == Split::Train)
                .map(|s| s.answer.clone())
                .collect(),
        )
    }

    fn push(&mut self, a: String) {
        if !self.index.contains_key(&a) {
            self.index.insert(a.clone(), self.answers.len());
            self.answers.push(a);
        }
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answer(&self, i: usize) -> &str {
        &self.answers[i]
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(Detection::new("cup", [0.0, 0.0, 1.0, 1.0], 0.9).is_ok());
        assert!(Detection::new("cup", [1.0, 0.0, 1.0, 1.0], 0.9).is_err());
        assert!(Detection::new("cup", [0.0, 2.0, 1.0, 1.0], 0.9).is_err());
        assert!(Detection::new("cup", [0.0, 0.0, 1.0, 1.0], 1.5).is_err());
    }

    #[test]
    fn record_parses_with_defaults() {
        let line = r#"{"question":"what is the cup used for?","detections":[{"label":"cup","bbox":[0,0,10,10],"score":0.8}],"answer":"drinking","split":"train"}"#;
        let s = parse_dataset(line).unwrap();
        assert_eq!(s[0].kb, DEFAULT_KB);
        assert_eq!(s[0].kind, QuestionKind::Unknown);
        assert_eq!(s[0].tokens().last().unwrap(), "for");
    }

    #[test]
    fn bad_record_names_index() {
        let text = "{\"question\":\"a\",\"detections\":[],\"answer\":\"b\",\"split\":\"train\"}\n{\"question\":\"\",\"detections\":[],\"answer\":\"b\",\"split\":\"train\"}";
        assert!(matches!(parse_dataset(text), Err(Error::Record { index: 1, .. })));
    }

    #[test]
    fn vocab_from_training_only() {
        let mk = |a: &str, split| Sample {
            id: String::new(),
            question: "q".into(),
            detections: vec![],
            answer: a.into(),
            split,
            kb: DEFAULT_KB.into(),
            kind: QuestionKind::OneStep,
        };
        let v = AnswerVocab::from_training(&[mk("x", Split::Train), mk("y", Split::Val), mk("x", Split::Train), mk("z", Split::Train)]);
        assert_eq!(v.answers(), &["x".to_string(), "z".to_string()]);
        assert_eq!(v.index_of("y"), None);
    }

    #[test]
    fn top_detections_by_score() {
        let s = Sample {
            id: String::new(),
            question: "q".into(),
            detections: vec![
                Detection::new("a", [0.0, 0.0, 1.0, 1.0], 0.2).unwrap(),
                Detection::new("b", [0.0, 0.0, 1.0, 1.0], 0.9).unwrap(),
                Detection::new("c", [0.0, 0.0, 1.0, 1.0], 0.5).unwrap(),
            ],
            answer: "x".into(),
            split: Split::Train,
            kb: DEFAULT_KB.into(),
            kind: QuestionKind::Unknown,
        };
        let labels: Vec<_> = s.top_detections(2).into_iter().map(|d| d.label).collect();
        assert_eq!(labels, vec!["b", "c"]);
    }
}
