//! Seeded generator for small knowledge-grounded VQA tasks.
//!
//! Every sample gets its own small KB (identified by the sample id), so the
//! answer to a question can only be read from the knowledge base and never
//! memorised from the question text. Each sample's KB holds the facts the
//! question needs, distractor facts about the same anchor object and about
//! other visible objects, and facts about objects that are not in the image
//! (which retrieval should discard).
//!
//! Templates:
//!
//! * object query, one step: `what is the <obj> <rel>` → object of `(obj, rel, ?)`
//! * subject query, one step: `what has <rel> <obj>` → subject of `(?, rel, obj)`
//! * relation query, one step: `how is the <obj> related to the <val>` → relation
//! * kind-conditional, two steps: `what is the <ra> or <rb> of the <obj>`; the
//!   fact `(obj, category, kind)` decides which of the two kind-specific
//!   relations applies, and the answer is the object of that second fact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{AnswerVocab, Detection, QuestionKind, Sample, Split};
use super::embeddings::{tokenize, EmbeddingTable};
use super::kb::Triple;
use crate::error::{Error, Result};

const OBJECT_NAMES: &[&str] = &[
    "cucumber", "mouse", "keyboard", "cup", "dog", "cat", "car", "person", "tree", "bench",
    "lamp", "bottle", "book", "clock", "bird", "horse", "chair", "laptop", "pizza", "boat",
];
const VALUE_NAMES: &[&str] = &[
    "eukaryotes", "drinking", "rodent", "typing", "mammal", "plastic", "metal", "wood",
    "ceramic", "glass", "forest", "ocean", "desert", "city", "farm", "river", "paper",
    "leather", "cotton", "stone",
];
const RELATION_NAMES: &[&str] = &[
    "material", "purpose", "origin", "color", "shape", "texture", "smell", "sound",
];

pub const CATEGORY_RELATION: &str = "category";
/// Kind values and the relation each one selects in two-step questions.
pub const KINDS: [(&str, &str); 2] = [("natural", "habitat"), ("artificial", "maker")];

const TEMPLATE_WORDS: &[&str] = &["what", "is", "the", "of", "or", "has", "how", "related", "to"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OneStepStyle {
    /// Only object queries.
    Object,
    /// Object, subject and relation queries in equal proportion.
    Elements,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub embedding_dim: usize,
    pub objects: usize,
    pub values: usize,
    pub relations: usize,
    pub image_size: [f64; 2],
    pub objects_per_image: [usize; 2],
    pub box_size: [f64; 2],
    /// Fraction of two-step questions.
    pub two_step_fraction: f64,
    pub one_step: OneStepStyle,
    /// Train and validation fractions; the remainder is test.
    pub split: [f64; 2],
}

impl Default for SyntheticWorld {
    fn default() -> Self {
        Self {
            seed: 7,
            embedding_dim: 64,
            objects: 12,
            values: 16,
            relations: 4,
            image_size: [640.0, 480.0],
            objects_per_image: [3, 6],
            box_size: [40.0, 160.0],
            two_step_fraction: 0.565,
            one_step: OneStepStyle::Object,
            split: [0.6, 0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    ObjectQuery,
    SubjectQuery,
    RelationQuery,
    KindConditional,
}

impl Template {
    pub fn kind(self) -> QuestionKind {
        match self {
            Template::KindConditional => QuestionKind::TwoStep,
            _ => QuestionKind::OneStep,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub samples: Vec<Sample>,
    pub templates: Vec<Template>,
    pub triples: Vec<Triple>,
    pub answers: AnswerVocab,
    pub embeddings: EmbeddingTable,
}

struct Vocab {
    objects: Vec<String>,
    values: Vec<String>,
    relations: Vec<String>,
}

fn names(pool: &[&str], prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match pool.get(i) {
            Some(s) => s.to_string(),
            None => format!("{prefix}{i}"),
        })
        .collect()
}

impl SyntheticWorld {
    fn check(&self) -> Result<()> {
        let [lo, hi] = self.objects_per_image;
        if self.objects == 0 || self.values < 2 || self.relations == 0 {
            return Err(Error::Unsatisfiable(
                "need at least one object, two values and one relation".into(),
            ));
        }
        if lo == 0 || lo > hi || hi > self.objects {
            return Err(Error::Unsatisfiable(format!(
                "objects per image {lo}..={hi} incompatible with {} object categories",
                self.objects
            )));
        }
        if self.one_step == OneStepStyle::Elements && self.objects_per_image[0] < 1 {
            return Err(Error::Unsatisfiable("element queries need a visible object".into()));
        }
        if !(0.0..=1.0).contains(&self.two_step_fraction) {
            return Err(Error::Config("two_step_fraction must be in [0, 1]".into()));
        }
        let [bw0, bw1] = self.box_size;
        if !(bw0 > 0.0 && bw0 <= bw1 && bw1 < self.image_size[0].min(self.image_size[1])) {
            return Err(Error::Config("box size range must fit inside the image".into()));
        }
        Ok(())
    }

    fn vocab(&self) -> Vocab {
        Vocab {
            objects: names(OBJECT_NAMES, "object", self.objects),
            values: names(VALUE_NAMES, "value", self.values),
            relations: names(RELATION_NAMES, "relation", self.relations),
        }
    }

    /// Every token the world can emit, in a fixed order.
    pub fn tokens(&self) -> Vec<String> {
        let v = self.vocab();
        let mut out: Vec<String> = Vec::new();
        out.extend(v.objects);
        out.extend(v.values);
        out.extend(v.relations);
        out.push(CATEGORY_RELATION.into());
        for (k, r) in KINDS {
            out.push(k.into());
            out.push(r.into());
        }
        out.extend(TEMPLATE_WORDS.iter().map(|s| s.to_string()));
        out
    }

    /// Random unit vectors; mutually orthogonal when the dimension allows,
    /// so unrelated words have cosine similarity exactly 0.
    pub fn embeddings(&self) -> Result<EmbeddingTable> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_e11b);
        let tokens = self.tokens();
        let d = self.embedding_dim;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut table = EmbeddingTable::new(d);
        for t in &tokens {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if basis.len() < d {
                for b in &basis {
                    let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            if basis.len() < d {
                basis.push(v.clone());
            }
            table.insert(t.clone(), &v)?;
        }
        Ok(table)
    }

    pub fn generate(&self, n: usize) -> Result<GeneratedDataset> {
        self.check()?;
        let vocab = self.vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut samples = Vec::with_capacity(n);
        let mut templates = Vec::with_capacity(n);
        let mut triples = Vec::new();
        let n_train = (n as f64 * self.split[0]).round() as usize;
        let n_val = (n as f64 * self.split[1]).round() as usize;
        for i in 0..n {
            let template = if rng.gen::<f64>() < self.two_step_fraction {
                Template::KindConditional
            } else {
                match self.one_step {
                    OneStepStyle::Object => Template::ObjectQuery,
                    OneStepStyle::Elements => *[
                        Template::ObjectQuery,
                        Template::SubjectQuery,
                        Template::RelationQuery,
                    ]
                    .choose(&mut rng)
                    .expect("non-empty"),
                }
            };
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let id = format!("s{i}");
            let (sample, kb) = self.sample(&mut rng, &vocab, template, &id, split)?;
            triples.extend(kb.into_iter().map(|t| t.in_kb(&id)));
            samples.push(sample);
            templates.push(template);
        }
        let answers = AnswerVocab::from_training(&samples);
        Ok(GeneratedDataset {
            samples,
            templates,
            triples,
            answers,
            embeddings: self.embeddings()?,
        })
    }

    fn layout(&self, rng: &mut ChaCha8Rng, labels: &[String]) -> Result<Vec<Detection>> {
        let [w, h] = self.image_size;
        let [b0, b1] = self.box_size;
        labels
            .iter()
            .map(|l| {
                let bw = rng.gen_range(b0..=b1);
                let bh = rng.gen_range(b0..=b1);
                let x = rng.gen_range(0.0..w - bw);
                let y = rng.gen_range(0.0..h - bh);
                Detection::new(l, [x, y, x + bw, y + bh], rng.gen_range(0.5..1.0))
            })
            .collect()
    }

    fn sample(
        &self,
        rng: &mut ChaCha8Rng,
        v: &Vocab,
        template: Template,
        id: &str,
        split: Split,
    ) -> Result<(Sample, Vec<Triple>)> {
        let [lo, hi] = self.objects_per_image;
        let m = rng.gen_range(lo..=hi);
        let mut shuffled = v.objects.clone();
        shuffled.shuffle(rng);
        let visible: Vec<String> = shuffled[..m].to_vec();
        let hidden: Vec<String> = shuffled[m..].to_vec();
        let anchor = visible[0].clone();
        let others = &visible[1..];
        let value = |rng: &mut ChaCha8Rng| v.values.choose(rng).expect("values").clone();
        let pick_rels = |rng: &mut ChaCha8Rng, k: usize| -> Vec<String> {
            v.relations.choose_multiple(rng, k.min(v.relations.len())).cloned().collect()
        };

        let mut kb: Vec<Triple> = Vec::new();
        let (question, answer) = match template {
            Template::ObjectQuery => {
                let rels = pick_rels(rng, 3);
                let y = value(rng);
                kb.push(Triple::new(&anchor, &rels[0], &y));
                for r in &rels[1..] {
                    kb.push(Triple::new(&anchor, r, &value(rng)));
                }
                for b in others.iter().take(rng.gen_range(1..=2)) {
                    kb.push(Triple::new(b, &rels[0], &value(rng)));
                }
                (format!("what is the {anchor} {}", rels[0]), y)
            }
            Template::SubjectQuery => {
                let rels = pick_rels(rng, 3);
                let y = value(rng);
                kb.push(Triple::new(&y, &rels[0], &anchor));
                for r in &rels[1..] {
                    kb.push(Triple::new(&value(rng), r, &anchor));
                }
                for b in others.iter().take(rng.gen_range(1..=2)) {
                    kb.push(Triple::new(&value(rng), &rels[0], b));
                }
                (format!("what has {} {anchor}", rels[0]), y)
            }
            Template::RelationQuery => {
                let rels = pick_rels(rng, 3);
                let mut vals = v.values.clone();
                vals.shuffle(rng);
                let target = vals[0].clone();
                kb.push(Triple::new(&anchor, &rels[0], &target));
                for (r, val) in rels[1..].iter().zip(&vals[1..]) {
                    kb.push(Triple::new(&anchor, r, val));
                }
                if let Some(b) = others.first() {
                    let r = pick_rels(rng, 1).remove(0);
                    kb.push(Triple::new(b, &r, &target));
                }
                (format!("how is the {anchor} related to the {target}"), rels[0].clone())
            }
            Template::KindConditional => {
                let k = rng.gen_range(0..KINDS.len());
                let (kind, _) = KINDS[k];
                let mut answer = String::new();
                kb.push(Triple::new(&anchor, CATEGORY_RELATION, kind));
                for (j, (_, rel)) in KINDS.iter().enumerate() {
                    let y = value(rng);
                    if j == k {
                        answer = y.clone();
                    }
                    kb.push(Triple::new(&anchor, rel, &y));
                }
                for b in others.iter().take(rng.gen_range(1..=2)) {
                    if rng.gen_bool(0.5) {
                        let (bk, _) = *KINDS.choose(rng).expect("kinds");
                        kb.push(Triple::new(b, CATEGORY_RELATION, bk));
                    } else {
                        let (_, br) = *KINDS.choose(rng).expect("kinds");
                        kb.push(Triple::new(b, br, &value(rng)));
                    }
                }
                let mut rels = [KINDS[0].1, KINDS[1].1];
                rels.shuffle(rng);
                (
                    format!("what is the {} or {} of the {anchor}", rels[0], rels[1]),
                    answer,
                )
            }
        };
        for c in hidden.iter().take(2) {
            let r = pick_rels(rng, 1).remove(0);
            kb.push(Triple::new(c, &r, &value(rng)));
        }
        kb.shuffle(rng);

        let mut labels = visible.clone();
        labels.shuffle(rng);
        let detections = self.layout(rng, &labels)?;
        let sample = Sample {
            id: id.to_string(),
            question,
            detections,
            answer,
            split,
            kb: id.to_string(),
            kind: template.kind(),
        };
        Ok((sample, kb))
    }
}

/// Answers a generated question by following its template's fact chain
/// over the full sample KB. Returns `None` when the chain is broken or the
/// anchor object is not among the detections.
pub fn solve_symbolic(sample: &Sample, kb: &[Triple]) -> Option<String> {
    let q = tokenize(&sample.question);
    let q: Vec<&str> = q.iter().map(|s| s.as_str()).collect();
    let visible = |o: &str| sample.detections.iter().any(|d| d.label == o);
    let find = |s: Option<&str>, r: Option<&str>, o: Option<&str>| {
        kb.iter().find(|t| {
            s.is_none_or(|s| t.subject == s)
                && r.is_none_or(|r| t.relation == r)
                && o.is_none_or(|o| t.object == o)
        })
    };
    match q.as_slice() {
        ["what", "is", "the", ra, "or", rb, "of", "the", obj] => {
            if !visible(obj) {
                return None;
            }
            let kind = &find(Some(obj), Some(CATEGORY_RELATION), None)?.object;
            let (_, rel) = KINDS.iter().find(|(k, _)| k == kind)?;
            if rel != ra && rel != rb {
                return None;
            }
            Some(find(Some(obj), Some(rel), None)?.object.clone())
        }
        ["what", "is", "the", obj, rel] => {
            visible(obj).then_some(())?;
            Some(find(Some(obj), Some(rel), None)?.object.clone())
        }
        ["what", "has", rel, obj] => {
            visible(obj).then_some(())?;
            Some(find(None, Some(rel), Some(obj))?.subject.clone())
        }
        ["how", "is", "the", obj, "related", "to", "the", val] => {
            visible(obj).then_some(())?;
            Some(find(Some(obj), None, Some(val))?.relation.clone())
        }
        _ => None,
    }
}
