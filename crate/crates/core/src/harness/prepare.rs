use std::path::Path;

use serde::Serialize;

use super::TrainConfig;
use crate::data::{
    load_dataset, load_embeddings, load_fvqa, load_kb, load_krvqr, AnswerVocab, DataFormat, EmbeddingTable,
    GeneratedDataset, KnowledgeBase, QuestionKind, Sample, Split, Triple,
};
use crate::error::{Error, Result};
use crate::memory::KnowledgeMemory;
use crate::reasoner::SampleInputs;
use crate::retrieval::{retrieve_top_k, RetrievalQuery};
use crate::spatial::{build_graph, SpatialGraph};

/// Samples with the KB and embeddings they are grounded in.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub kb: KnowledgeBase,
    pub table: EmbeddingTable,
    pub answers: AnswerVocab,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>, triples: Vec<Triple>, table: EmbeddingTable) -> Result<Self> {
        let kb = KnowledgeBase::from_triples(triples, &table)?;
        let answers = AnswerVocab::from_training(&samples);
        if answers.is_empty() {
            return Err(Error::Empty("training answers"));
        }
        Ok(Self {
            samples,
            kb,
            table,
            answers,
        })
    }

    pub fn from_generated(d: GeneratedDataset) -> Result<Self> {
        Self::new(d.samples, d.triples, d.embeddings)
    }

    /// Loads the data named by the configuration's paths and format.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let need = |name: &str, v: &str| -> Result<()> {
            if v.is_empty() {
                return Err(Error::Config(format!("`{name}` is required for format `{}`", cfg.format)));
            }
            Ok(())
        };
        need("embeddings", &cfg.embeddings)?;
        let table = load_embeddings(Path::new(&cfg.embeddings))?;
        match cfg.format.parse::<DataFormat>()? {
            DataFormat::Native => {
                need("dataset", &cfg.dataset)?;
                need("kb", &cfg.kb)?;
                let samples = load_dataset(Path::new(&cfg.dataset))?;
                let kb = load_kb(Path::new(&cfg.kb), &table)?;
                let answers = AnswerVocab::from_training(&samples);
                Ok(Self {
                    samples,
                    kb,
                    table,
                    answers,
                })
            }
            DataFormat::Krvqr => {
                need("data_dir", &cfg.data_dir)?;
                let d = load_krvqr(Path::new(&cfg.data_dir))?;
                Self::new(d.samples, d.triples, table)
            }
            DataFormat::Fvqa => {
                need("data_dir", &cfg.data_dir)?;
                let d = load_fvqa(Path::new(&cfg.data_dir))?;
                Self::new(d.samples, d.triples, table)
            }
        }
    }

    /// `load`, except that the native format with no dataset path draws a
    /// synthetic corpus from `cfg.world`.
    pub fn resolve(cfg: &TrainConfig) -> Result<Self> {
        if cfg.format == "native" && cfg.dataset.is_empty() {
            log::info!("no dataset given; generating {} synthetic samples (world seed {})", cfg.samples, cfg.world.seed);
            return Self::from_generated(cfg.world.generate(cfg.samples)?);
        }
        Self::load(cfg)
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedFact {
    pub fact: String,
    pub score: f64,
}

/// A sample with its retrieval, memory and graph precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub kind: QuestionKind,
    pub tokens: Vec<String>,
    pub words: Vec<Vec<f64>>,
    pub memory: KnowledgeMemory,
    pub graph: SpatialGraph,
    pub retrieved: Vec<RetrievedFact>,
    pub gold: String,
    /// Gold index in the answer vocabulary, if the answer is in it.
    pub answer: Option<usize>,
}

impl Prepared {
    pub fn inputs(&self) -> SampleInputs<'_> {
        SampleInputs {
            words: &self.words,
            memory: &self.memory,
            graph: &self.graph,
        }
    }
}

pub fn prepare_one(corpus: &Corpus, s: &Sample, answers: &AnswerVocab, cfg: &TrainConfig) -> Result<Prepared> {
    let facts = corpus.kb.get(&s.kb);
    let query = RetrievalQuery::for_sample(s, facts, &corpus.table, cfg.top_k)?;
    let hits = retrieve_top_k(facts, &query);
    let chosen: Vec<_> = hits.iter().map(|h| &facts[h.index]).collect();
    let mut memory = KnowledgeMemory::build(&chosen, corpus.table.dim());
    if cfg.zero_memory {
        memory = memory.zeroed();
    }
    let graph = build_graph(&s.top_detections(cfg.max_detections), &corpus.table)?;
    let tokens = s.tokens();
    if tokens.is_empty() {
        return Err(Error::Empty("question"));
    }
    Ok(Prepared {
        id: s.id.clone(),
        kind: s.kind,
        words: tokens.iter().map(|t| corpus.table.vector(t).to_vec()).collect(),
        tokens,
        memory,
        graph,
        retrieved: hits
            .iter()
            .map(|h| RetrievedFact {
                fact: facts[h.index].triple.to_string(),
                score: h.score,
            })
            .collect(),
        gold: s.answer.clone(),
        answer: answers.index_of(&s.answer),
    })
}

pub fn prepare(corpus: &Corpus, samples: &[&Sample], answers: &AnswerVocab, cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            prepare_one(corpus, s, answers, cfg).map_err(|e| Error::Record {
                index: i,
                msg: format!("sample `{}`: {e}", s.id),
            })
        })
        .collect()
}
