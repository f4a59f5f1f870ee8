use serde::Serialize;

use super::{predict, top_k_indices, Prepared, RetrievedFact};
use crate::data::AnswerVocab;
use crate::error::Result;
use crate::reasoner::{ModelConfig, StepRecord};
use crate::tensor::{ParamStore, Scalar};

/// Per-step attention of one sample, for inspection.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionDump {
    pub id: String,
    pub tokens: Vec<String>,
    pub facts: Vec<RetrievedFact>,
    pub objects: Vec<String>,
    /// `(source, target)` per edge, in the order of `edge_weights`.
    pub edges: Vec<(usize, usize)>,
    pub steps: Vec<StepRecord>,
    pub prediction: String,
    pub top3: Vec<String>,
    pub gold: String,
}

pub fn attention_dump<T: Scalar>(
    params: &ParamStore<T>,
    model: &ModelConfig,
    answers: &AnswerVocab,
    p: &Prepared,
) -> Result<AttentionDump> {
    let (logits, steps) = predict(params, model, p)?;
    let top3: Vec<String> = top_k_indices(&logits, 3)
        .into_iter()
        .map(|i| answers.answer(i).to_string())
        .collect();
    Ok(AttentionDump {
        id: p.id.clone(),
        tokens: p.tokens.clone(),
        facts: p.retrieved.clone(),
        objects: p.graph.labels.clone(),
        edges: p.graph.edges.iter().map(|e| (e.source, e.target)).collect(),
        steps,
        prediction: top3.first().cloned().unwrap_or_default(),
        top3,
        gold: p.gold.clone(),
    })
}
