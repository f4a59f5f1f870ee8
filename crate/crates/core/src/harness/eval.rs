use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Prepared;
use crate::data::QuestionKind;
use crate::error::Result;
use crate::reasoner::{run, ModelConfig, StepRecord};
use crate::tensor::{Graph, Mode, ParamStore, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub samples: usize,
    pub top1: f64,
    pub top3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    pub top3: f64,
    /// Keyed by `one-step`, `two-step`, `unknown`.
    pub by_kind: BTreeMap<String, Accuracy>,
}

/// Indices of the `k` largest logits, ties by ascending index.
pub fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn kind_name(k: QuestionKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Scores `(logits, gold index, kind)` triples; a gold answer outside the
/// vocabulary counts as a miss.
pub fn report_from_logits(items: &[(Vec<f64>, Option<usize>, QuestionKind)]) -> EvalReport {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let (mut h1, mut h3) = (0, 0);
    for (logits, gold, kind) in items {
        let top = top_k_indices(logits, 3);
        let hit1 = gold.is_some_and(|g| top.first() == Some(&g));
        let hit3 = gold.is_some_and(|g| top.contains(&g));
        h1 += hit1 as usize;
        h3 += hit3 as usize;
        let c = counts.entry(kind_name(*kind)).or_default();
        c.0 += 1;
        c.1 += hit1 as usize;
        c.2 += hit3 as usize;
    }
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    EvalReport {
        samples: items.len(),
        top1: frac(h1, items.len()),
        top3: frac(h3, items.len()),
        by_kind: counts
            .into_iter()
            .map(|(k, (n, a, b))| {
                (
                    k,
                    Accuracy {
                        samples: n,
                        top1: frac(a, n),
                        top3: frac(b, n),
                    },
                )
            })
            .collect(),
    }
}

/// Evaluation-mode forward pass: logits and per-step attention records.
pub fn predict<T: Scalar>(
    params: &ParamStore<T>,
    model: &ModelConfig,
    p: &Prepared,
) -> Result<(Vec<f64>, Vec<StepRecord>)> {
    let mut g = Graph::new(params, Mode::Eval);
    let out = run(&mut g, model, p.inputs())?;
    Ok((out.logits(&g), out.records(&g)))
}

pub fn evaluate<T: Scalar>(params: &ParamStore<T>, model: &ModelConfig, data: &[Prepared]) -> Result<EvalReport> {
    let logits = super::par_map(data, |p| predict(params, model, p).map(|(l, _)| l))?;
    let items: Vec<_> = logits
        .into_iter()
        .zip(data)
        .map(|(l, p)| (l, p.answer, p.kind))
        .collect();
    Ok(report_from_logits(&items))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_fixture() {
        let items = vec![
            (vec![3.0, 1.0, 0.0, 2.0], Some(0), QuestionKind::OneStep),
            (vec![3.0, 1.0, 0.0, 2.0], Some(3), QuestionKind::OneStep),
            (vec![0.0, 0.0, 0.0, 0.0], Some(2), QuestionKind::TwoStep),
            (vec![0.5, 0.1, 0.9, 0.2], None, QuestionKind::TwoStep),
        ];
        let r = report_from_logits(&items);
        assert_eq!((r.samples, r.top1, r.top3), (4, 0.25, 0.75));
        assert_eq!(r.by_kind["one-step"].top1, 0.5);
        assert_eq!(r.by_kind["one-step"].top3, 1.0);
        assert_eq!(r.by_kind["two-step"].top3, 0.5);
    }

    #[test]
    fn uniform_logits_tie_break() {
        assert_eq!(top_k_indices(&[0.0; 10], 3), vec![0, 1, 2]);
        let r = report_from_logits(&[(vec![0.0; 10], Some(2), QuestionKind::Unknown)]);
        assert_eq!((r.top1, r.top3), (0.0, 1.0));
    }
}
