use serde::Serialize;

use super::{
    edge_attention, encode_question, fuse_knowledge, graph_update, node_attention, place_graph, pool_visual,
    step_question_attention, update_context, ModelConfig, QuestionEncoding,
};
use crate::error::{Error, Result};
use crate::memory::{self, KnowledgeMemory, MemoryNodes};
use crate::spatial::SpatialGraph;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// Everything `run` consumes for one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleInputs<'a> {
    /// One word vector per question token.
    pub words: &'a [Vec<f64>],
    pub memory: &'a KnowledgeMemory,
    pub graph: &'a SpatialGraph,
}

#[derive(Debug, Clone)]
pub struct StepNodes {
    pub question_weights: NodeId,
    pub q: NodeId,
    pub p: NodeId,
    pub s: Option<NodeId>,
    pub m: NodeId,
    pub r: NodeId,
    pub node_weights: NodeId,
    pub edge_weights: Option<NodeId>,
    pub v_hat: NodeId,
    pub i: NodeId,
}

#[derive(Debug, Clone)]
pub struct RunNodes {
    pub encoding: QuestionEncoding,
    pub steps: Vec<StepNodes>,
    pub logits: NodeId,
}

/// Attention weights of one reasoning step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub question_weights: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub node_weights: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl RunNodes {
    pub fn records<T: Scalar>(&self, g: &Graph<T>) -> Vec<StepRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, st)| StepRecord {
                step: t + 1,
                question_weights: g.value(st.question_weights).to_f64_vec(),
                p: g.value(st.p).to_f64_vec(),
                s: st
                    .s
                    .map(|s| {
                        let v = g.value(s);
                        (0..v.rows()).map(|r| v.row_slice(r).iter().map(|x| x.as_f64()).collect()).collect()
                    })
                    .unwrap_or_default(),
                node_weights: g.value(st.node_weights).to_f64_vec(),
                edge_weights: st.edge_weights.map(|b| g.value(b).to_f64_vec()).unwrap_or_default(),
            })
            .collect()
    }

    pub fn logits<T: Scalar>(&self, g: &Graph<T>) -> Vec<f64> {
        g.value(self.logits).to_f64_vec()
    }
}

/// Runs `cfg.steps` reasoning steps and the prediction head. The context
/// is updated after every step except the last, and each step's updated
/// nodes feed the next step.
pub fn run<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, x: SampleInputs) -> Result<RunNodes> {
    cfg.validate()?;
    if x.words.is_empty() {
        return Err(Error::Empty("question"));
    }
    let words = Tensor::from_f64(&[x.words.len(), cfg.word_dim], &x.words.concat())?;
    let enc = encode_question(g, cfg, words)?;
    let mem = MemoryNodes::place(g, x.memory, cfg.memory)?;
    let gn = place_graph(g, x.graph)?;
    let mut c = enc.context;
    let mut v = gn.v;
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let (question_weights, q) = step_question_attention(g, cfg, &enc, c, t)?;
        let read = memory::read(g, &mem, q)?;
        let r = fuse_knowledge(g, cfg, q, read.m, t)?;
        let guide = if cfg.knowledge_guided { r } else { q };
        let node_weights = node_attention(g, v, guide)?;
        let edge_weights = edge_attention(g, &gn, guide, cfg.edge_norm)?;
        let v_hat = graph_update(g, cfg, &gn, v, node_weights, edge_weights)?;
        let i = pool_visual(g, v_hat)?;
        if t < cfg.steps {
            c = update_context(g, cfg, r, i, t + 1)?;
        }
        v = v_hat;
        steps.push(StepNodes {
            question_weights,
            q,
            p: read.p,
            s: read.s,
            m: read.m,
            r,
            node_weights,
            edge_weights,
            v_hat,
            i,
        });
    }
    let last = steps.last().expect("at least one step");
    let x = g.concat(&[last.r, last.i], 1)?;
    let x = g.linear(x, "head1")?;
    let x = g.relu(x)?;
    let x = g.dropout(x, cfg.dropout)?;
    let logits = g.linear(x, "head2")?;
    Ok(RunNodes {
        encoding: enc,
        steps,
        logits,
    })
}

/// Cross-entropy of one sample's logits against its answer index.
pub fn loss<T: Scalar>(g: &mut Graph<T>, logits: NodeId, answer: usize) -> Result<NodeId> {
    g.cross_entropy(logits, &[answer])
}
