//! The iterative reasoning module: question encoding, per-step question
//! attention, memory read, knowledge fusion, node/edge attention,
//! multi-head graph update, pooling and answer prediction.

mod encoder;
mod params;
mod run;
mod steps;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryVariant;

pub use encoder::{encode_question, QuestionEncoding};
pub use params::{init_params, param_names};
pub use run::{loss, run, RunNodes, SampleInputs, StepNodes, StepRecord};
pub use steps::{
    edge_attention, fuse_knowledge, graph_update, node_attention, place_graph, pool_visual,
    step_question_attention, update_context, GraphNodes,
};

/// How edge attention scores are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeNorm {
    /// One softmax over every edge of the graph.
    Global,
    /// One softmax per source node's neighbourhood.
    Neighborhood,
}

impl std::str::FromStr for EdgeNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(EdgeNorm::Global),
            "neighborhood" | "neighbourhood" => Ok(EdgeNorm::Neighborhood),
            other => Err(Error::Config(format!("unknown edge normalisation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word and label embedding width.
    pub word_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Width of projected question, keys and values in the memory.
    pub memory_dim: usize,
    /// Graph working width; also the width of `R^t` and `I^t`.
    pub width: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub steps: usize,
    pub dropout: f64,
    pub memory: MemoryVariant,
    /// Use `R^t` (true) or `q^t` (false) as the graph-attention query.
    pub knowledge_guided: bool,
    pub edge_norm: EdgeNorm,
    pub answers: usize,
}

impl ModelConfig {
    pub fn full_scale(answers: usize) -> Self {
        Self {
            word_dim: 300,
            lstm_hidden: 512,
            lstm_layers: 2,
            memory_dim: 300,
            width: 1024,
            heads: 4,
            head_hidden: 1024,
            steps: 2,
            dropout: 0.1,
            memory: MemoryVariant::Proposed,
            knowledge_guided: true,
            edge_norm: EdgeNorm::Global,
            answers,
        }
    }

    /// Desk-scale widths used by tests and synthetic experiments.
    pub fn small(word_dim: usize, answers: usize) -> Self {
        Self {
            word_dim,
            lstm_hidden: 32,
            memory_dim: 32,
            width: 64,
            head_hidden: 64,
            ..Self::full_scale(answers)
        }
    }

    /// Width of each `h_s`, of `c^t` and of `q^t`.
    pub fn question_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn guide_dim(&self) -> usize {
        if self.knowledge_guided {
            self.width
        } else {
            self.question_dim()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("memory_dim", self.memory_dim),
            ("width", self.width),
            ("heads", self.heads),
            ("head_hidden", self.head_hidden),
            ("steps", self.steps),
            ("answers", self.answers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}
