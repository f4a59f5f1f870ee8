//! Dynamic key-value knowledge memory: keys are averaged triplet
//! embeddings, values are the subject, relation and object embeddings.
//! Key addressing and element-level value reading run on the graph.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{Fact, Triple};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// Elements per memory value: subject, relation, object.
pub const ELEMENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryVariant {
    /// Key = mean triplet embedding, value = the three element embeddings.
    Proposed,
    /// Each slot holds only the mean triplet embedding.
    AverageEmbedding,
    /// Key = mean of subject and relation, value = object.
    StandardKv,
}

impl std::str::FromStr for MemoryVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(MemoryVariant::Proposed),
            "average-embedding" | "average" => Ok(MemoryVariant::AverageEmbedding),
            "standard-kv" | "kv" => Ok(MemoryVariant::StandardKv),
            other => Err(Error::Config(format!("unknown memory variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for MemoryVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryVariant::Proposed => "proposed",
            MemoryVariant::AverageEmbedding => "average-embedding",
            MemoryVariant::StandardKv => "standard-kv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeMemory {
    pub dim: usize,
    /// `K` rows of width `dim`.
    pub keys: Vec<Vec<f64>>,
    /// Per slot: subject, relation, object vectors.
    pub values: Vec<[Vec<f64>; ELEMENTS]>,
    pub facts: Vec<Triple>,
    /// True when built from no facts (one all-zero slot).
    pub sentinel: bool,
}

impl KnowledgeMemory {
    pub fn build(facts: &[&Fact], dim: usize) -> Self {
        if facts.is_empty() {
            warn!("no facts retrieved; using a single zero memory slot");
            return Self {
                dim,
                keys: vec![vec![0.0; dim]],
                values: vec![[vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]]],
                facts: Vec::new(),
                sentinel: true,
            };
        }
        Self {
            dim,
            keys: facts.iter().map(|f| f.fact_vec.clone()).collect(),
            values: facts
                .iter()
                .map(|f| [f.subject_vec.clone(), f.relation_vec.clone(), f.object_vec.clone()])
                .collect(),
            facts: facts.iter().map(|f| f.triple.clone()).collect(),
            sentinel: false,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Same slots with every key and value zeroed (knowledge ablation).
    pub fn zeroed(&self) -> Self {
        let z = vec![0.0; self.dim];
        Self {
            dim: self.dim,
            keys: vec![z.clone(); self.len()],
            values: vec![[z.clone(), z.clone(), z]; self.len()],
            facts: self.facts.clone(),
            sentinel: self.sentinel,
        }
    }

    pub fn key_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_f64(&[self.len(), self.dim], &self.keys.concat())
    }

    /// Values as `[K·3, dim]`, slot-major.
    pub fn value_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let flat: Vec<f64> = self.values.iter().flat_map(|v| v.iter().flatten().copied()).collect();
        Tensor::from_f64(&[self.len() * ELEMENTS, self.dim], &flat)
    }

    fn variant_tensors<T: Scalar>(&self, variant: MemoryVariant) -> Result<(Tensor<T>, Tensor<T>)> {
        match variant {
            MemoryVariant::Proposed => Ok((self.key_tensor()?, self.value_tensor()?)),
            MemoryVariant::AverageEmbedding => {
                let k = self.key_tensor()?;
                Ok((k.clone(), k))
            }
            MemoryVariant::StandardKv => {
                let keys: Vec<f64> = self
                    .values
                    .iter()
                    .flat_map(|[s, r, _]| s.iter().zip(r).map(|(a, b)| (a + b) / 2.0))
                    .collect();
                let vals: Vec<f64> = self.values.iter().flat_map(|[_, _, o]| o.iter().copied()).collect();
                Ok((
                    Tensor::from_f64(&[self.len(), self.dim], &keys)?,
                    Tensor::from_f64(&[self.len(), self.dim], &vals)?,
                ))
            }
        }
    }
}

/// Memory tensors placed on a graph for one sample.
#[derive(Debug, Clone, Copy)]
pub struct MemoryNodes {
    pub variant: MemoryVariant,
    pub slots: usize,
    pub keys: NodeId,
    pub values: NodeId,
    /// `[K, K·3]` 0/1 matrix summing each slot's element rows.
    pub group: NodeId,
}

impl MemoryNodes {
    pub fn place<T: Scalar>(g: &mut Graph<T>, mem: &KnowledgeMemory, variant: MemoryVariant) -> Result<Self> {
        let (k, v) = mem.variant_tensors::<T>(variant)?;
        let slots = mem.len();
        let mut gm = vec![0.0; slots * slots * ELEMENTS];
        for i in 0..slots {
            for j in 0..ELEMENTS {
                gm[i * slots * ELEMENTS + i * ELEMENTS + j] = 1.0;
            }
        }
        Ok(Self {
            variant,
            slots,
            keys: g.input(k)?,
            values: g.input(v)?,
            group: g.input(Tensor::from_f64(&[slots, slots * ELEMENTS], &gm)?)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryReadout {
    /// Projected question `[1, d]`.
    pub q_hat: NodeId,
    /// Relevance over slots `[1, K]`.
    pub p: NodeId,
    /// Element weights `[K, 3]`; absent for single-value variants.
    pub s: Option<NodeId>,
    /// Question-guided value per slot `[K, d]`.
    pub t_hat: NodeId,
    /// Output `[1, d]`.
    pub m: NodeId,
}

fn two_layer<T: Scalar>(g: &mut Graph<T>, x: NodeId, inner: &str, outer: &str) -> Result<NodeId> {
    let a = g.linear(x, inner)?;
    let a = g.relu(a)?;
    let b = g.linear(a, outer)?;
    g.relu(b)
}

/// `q̂ = ReLU(W6 ReLU(W7 q))`, `k̂ = ReLU(W8 ReLU(W9 k))`, `p = softmax(q̂ k̂ᵀ)`.
pub fn address_keys<T: Scalar>(g: &mut Graph<T>, mem: &MemoryNodes, q: NodeId) -> Result<(NodeId, NodeId)> {
    let q_hat = two_layer(g, q, "w7", "w6")?;
    let k_hat = two_layer(g, mem.keys, "w9", "w8")?;
    let logits = g.matmul_nt(q_hat, k_hat)?;
    let p = g.softmax(logits, 1)?;
    Ok((q_hat, p))
}

/// `t̂_ij = ReLU(W10 ReLU(W11 t_ij))`, `z_i = softmax_j(q̂ t̂_ijᵀ)`,
/// `s_ij = (1 − z_ij)/2`, `t̂_i = Σ_j s_ij t̂_ij`. Returns `(s, t̂)`.
pub fn read_values<T: Scalar>(g: &mut Graph<T>, mem: &MemoryNodes, q_hat: NodeId) -> Result<(NodeId, NodeId)> {
    let t = two_layer(g, mem.values, "w11_mem", "w10")?;
    let z = g.matmul_nt(t, q_hat)?;
    let z = g.reshape(z, &[mem.slots, ELEMENTS])?;
    let z = g.softmax(z, 1)?;
    let s = g.affine(z, -0.5, 0.5)?;
    let col = g.reshape(s, &[mem.slots * ELEMENTS, 1])?;
    let weighted = g.mul(t, col)?;
    let t_hat = g.matmul(mem.group, weighted)?;
    Ok((s, t_hat))
}

pub fn read<T: Scalar>(g: &mut Graph<T>, mem: &MemoryNodes, q: NodeId) -> Result<MemoryReadout> {
    let (q_hat, p) = address_keys(g, mem, q)?;
    let (s, t_hat) = match mem.variant {
        MemoryVariant::Proposed => {
            let (s, t) = read_values(g, mem, q_hat)?;
            (Some(s), t)
        }
        MemoryVariant::AverageEmbedding => (None, two_layer(g, mem.values, "w9", "w8")?),
        MemoryVariant::StandardKv => (None, two_layer(g, mem.values, "w11_mem", "w10")?),
    };
    let m = g.matmul(p, t_hat)?;
    Ok(MemoryReadout { q_hat, p, s, t_hat, m })
}
