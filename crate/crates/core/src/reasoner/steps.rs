use super::{EdgeNorm, ModelConfig, QuestionEncoding};
use crate::error::{Error, Result};
use crate::spatial::{SpatialGraph, SPATIAL_DIM};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

fn check_step(t: usize, cfg: &ModelConfig) -> Result<()> {
    if t == 0 || t > cfg.steps {
        return Err(Error::StepOutOfRange { step: t, total: cfg.steps });
    }
    Ok(())
}

/// `α_s = softmax_s(W1(h_s ⊙ W2^t ReLU(W3 c^t)))`, `q^t = Σ_s α_s h_s`.
/// Returns `(α [S,1], q [1,2H])`.
pub fn step_question_attention<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    enc: &QuestionEncoding,
    c: NodeId,
    t: usize,
) -> Result<(NodeId, NodeId)> {
    check_step(t, cfg)?;
    let a = g.linear(c, "w3")?;
    let a = g.relu(a)?;
    let a = g.linear(a, &format!("w2_t{t}"))?;
    let gated = g.mul(enc.h, a)?;
    let logits = g.linear(gated, "w1")?;
    let alpha = g.softmax(logits, 0)?;
    let row = g.reshape(alpha, &[1, enc.len])?;
    let q = g.matmul(row, enc.h)?;
    Ok((alpha, q))
}

/// `c^t = W4^t ReLU(W5 [R^{t−1} ; I^{t−1}])` for `t ≥ 2`.
pub fn update_context<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, r: NodeId, i: NodeId, t: usize) -> Result<NodeId> {
    check_step(t, cfg)?;
    if t == 1 {
        return Err(Error::Config("the first context comes from the question encoder".into()));
    }
    let x = g.concat(&[r, i], 1)?;
    let x = g.linear(x, "w5")?;
    let x = g.relu(x)?;
    g.linear(x, &format!("w4_t{t}"))
}

/// `R^t = W11^t ELU(W12 [q^t ; m^t])`.
pub fn fuse_knowledge<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, q: NodeId, m: NodeId, t: usize) -> Result<NodeId> {
    check_step(t, cfg)?;
    let x = g.concat(&[q, m], 1)?;
    let x = g.linear(x, "w12")?;
    let x = g.elu(x)?;
    g.linear(x, &format!("w11_t{t}"))
}

/// Graph tensors for one sample: projected nodes and edges plus the
/// constant gather/scatter structure of the neighbourhoods.
#[derive(Debug, Clone)]
pub struct GraphNodes {
    pub nodes: usize,
    pub degree: usize,
    /// Projected node features `[M, width]`.
    pub v: NodeId,
    /// Projected edge features `[E, width]`.
    pub e: Option<NodeId>,
    pub targets: Vec<usize>,
    /// `[M, E]`, row `i` selects the edges leaving node `i`.
    pub incidence: Option<NodeId>,
}

pub fn place_graph<T: Scalar>(g: &mut Graph<T>, graph: &SpatialGraph) -> Result<GraphNodes> {
    let m = graph.len();
    if m == 0 {
        return Err(Error::Empty("graph nodes"));
    }
    let degree = graph.degree();
    if m > 1 && graph.neighbors.iter().any(|n| n.len() != degree || n.is_empty()) {
        return Err(Error::Config(
            "every node of a multi-node graph needs the same non-empty neighbourhood size".into(),
        ));
    }
    let nodes = g.input(Tensor::from_f64(&[m, graph.nodes[0].len()], &graph.nodes.concat())?)?;
    let v = g.linear(nodes, "node_proj")?;
    let ne = graph.edges.len();
    let (e, incidence) = if ne == 0 {
        (None, None)
    } else {
        let r: Vec<f64> = graph.edges.iter().flat_map(|e| e.r).collect();
        let feats = g.input(Tensor::from_f64(&[ne, SPATIAL_DIM], &r)?)?;
        let e = g.linear(feats, "edge_proj")?;
        let mut inc = vec![0.0; m * ne];
        for (k, edge) in graph.edges.iter().enumerate() {
            inc[edge.source * ne + k] = 1.0;
        }
        let inc = g.input(Tensor::from_f64(&[m, ne], &inc)?)?;
        (Some(e), Some(inc))
    };
    Ok(GraphNodes {
        nodes: m,
        degree,
        v,
        e,
        targets: graph.edges.iter().map(|e| e.target).collect(),
        incidence,
    })
}

/// `α_i = softmax_i(ω_v tanh(W13 v_i + W14 R))`, `[M, 1]`.
pub fn node_attention<T: Scalar>(g: &mut Graph<T>, v: NodeId, guide: NodeId) -> Result<NodeId> {
    let a = g.linear(v, "w13")?;
    let b = g.linear(guide, "w14")?;
    let x = g.add(a, b)?;
    let x = g.tanh(x)?;
    let s = g.linear(x, "omega_v")?;
    g.softmax(s, 0)
}

/// `β_ij = softmax(ω_e tanh(W15 e_ij + W16 R))`, `[E, 1]`; `None` when
/// the graph has no edges.
pub fn edge_attention<T: Scalar>(
    g: &mut Graph<T>,
    gn: &GraphNodes,
    guide: NodeId,
    norm: EdgeNorm,
) -> Result<Option<NodeId>> {
    let Some(e) = gn.e else { return Ok(None) };
    let a = g.linear(e, "w15")?;
    let b = g.linear(guide, "w16")?;
    let x = g.add(a, b)?;
    let x = g.tanh(x)?;
    let s = g.linear(x, "omega_e")?;
    let beta = match norm {
        EdgeNorm::Global => g.softmax(s, 0)?,
        EdgeNorm::Neighborhood => {
            let grid = g.reshape(s, &[gn.nodes, gn.degree])?;
            let grid = g.softmax(grid, 1)?;
            g.reshape(grid, &[gn.targets.len(), 1])?
        }
    };
    Ok(Some(beta))
}

/// Multi-head update. Per head `k`:
/// `m_i = Σ_{j∈N_i} [α_j W17 v_j ; β_ij W18 e_ij]`,
/// `h_i = α_i ReLU(W19 [m_i ; W20 v_i])`; then
/// `v̂_i = LayerNorm(ELU(W21 [h_i^1; …; h_i^H]))` with learned gain and bias.
pub fn graph_update<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    gn: &GraphNodes,
    v: NodeId,
    alpha: NodeId,
    beta: Option<NodeId>,
) -> Result<NodeId> {
    let dh = cfg.head_dim();
    let own = g.linear(v, "w20")?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for k in 0..cfg.heads {
        let msg = match (gn.e, beta, gn.incidence) {
            (Some(e), Some(beta), Some(inc)) => {
                let pv = g.linear(v, &format!("w17_h{k}"))?;
                let pv = g.mul(pv, alpha)?;
                let pv = g.gather_rows(pv, &gn.targets)?;
                let pe = g.linear(e, &format!("w18_h{k}"))?;
                let pe = g.mul(pe, beta)?;
                let per_edge = g.concat(&[pv, pe], 1)?;
                g.matmul(inc, per_edge)?
            }
            _ => g.input(Tensor::zeros(&[gn.nodes, 2 * dh]))?,
        };
        let x = g.concat(&[msg, own], 1)?;
        let x = g.linear(x, &format!("w19_h{k}"))?;
        let x = g.relu(x)?;
        heads.push(g.mul(x, alpha)?);
    }
    let x = g.concat(&heads, 1)?;
    let x = g.linear(x, "w21")?;
    let x = g.elu(x)?;
    let x = g.layer_norm(x)?;
    let gain = g.param("ln.g")?;
    let bias = g.param("ln.b")?;
    let x = g.mul(x, gain)?;
    g.add(x, bias)
}

/// Elementwise max over nodes, `[1, width]`.
pub fn pool_visual<T: Scalar>(g: &mut Graph<T>, v_hat: NodeId) -> Result<NodeId> {
    g.max_pool(v_hat, 0)
}
