//! Brute-force scalar reimplementations, written with plain loops and no
//! shared code with the tensor engine.

use dmmgr::tensor::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn weight(params: &ParamStore<f64>, name: &str) -> (Mat, Option<Vec<f64>>) {
    let w = params.by_name(&format!("{name}.w")).unwrap();
    let (r, c) = (w.shape()[0], w.shape()[1]);
    let m = (0..r).map(|i| (0..c).map(|j| w.data()[i * c + j]).collect()).collect();
    let b = params.by_name(&format!("{name}.b")).ok().map(|b| b.data().to_vec());
    (m, b)
}

/// `x · W + b` for one row vector.
pub fn linear(params: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let (w, b) = weight(params, name);
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += xi * w[i][k];
        }
        if let Some(b) = &b {
            acc += b[k];
        }
        *o = acc;
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn elu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }).collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        if v > hi {
            hi = v;
        }
    }
    let e: Vec<f64> = x.iter().map(|v| (v - hi).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// --- retrieval ---

/// Mean cosine over all (fact word, query word) pairs.
pub fn fact_score(fact_words: &[Vec<f64>], query: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for w in fact_words {
        for q in query {
            let d = norm(w) * norm(q);
            total += if d == 0.0 { 0.0 } else { dot(w, q) / d };
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Top-k by repeated arg-max (lowest index wins ties), skipping zero scores.
pub fn top_k(kb: &[Vec<Vec<f64>>], query: &[Vec<f64>], k: usize) -> Vec<(usize, f64)> {
    let scores: Vec<f64> = kb.iter().map(|f| fact_score(f, query)).collect();
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    while out.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] || scores[i] == 0.0 {
                continue;
            }
            if best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        taken[b] = true;
        out.push((b, scores[b]));
    }
    out
}

// --- spatial ---

/// k nearest other centres by repeated arg-min, ties by lower index.
pub fn knn(centers: &[(f64, f64)], i: usize, k: usize) -> Vec<usize> {
    let mut taken = vec![false; centers.len()];
    taken[i] = true;
    let mut out = Vec::new();
    for _ in 0..k.min(centers.len() - 1) {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..centers.len() {
            if taken[j] {
                continue;
            }
            let dx = centers[i].0 - centers[j].0;
            let dy = centers[i].1 - centers[j].1;
            let d = dx * dx + dy * dy;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        let (_, j) = best.unwrap();
        taken[j] = true;
        out.push(j);
    }
    out
}

// --- memory ---

pub struct MemoryOracle {
    pub q_hat: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<[f64; 3]>,
    pub m: Vec<f64>,
}

fn two_layer(params: &ParamStore<f64>, inner: &str, outer: &str, x: &[f64]) -> Vec<f64> {
    relu(&linear(params, outer, &relu(&linear(params, inner, x))))
}

/// Key addressing, element weights and readout for the proposed memory.
pub fn memory_readout(
    params: &ParamStore<f64>,
    keys: &[Vec<f64>],
    values: &[[Vec<f64>; 3]],
    q: &[f64],
) -> MemoryOracle {
    let q_hat = two_layer(params, "w7", "w6", q);
    let logits: Vec<f64> = keys.iter().map(|k| dot(&q_hat, &two_layer(params, "w9", "w8", k))).collect();
    let p = softmax(&logits);
    let mut m = vec![0.0; q_hat.len()];
    let mut s_all = Vec::new();
    for (i, slot) in values.iter().enumerate() {
        let t: Vec<Vec<f64>> = slot.iter().map(|e| two_layer(params, "w11_mem", "w10", e)).collect();
        let z = softmax(&[dot(&t[0], &q_hat), dot(&t[1], &q_hat), dot(&t[2], &q_hat)]);
        let s = [0.5 * (1.0 - z[0]), 0.5 * (1.0 - z[1]), 0.5 * (1.0 - z[2])];
        for d in 0..m.len() {
            let t_hat = s[0] * t[0][d] + s[1] * t[1][d] + s[2] * t[2][d];
            m[d] += p[i] * t_hat;
        }
        s_all.push(s);
    }
    MemoryOracle { q_hat, p, s: s_all, m }
}

// --- question attention ---

pub fn question_attention(params: &ParamStore<f64>, h: &[Vec<f64>], c: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
    let a = linear(params, &format!("w2_t{t}"), &relu(&linear(params, "w3", c)));
    let logits: Vec<f64> = h
        .iter()
        .map(|hs| {
            let gated: Vec<f64> = hs.iter().zip(&a).map(|(x, y)| x * y).collect();
            linear(params, "w1", &gated)[0]
        })
        .collect();
    let alpha = softmax(&logits);
    let mut q = vec![0.0; h[0].len()];
    for (s, hs) in h.iter().enumerate() {
        for d in 0..q.len() {
            q[d] += alpha[s] * hs[d];
        }
    }
    (alpha, q)
}

// --- graph ---

pub struct GraphOracle {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub v_hat: Mat,
}

/// Node/edge attention and one multi-head update. `edges` are
/// `(source, target, r)` grouped by source, `degree` per node.
pub fn graph_update(
    params: &ParamStore<f64>,
    nodes: &[Vec<f64>],
    edges: &[(usize, usize, [f64; 5])],
    degree: usize,
    guide: &[f64],
    heads: usize,
    neighborhood: bool,
) -> GraphOracle {
    let v: Mat = nodes.iter().map(|x| linear(params, "node_proj", x)).collect();
    let w14 = linear(params, "w14", guide);
    let scores: Vec<f64> = v
        .iter()
        .map(|vi| {
            let a = linear(params, "w13", vi);
            let x: Vec<f64> = a.iter().zip(&w14).map(|(p, q)| (p + q).tanh()).collect();
            linear(params, "omega_v", &x)[0]
        })
        .collect();
    let alpha = softmax(&scores);
    let e: Mat = edges.iter().map(|(_, _, r)| linear(params, "edge_proj", r)).collect();
    let w16 = linear(params, "w16", guide);
    let escores: Vec<f64> = e
        .iter()
        .map(|eij| {
            let a = linear(params, "w15", eij);
            let x: Vec<f64> = a.iter().zip(&w16).map(|(p, q)| (p + q).tanh()).collect();
            linear(params, "omega_e", &x)[0]
        })
        .collect();
    let beta = if escores.is_empty() {
        Vec::new()
    } else if neighborhood {
        escores.chunks(degree).flat_map(softmax).collect()
    } else {
        softmax(&escores)
    };
    let width = v[0].len();
    let dh = width / heads;
    let mut v_hat = Vec::new();
    for i in 0..v.len() {
        let own = linear(params, "w20", &v[i]);
        let mut cat = Vec::new();
        for k in 0..heads {
            let mut msg = vec![0.0; 2 * dh];
            for (idx, &(src, dst, _)) in edges.iter().enumerate() {
                if src != i {
                    continue;
                }
                let pv = linear(params, &format!("w17_h{k}"), &v[dst]);
                let pe = linear(params, &format!("w18_h{k}"), &e[idx]);
                for d in 0..dh {
                    msg[d] += alpha[dst] * pv[d];
                    msg[dh + d] += beta[idx] * pe[d];
                }
            }
            let h = relu(&linear(params, &format!("w19_h{k}"), &concat(&msg, &own)));
            cat.extend(h.iter().map(|x| alpha[i] * x));
        }
        let x = elu(&linear(params, "w21", &cat));
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let g = params.by_name("ln.g").unwrap().data();
        let b = params.by_name("ln.b").unwrap().data();
        v_hat.push(
            x.iter()
                .enumerate()
                .map(|(d, a)| (a - mean) / (var + 1e-5).sqrt() * g[d] + b[d])
                .collect(),
        );
    }
    GraphOracle { alpha, beta, v_hat }
}
