//! Engine-vs-oracle comparisons on random instances. Each returns the max
//! abs difference (infinity on a structural mismatch).

use dmmgr::data::{EmbeddingTable, Fact, Triple};
use dmmgr::memory::{self, KnowledgeMemory, MemoryNodes, MemoryVariant};
use dmmgr::reasoner::{
    edge_attention, graph_update, init_params, node_attention, place_graph, step_question_attention, EdgeNorm,
    ModelConfig, QuestionEncoding,
};
use dmmgr::retrieval::{retrieve_top_k, RetrievalQuery};
use dmmgr::spatial::build_graph_with;
use dmmgr::tensor::{Graph, Mode, ParamStore, Tensor};
use rand::Rng;

use super::oracle;
use super::{rand_detections, rand_table, rand_vec, rng, tiny_config};

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const WORDS: [&str; 10] = ["cup", "dog", "tree", "lamp", "used", "for", "drink", "is", "a", "pet"];

pub fn retrieval(seed: u64) -> f64 {
    let mut r = rng(seed);
    let table = rand_table(&mut r, &WORDS, 5);
    let n = r.gen_range(1..12);
    let facts: Vec<Fact> = (0..n)
        .map(|_| {
            let mut pick = || WORDS[r.gen_range(0..WORDS.len())];
            let rel = format!("{} {}", pick(), pick());
            Fact::embed(Triple::new(pick(), &rel, pick()), &table).unwrap()
        })
        .collect();
    let qn = r.gen_range(1..4);
    let query: Vec<Vec<f64>> = (0..qn).map(|_| rand_vec(&mut r, 5)).collect();
    let k = r.gen_range(1..7);
    let got = retrieve_top_k(&facts, &RetrievalQuery::new(query.clone(), k).unwrap());
    let words: Vec<Vec<Vec<f64>>> = facts.iter().map(|f| f.word_vecs.clone()).collect();
    let want = oracle::top_k(&words, &query, k);
    if got.iter().map(|s| s.index).ne(want.iter().map(|w| w.0)) {
        return f64::INFINITY;
    }
    let a: Vec<f64> = got.iter().map(|s| s.score).collect();
    let b: Vec<f64> = want.iter().map(|w| w.1).collect();
    max_diff(&a, &b)
}

pub fn knn(seed: u64) -> f64 {
    let mut r = rng(seed);
    let m = r.gen_range(1..12);
    let labels: Vec<&str> = (0..m).map(|i| WORDS[i % WORDS.len()]).collect();
    let dets = rand_detections(&mut r, &labels);
    let table = EmbeddingTable::new(3);
    let k = r.gen_range(1..7);
    let g = build_graph_with(&dets, &table, k).unwrap();
    let centers: Vec<(f64, f64)> = dets.iter().map(|d| d.center()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        if g.neighbors[i] != oracle::knn(&centers, i, k) {
            return f64::INFINITY;
        }
    }
    for e in &g.edges {
        let (bi, bj) = (dets[e.source].bbox, dets[e.target].bbox);
        let (wi, hi, wj, hj) = (bi[2] - bi[0], bi[3] - bi[1], bj[2] - bj[0], bj[3] - bj[1]);
        let s = (wi * hi).sqrt();
        let want = [
            ((bi[0] + bi[2]) / 2.0 - (bj[0] + bj[2]) / 2.0) / s,
            ((bi[1] + bi[3]) / 2.0 - (bj[1] + bj[3]) / 2.0) / s,
            wj / wi,
            hj / hi,
            wj * hj / (wi * hi),
        ];
        worst = worst.max(max_diff(&e.r, &want));
    }
    worst
}

fn random_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    // perturb zero-initialised biases so they take part in the comparison
    let mut p: ParamStore<f64> = init_params(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let ids: Vec<_> = p.ids().collect();
    for id in ids {
        for x in p.get_mut(id).data_mut() {
            *x += r.gen_range(-0.1..0.1);
        }
    }
    p
}

pub fn memory_readout(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = tiny_config(4);
    let params = random_params(&cfg, seed);
    let d = cfg.word_dim;
    let k = r.gen_range(1..7);
    let mem = KnowledgeMemory {
        dim: d,
        keys: (0..k).map(|_| rand_vec(&mut r, d)).collect(),
        values: (0..k)
            .map(|_| [rand_vec(&mut r, d), rand_vec(&mut r, d), rand_vec(&mut r, d)])
            .collect(),
        facts: Vec::new(),
        sentinel: false,
    };
    let q = rand_vec(&mut r, cfg.question_dim());
    let mut g = Graph::new(&params, Mode::Eval);
    let nodes = MemoryNodes::place(&mut g, &mem, MemoryVariant::Proposed).unwrap();
    let qn = g.input(Tensor::row(q.clone())).unwrap();
    let out = memory::read(&mut g, &nodes, qn).unwrap();
    let want = oracle::memory_readout(&params, &mem.keys, &mem.values, &q);
    let s_flat: Vec<f64> = want.s.iter().flatten().copied().collect();
    [
        max_diff(&g.value(out.q_hat).to_f64_vec(), &want.q_hat),
        max_diff(&g.value(out.p).to_f64_vec(), &want.p),
        max_diff(&g.value(out.s.unwrap()).to_f64_vec(), &s_flat),
        max_diff(&g.value(out.m).to_f64_vec(), &want.m),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn graph(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut cfg = tiny_config(4);
    cfg.edge_norm = if r.gen_bool(0.5) { EdgeNorm::Global } else { EdgeNorm::Neighborhood };
    let params = random_params(&cfg, seed);
    let m = r.gen_range(1..9);
    let labels: Vec<&str> = (0..m).map(|i| WORDS[i % WORDS.len()]).collect();
    let table = rand_table(&mut r, &WORDS, cfg.word_dim);
    let sg = build_graph_with(&rand_detections(&mut r, &labels), &table, r.gen_range(1..6)).unwrap();
    let guide = rand_vec(&mut r, cfg.guide_dim());

    let mut g = Graph::new(&params, Mode::Eval);
    let gn = place_graph(&mut g, &sg).unwrap();
    let gd = g.input(Tensor::row(guide.clone())).unwrap();
    let alpha = node_attention(&mut g, gn.v, gd).unwrap();
    let beta = edge_attention(&mut g, &gn, gd, cfg.edge_norm).unwrap();
    let v_hat = graph_update(&mut g, &cfg, &gn, gn.v, alpha, beta).unwrap();

    let edges: Vec<_> = sg.edges.iter().map(|e| (e.source, e.target, e.r)).collect();
    let want = oracle::graph_update(
        &params,
        &sg.nodes,
        &edges,
        sg.degree(),
        &guide,
        cfg.heads,
        cfg.edge_norm == EdgeNorm::Neighborhood,
    );
    let got_beta = beta.map(|b| g.value(b).to_f64_vec()).unwrap_or_default();
    let v_flat: Vec<f64> = want.v_hat.iter().flatten().copied().collect();
    [
        max_diff(&g.value(alpha).to_f64_vec(), &want.alpha),
        max_diff(&got_beta, &want.beta),
        max_diff(&g.value(v_hat).to_f64_vec(), &v_flat),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn question_attention(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut cfg = tiny_config(4);
    cfg.steps = 3;
    let params = random_params(&cfg, seed);
    let s = r.gen_range(1..8);
    let h: Vec<Vec<f64>> = (0..s).map(|_| rand_vec(&mut r, cfg.question_dim())).collect();
    let c = rand_vec(&mut r, cfg.question_dim());
    let t = r.gen_range(1..=cfg.steps);
    let mut g = Graph::new(&params, Mode::Eval);
    let enc = QuestionEncoding {
        h: g.input(Tensor::from_rows(&h).unwrap()).unwrap(),
        context: g.input(Tensor::row(c.clone())).unwrap(),
        len: s,
    };
    let (alpha, q) = step_question_attention(&mut g, &cfg, &enc, enc.context, t).unwrap();
    let (wa, wq) = oracle::question_attention(&params, &h, &c, t);
    max_diff(&g.value(alpha).to_f64_vec(), &wa).max(max_diff(&g.value(q).to_f64_vec(), &wq))
}

/// Runs the full model on a random instance and checks every attention
/// distribution sums to one and every element weight lies in [0, 0.5].
pub fn normalization(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let steps = r.gen_range(1..4);
    let mut inst = super::instance(seed, r.gen_range(1..7), r.gen_range(0..6), r.gen_range(0..9), steps);
    if r.gen_bool(0.5) {
        inst.cfg.edge_norm = EdgeNorm::Neighborhood;
    }
    inst.cfg.knowledge_guided = r.gen_bool(0.7);
    let params: ParamStore<f64> = init_params(&inst.cfg, seed).unwrap();
    let mut g = Graph::new(&params, Mode::Eval);
    let out = dmmgr::reasoner::run(&mut g, &inst.cfg, inst.inputs()).map_err(|e| e.to_string())?;
    let near_one = |v: &[f64], what: &str| -> Result<(), String> {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(format!("seed {seed}: {what} sums to {s}"));
        }
        Ok(())
    };
    for rec in out.records(&g) {
        near_one(&rec.question_weights, "question attention")?;
        near_one(&rec.p, "key addressing")?;
        near_one(&rec.node_weights, "node attention")?;
        for row in &rec.s {
            near_one(row, "element weights")?;
            if row.iter().any(|&x| !(0.0..=0.5).contains(&x)) {
                return Err(format!("seed {seed}: element weight outside [0, 0.5]: {row:?}"));
            }
        }
        if !rec.edge_weights.is_empty() {
            match inst.cfg.edge_norm {
                EdgeNorm::Global => near_one(&rec.edge_weights, "edge attention")?,
                EdgeNorm::Neighborhood => {
                    for chunk in rec.edge_weights.chunks(inst.graph.degree()) {
                        near_one(chunk, "edge attention")?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Integer-coordinate layout; translating by integers and scaling by
/// powers of two are exact in floating point.
pub fn integer_layout(r: &mut impl Rng, m: usize) -> Vec<[f64; 4]> {
    (0..m)
        .map(|_| {
            let x = r.gen_range(0..500) as f64;
            let y = r.gen_range(0..500) as f64;
            [x, y, x + r.gen_range(1..100) as f64, y + r.gen_range(1..100) as f64]
        })
        .collect()
}

/// r_ii = [0,0,1,1,1] and exact translation / uniform-scale invariance of
/// r_ij and the adjacency.
pub fn spatial_identities(seed: u64) -> Result<(), String> {
    use dmmgr::data::Detection;
    use dmmgr::spatial::relative_spatial_vector;
    let mut r = rng(seed);
    let m = r.gen_range(2..12);
    let boxes = integer_layout(&mut r, m);
    for b in &boxes {
        if relative_spatial_vector(b, b) != [0.0, 0.0, 1.0, 1.0, 1.0] {
            return Err(format!("seed {seed}: r_ii of {b:?}"));
        }
    }
    let (tx, ty) = (r.gen_range(-1000..1000) as f64, r.gen_range(-1000..1000) as f64);
    let scale = 2f64.powi(r.gen_range(-4..5));
    let table = EmbeddingTable::new(2);
    let graph_of = |bs: &[[f64; 4]]| {
        let dets: Vec<Detection> = bs.iter().map(|b| Detection::new("o", *b, 1.0).unwrap()).collect();
        build_graph_with(&dets, &table, 5).unwrap()
    };
    let base = graph_of(&boxes);
    let moved: Vec<[f64; 4]> = boxes.iter().map(|b| [b[0] + tx, b[1] + ty, b[2] + tx, b[3] + ty]).collect();
    let scaled: Vec<[f64; 4]> = boxes.iter().map(|b| b.map(|v| v * scale)).collect();
    for (name, other) in [("translation", graph_of(&moved)), ("scale", graph_of(&scaled))] {
        if other.neighbors != base.neighbors || other.edges.iter().zip(&base.edges).any(|(a, b)| a.r != b.r) {
            return Err(format!("seed {seed}: {name} changed the graph"));
        }
    }
    Ok(())
}
