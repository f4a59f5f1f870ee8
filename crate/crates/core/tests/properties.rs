mod common;

use dmmgr::data::EmbeddingTable;
use dmmgr::memory::KnowledgeMemory;
use dmmgr::reasoner::{init_params, run};
use dmmgr::spatial::{build_graph, relative_spatial_vector};
use dmmgr::tensor::{Graph, Mode, ParamStore, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c)))
}

proptest! {
    #[test]
    fn softmax_normalises_either_axis((r, c, data) in matrix(), axis in 0usize..2) {
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::new(vec![r, c], data).unwrap()).unwrap();
        let y = g.softmax(x, axis).unwrap();
        let v = g.value(y);
        let groups: Vec<f64> = if axis == 1 {
            (0..r).map(|i| (0..c).map(|j| v.at(i, j)).sum()).collect()
        } else {
            (0..c).map(|j| (0..r).map(|i| v.at(i, j)).sum()).collect()
        };
        for s in groups {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance((r, c, data) in matrix()) {
        prop_assume!(c >= 2);
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, Mode::Eval);
        let x = g.input(Tensor::new(vec![r, c], data.clone()).unwrap()).unwrap();
        let y = g.layer_norm(x).unwrap();
        let v = g.value(y);
        for i in 0..r {
            let row = &data[i * c..(i + 1) * c];
            let m0 = row.iter().sum::<f64>() / c as f64;
            let var0 = row.iter().map(|a| (a - m0) * (a - m0)).sum::<f64>() / c as f64;
            prop_assume!(var0 > 1e-2);
            let out = v.row_slice(i);
            let mean = out.iter().sum::<f64>() / c as f64;
            let var = out.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-10);
            // eps in the denominator shrinks the variance by var0 / (var0 + eps)
            prop_assert!((var - var0 / (var0 + 1e-5)).abs() < 1e-9);
        }
    }

    #[test]
    fn spatial_vector_identity_and_invariance(
        x in -500i32..500, y in -500i32..500, w in 1i32..200, h in 1i32..200,
        x2 in -500i32..500, y2 in -500i32..500, w2 in 1i32..200, h2 in 1i32..200,
        tx in -1000i32..1000, ty in -1000i32..1000, k in -6i32..6,
    ) {
        let b = |x: i32, y: i32, w: i32, h: i32| [x as f64, y as f64, (x + w) as f64, (y + h) as f64];
        let (bi, bj) = (b(x, y, w, h), b(x2, y2, w2, h2));
        prop_assert_eq!(relative_spatial_vector(&bi, &bi), [0.0, 0.0, 1.0, 1.0, 1.0]);
        let r = relative_spatial_vector(&bi, &bj);
        let (ti, tj) = (b(x + tx, y + ty, w, h), b(x2 + tx, y2 + ty, w2, h2));
        prop_assert_eq!(relative_spatial_vector(&ti, &tj), r);
        let s = 2f64.powi(k);
        prop_assert_eq!(relative_spatial_vector(&bi.map(|v| v * s), &bj.map(|v| v * s)), r);
    }

    #[test]
    fn spatial_layout_invariance(seed in 0u64..10_000) {
        prop_assert_eq!(common::checks::spatial_identities(seed), Ok(()));
    }

    #[test]
    fn attention_weights_normalised(seed in 0u64..100_000) {
        prop_assert_eq!(common::checks::normalization(seed), Ok(()));
    }

    #[test]
    fn phrase_embedding_ignores_word_order(
        vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
        perm_seed in any::<u64>(),
    ) {
        let mut t = EmbeddingTable::new(4);
        let words: Vec<String> = (0..vecs.len()).map(|i| format!("w{i}")).collect();
        for (w, v) in words.iter().zip(&vecs) {
            t.insert(w.clone(), v).unwrap();
        }
        let mut shuffled = words.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut common::rng(perm_seed));
        let a = t.embed_phrase(&words).unwrap();
        let b = t.embed_phrase(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_invariant_to_fact_and_detection_order(seed in 0u64..1000, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let inst = common::instance(seed, 4, 4, 5, 2);
        let params: ParamStore<f64> = init_params(&inst.cfg, seed).unwrap();
        let logits = |mem: &KnowledgeMemory, graph: &dmmgr::spatial::SpatialGraph| {
            let mut g = Graph::new(&params, Mode::Eval);
            let x = dmmgr::reasoner::SampleInputs { words: &inst.words, memory: mem, graph };
            let out = run(&mut g, &inst.cfg, x).unwrap();
            out.logits(&g)
        };
        let base = logits(&inst.memory, &inst.graph);

        let mut r = common::rng(perm_seed);
        let mut order: Vec<usize> = (0..inst.memory.len()).collect();
        order.shuffle(&mut r);
        let mut mem = inst.memory.clone();
        mem.keys = order.iter().map(|&i| inst.memory.keys[i].clone()).collect();
        mem.values = order.iter().map(|&i| inst.memory.values[i].clone()).collect();

        let vocab = ["cup", "dog", "tree", "lamp", "used"];
        let table = common::rand_table(&mut common::rng(seed), &vocab, inst.cfg.word_dim);
        let dets = common::rand_detections(&mut common::rng(seed + 1), &vocab);
        let mut shuffled = dets.clone();
        shuffled.shuffle(&mut r);
        let g1 = build_graph(&dets, &table).unwrap();
        let g2 = build_graph(&shuffled, &table).unwrap();

        let a = logits(&mem, &inst.graph);
        let (b1, b2) = (logits(&inst.memory, &g1), logits(&inst.memory, &g2));
        for i in 0..base.len() {
            prop_assert!((a[i] - base[i]).abs() < 1e-9);
            prop_assert!((b1[i] - b2[i]).abs() < 1e-9);
        }
    }
}
