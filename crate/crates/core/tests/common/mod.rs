#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use dmmgr::data::{Detection, EmbeddingTable, Fact, Triple};
use dmmgr::memory::KnowledgeMemory;
use dmmgr::reasoner::ModelConfig;
use dmmgr::spatial::{build_graph, SpatialGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rand_table(rng: &mut impl Rng, words: &[&str], d: usize) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(d);
    for w in words {
        t.insert(*w, &rand_vec(rng, d)).unwrap();
    }
    t
}

/// Boxes in generic position inside a 100×100 image.
pub fn rand_detections(rng: &mut impl Rng, labels: &[&str]) -> Vec<Detection> {
    labels
        .iter()
        .map(|l| {
            let x = rng.gen_range(0.0..80.0);
            let y = rng.gen_range(0.0..80.0);
            let w = rng.gen_range(5.0..20.0);
            let h = rng.gen_range(5.0..20.0);
            Detection::new(l, [x, y, x + w, y + h], rng.gen_range(0.1..1.0)).unwrap()
        })
        .collect()
}

pub struct Instance {
    pub cfg: ModelConfig,
    pub words: Vec<Vec<f64>>,
    pub memory: KnowledgeMemory,
    pub graph: SpatialGraph,
    pub answer: usize,
}

impl Instance {
    pub fn inputs(&self) -> dmmgr::reasoner::SampleInputs<'_> {
        dmmgr::reasoner::SampleInputs {
            words: &self.words,
            memory: &self.memory,
            graph: &self.graph,
        }
    }
}

pub fn tiny_config(answers: usize) -> ModelConfig {
    ModelConfig {
        lstm_hidden: 3,
        memory_dim: 4,
        width: 8,
        head_hidden: 6,
        dropout: 0.0,
        ..ModelConfig::small(6, answers)
    }
}

/// S words, the given number of facts and objects; T from `steps`.
pub fn instance(seed: u64, s: usize, facts: usize, objects: usize, steps: usize) -> Instance {
    let mut r = rng(seed);
    let mut cfg = tiny_config(5);
    cfg.steps = steps;
    let vocab = ["cup", "dog", "tree", "lamp", "used", "for", "drinking", "is", "a", "mammal", "what", "the"];
    let table = rand_table(&mut r, &vocab, cfg.word_dim);
    let words = (0..s).map(|_| rand_vec(&mut r, cfg.word_dim)).collect();
    let fs: Vec<Fact> = (0..facts)
        .map(|i| {
            let t = Triple::new(vocab[i % 4], if i % 2 == 0 { "used for" } else { "is a" }, vocab[6 + i % 4]);
            Fact::embed(t, &table).unwrap()
        })
        .collect();
    let refs: Vec<&Fact> = fs.iter().collect();
    let memory = KnowledgeMemory::build(&refs, cfg.word_dim);
    let graph = build_graph(&rand_detections(&mut r, &vocab[..objects]), &table).unwrap();
    Instance {
        cfg,
        words,
        memory,
        graph,
        answer: r.gen_range(0..5),
    }
}

/// Very small widths for harness tests; one epoch.
pub fn tiny_train_config() -> dmmgr::harness::TrainConfig {
    dmmgr::harness::TrainConfig {
        lstm_hidden: 6,
        lstm_layers: 1,
        memory_dim: 6,
        width: 8,
        heads: 2,
        head_hidden: 8,
        batch_size: 4,
        lr: 3e-3,
        epochs: 1,
        ..Default::default()
    }
}

pub fn fixture_dir(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Config reading one of the handcrafted fixture corpora.
pub fn fixture_config(format: &str) -> dmmgr::harness::TrainConfig {
    dmmgr::harness::TrainConfig {
        format: format.into(),
        data_dir: fixture_dir(format).display().to_string(),
        embeddings: fixture_dir("embeddings.txt").display().to_string(),
        ..tiny_train_config()
    }
}
