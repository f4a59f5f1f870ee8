//! Training, evaluation, ablation and attention dumps.

mod ablate;
mod config;
mod dump;
mod eval;
mod optim;
mod prepare;
mod train;

pub use ablate::{run_ablation, run_once, AblationRow, AblationTable, RunSummary, Suite};
pub use config::TrainConfig;
pub use dump::{attention_dump, AttentionDump};
pub use eval::{evaluate, predict, report_from_logits, top_k_indices, Accuracy, EvalReport};
pub use optim::{lr_at, Adam};
pub use prepare::{prepare, prepare_one, Corpus, Prepared, RetrievedFact};
pub use train::{
    check_vocabulary, fit, load_model, save_outcome, train, EpochLog, LoadedModel, TrainOutcome,
};

use crate::error::Result;

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<I, O, F>(items: &[I], f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// splitmix64 over a few words; used for per-sample dropout seeds.
pub(crate) fn mix(words: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
