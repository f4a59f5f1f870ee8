use serde::Serialize;

use super::{evaluate, fit, prepare, Corpus, EvalReport, TrainConfig};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::memory::MemoryVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// T = 1..4.
    Steps,
    /// The three memory constructions.
    Memory,
    /// Knowledge-guided graph attention on/off and an all-zero memory.
    Knowledge,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steps" => Ok(Suite::Steps),
            "memory" => Ok(Suite::Memory),
            "knowledge" => Ok(Suite::Knowledge),
            other => Err(Error::Config(format!("unknown ablation suite `{other}` (steps, memory, knowledge)"))),
        }
    }
}

impl Suite {
    pub fn settings(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Suite::Steps => (1..=4).map(|t| (format!("T={t}"), with(&|c| c.steps = t))).collect(),
            Suite::Memory => [MemoryVariant::Proposed, MemoryVariant::AverageEmbedding, MemoryVariant::StandardKv]
                .into_iter()
                .map(|m| (m.to_string(), with(&|c| c.memory = m)))
                .collect(),
            Suite::Knowledge => vec![
                ("guided".into(), with(&|c| c.knowledge_guided = true)),
                ("unguided".into(), with(&|c| c.knowledge_guided = false)),
                ("zero-memory".into(), with(&|c| c.zero_memory = true)),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_top1: f64,
    pub test: Option<EvalReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub runs: Vec<RunSummary>,
    pub mean_val_top1: f64,
    pub mean_test_top1: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, setting: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<20} {:>10} {:>10}  per-seed val top-1\n", "setting", "val top-1", "test top-1");
        for r in &self.rows {
            let test = r.mean_test_top1.map_or("-".to_string(), |t| format!("{t:.4}"));
            let seeds: Vec<String> = r.runs.iter().map(|x| format!("{:.4}", x.val_top1)).collect();
            out.push_str(&format!(
                "{:<20} {:>10.4} {:>10}  {}\n",
                r.setting,
                r.mean_val_top1,
                test,
                seeds.join(" ")
            ));
        }
        out
    }
}

/// Trains one run and scores it on the test split when there is one.
pub fn run_once(cfg: &TrainConfig, corpus: &Corpus) -> Result<RunSummary> {
    let o = fit(cfg, corpus)?;
    let test_samples = corpus.split(Split::Test);
    let test = if test_samples.is_empty() {
        None
    } else {
        let data = prepare(corpus, &test_samples, &corpus.answers, cfg)?;
        Some(evaluate(&o.params, &o.model, &data)?)
    };
    Ok(RunSummary {
        seed: cfg.seed,
        best_epoch: o.best_epoch,
        epochs_run: o.log.len(),
        val_top1: o.best_val.map_or(0.0, |r| r.top1),
        test,
    })
}

/// Every setting of the suite, each trained once per seed.
pub fn run_ablation(suite: Suite, base: &TrainConfig, corpus: &Corpus, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for (setting, cfg) in suite.settings(base) {
        let mut runs = Vec::new();
        for &seed in seeds {
            let c = TrainConfig { seed, ..cfg.clone() };
            log::info!("ablation {setting}: seed {seed}");
            runs.push(run_once(&c, corpus)?);
        }
        let n = runs.len() as f64;
        let mean_val_top1 = runs.iter().map(|r| r.val_top1).sum::<f64>() / n;
        let tests: Option<Vec<f64>> = runs.iter().map(|r| r.test.as_ref().map(|t| t.top1)).collect();
        rows.push(AblationRow {
            setting,
            mean_test_top1: tests.map(|t| t.iter().sum::<f64>() / n),
            runs,
            mean_val_top1,
        });
    }
    Ok(AblationTable { suite, rows })
}
