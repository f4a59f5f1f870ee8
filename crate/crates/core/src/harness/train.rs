use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{evaluate, lr_at, mix, par_map, Adam, Corpus, EvalReport, Prepared, TrainConfig};
use crate::data::{AnswerVocab, Split};
use crate::error::{Error, Result};
use crate::reasoner::{init_params, loss, run, ModelConfig};
use crate::tensor::{load_checkpoint, save_checkpoint, Gradients, Graph, Mode, ParamStore, Scalar};

/// Per-sample gradients are summed in fixed-size chunks, then the chunk
/// sums are combined in order, so the result does not depend on threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_top3: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation top-1.
    pub params: ParamStore<T>,
    pub model: ModelConfig,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: Option<EvalReport>,
}

fn batch_gradients<T: Scalar>(
    params: &ParamStore<T>,
    model: &ModelConfig,
    data: &[Prepared],
    batch: &[usize],
    seed: u64,
) -> Result<(f64, Gradients<T>)> {
    let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
    let parts = par_map(&chunks, |chunk| {
        let mut acc = Gradients::zeros_like(params);
        let mut total = 0.0;
        for &i in chunk.iter() {
            let p = &data[i];
            let answer = p.answer.expect("training samples have in-vocabulary answers");
            let mut g = Graph::new(params, Mode::Train)
                .with_seed(mix(&[seed, i as u64]))
                .with_finite_checks(false);
            let out = run(&mut g, model, p.inputs())?;
            let l = loss(&mut g, out.logits, answer)?;
            total += g.value(l).data()[0].as_f64();
            acc.accumulate(&g.backward(l)?);
        }
        Ok((total, acc))
    })?;
    let mut grads = Gradients::zeros_like(params);
    let mut total = 0.0;
    for (l, gr) in parts {
        total += l;
        grads.accumulate(&gr);
    }
    grads.scale(T::of(1.0 / batch.len() as f64));
    Ok((total / batch.len() as f64, grads))
}

/// Mini-batch Adam on `train`, keeping the parameters with the best
/// validation top-1 (the last epoch's when `val` is empty).
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    model: &ModelConfig,
    train: &[Prepared],
    val: &[Prepared],
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model.validate()?;
    let usable: Vec<usize> = (0..train.len()).filter(|&i| train[i].answer.is_some()).collect();
    if usable.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    log::info!(
        "training: seed {} | {} samples | {} val | {} answers | T = {}",
        cfg.seed,
        usable.len(),
        val.len(),
        model.answers,
        model.steps
    );
    let mut params = init_params::<T>(model, cfg.seed)?;
    let mut opt = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, 1]));
    let mut order = usable;
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<T>, Option<EvalReport>)> = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seed = mix(&[cfg.seed, epoch as u64, b as u64]);
            let (l, grads) = batch_gradients(&params, model, train, batch, seed)?;
            if !l.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: l });
            }
            opt.step(&mut params, &grads, lr);
            sum += l * batch.len() as f64;
        }
        let train_loss = sum / order.len() as f64;
        let report = if val.is_empty() {
            None
        } else {
            Some(evaluate(&params, model, val)?)
        };
        let (val_top1, val_top3) = report.as_ref().map_or((0.0, 0.0), |r| (r.top1, r.top3));
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            val_top1,
            val_top3,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", serde_json::to_string(&entry)?);
        log.push(entry);
        let better = match &best {
            None => true,
            Some((b, ..)) => val.is_empty() || val_top1 > *b,
        };
        if better {
            best = Some((val_top1, epoch, params.clone(), report));
        }
        if cfg.target_accuracy > 0.0 && !val.is_empty() && val_top1 >= cfg.target_accuracy {
            log::info!("validation top-1 {val_top1:.4} reached target at epoch {epoch}");
            break;
        }
    }
    let (_, best_epoch, params, best_val) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        model: model.clone(),
        log,
        best_epoch,
        best_val,
    })
}

/// Prepares the corpus splits and trains at the configured precision,
/// returning the outcome with parameters held as `f64`.
pub fn fit(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome<f64>> {
    let answers = &corpus.answers;
    let tr = super::prepare(corpus, &corpus.split(Split::Train), answers, cfg)?;
    let va = super::prepare(corpus, &corpus.split(Split::Val), answers, cfg)?;
    let model = cfg.model(corpus.table.dim(), answers.len());
    match cfg.precision {
        crate::tensor::DType::F64 => train::<f64>(cfg, &model, &tr, &va),
        crate::tensor::DType::F32 => {
            let o = train::<f32>(cfg, &model, &tr, &va)?;
            Ok(TrainOutcome {
                params: o.params.cast(),
                model: o.model,
                log: o.log,
                best_epoch: o.best_epoch,
                best_val: o.best_val,
            })
        }
    }
}

/// Writes the checkpoint (with model, answers and config as metadata) and
/// `log.jsonl`.
pub fn save_outcome<T: Scalar>(
    dir: &Path,
    outcome: &TrainOutcome<T>,
    answers: &AnswerVocab,
    cfg: &TrainConfig,
) -> Result<()> {
    let meta = json!({
        "model": outcome.model,
        "answers": answers,
        "config": cfg.to_text(),
        "best_epoch": outcome.best_epoch,
        "best_val": outcome.best_val,
    });
    match cfg.precision {
        crate::tensor::DType::F32 => save_checkpoint(dir, &outcome.params.cast::<f32>(), &meta)?,
        crate::tensor::DType::F64 => save_checkpoint(dir, &outcome.params.cast::<f64>(), &meta)?,
    }
    let mut lines = String::new();
    for e in &outcome.log {
        lines.push_str(&serde_json::to_string(e)?);
        lines.push('\n');
    }
    let path = dir.join("log.jsonl");
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub params: ParamStore<f64>,
    pub model: ModelConfig,
    pub answers: AnswerVocab,
    pub config: TrainConfig,
}

pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let ck = load_checkpoint::<f64>(dir)?;
    let field = |k: &str| {
        ck.metadata
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("metadata is missing `{k}`")))
    };
    let model: ModelConfig = serde_json::from_value(field("model")?)?;
    let answers: AnswerVocab = serde_json::from_value(field("answers")?)?;
    let config = TrainConfig::parse(field("config")?.as_str().unwrap_or(""))?;
    if answers.len() != model.answers {
        return Err(Error::Checkpoint(format!(
            "{} answers in metadata, model expects {}",
            answers.len(),
            model.answers
        )));
    }
    Ok(LoadedModel {
        params: ck.params,
        model,
        answers,
        config,
    })
}

/// The checkpoint must match the dataset's embedding width and, when the
/// dataset has a training split, its answer vocabulary.
pub fn check_vocabulary(m: &LoadedModel, corpus: &Corpus) -> Result<()> {
    if m.model.word_dim != corpus.table.dim() {
        return Err(Error::VocabularyMismatch(format!(
            "checkpoint word width {}, embeddings have {}",
            m.model.word_dim,
            corpus.table.dim()
        )));
    }
    if !corpus.answers.is_empty() && corpus.answers.answers() != m.answers.answers() {
        return Err(Error::VocabularyMismatch(format!(
            "checkpoint has {} answers, dataset training split has {} (or a different order)",
            m.answers.len(),
            corpus.answers.len()
        )));
    }
    Ok(())
}
