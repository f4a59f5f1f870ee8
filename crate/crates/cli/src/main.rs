use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use dmmgr::data::{save_dataset, save_triples, Split};
use dmmgr::harness::{
    attention_dump, check_vocabulary, evaluate, fit, load_model, prepare, prepare_one, run_ablation, save_outcome,
    Corpus, Suite, TrainConfig,
};

fn config_args(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("`key = value` configuration file; flags override it"),
    );
    for key in TrainConfig::keys() {
        let id: &'static str = Box::leak(key.into_boxed_str());
        cmd = cmd.arg(Arg::new(id).long(id).value_name("VALUE").hide_short_help(true));
    }
    cmd
}

/// Defaults, then `base` (e.g. a checkpoint's config), then the file, then flags.
fn resolve_config(m: &ArgMatches, base: Option<TrainConfig>) -> Result<TrainConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        cfg.apply_text(&text).with_context(|| format!("in {path}"))?;
    }
    for key in TrainConfig::keys() {
        if let Some(v) = m.get_one::<String>(key.as_str()) {
            cfg.set(&key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_arg() -> Arg {
    Arg::new("split")
        .long("split")
        .default_value("test")
        .help("train, val or test")
}

fn limit_arg() -> Arg {
    Arg::new("limit")
        .long("limit")
        .value_parser(clap::value_parser!(usize))
        .help("Process at most this many samples")
}

fn checkpoint_arg() -> Arg {
    Arg::new("checkpoint")
        .long("checkpoint")
        .required(true)
        .value_name("DIR")
}

fn cli() -> Command {
    Command::new("dmmgr")
        .about("Knowledge-memory and spatial-graph reasoning for knowledge-based VQA")
        .subcommand_required(true)
        .subcommand(
            config_args(Command::new("gen-data").about("Write a synthetic dataset, KB and embeddings"))
                .arg(Arg::new("out").long("out").required(true).value_name("DIR")),
        )
        .subcommand(
            config_args(Command::new("retrieve").about("Print the top-K retrieved facts per sample"))
                .arg(split_arg())
                .arg(limit_arg()),
        )
        .subcommand(
            config_args(Command::new("build-graph").about("Print the spatial graph per sample"))
                .arg(split_arg())
                .arg(limit_arg()),
        )
        .subcommand(config_args(Command::new("train").about("Train and write a checkpoint to `--output`")))
        .subcommand(
            config_args(Command::new("eval").about("Top-1/top-3 accuracy of a checkpoint"))
                .arg(checkpoint_arg())
                .arg(split_arg())
                .arg(limit_arg()),
        )
        .subcommand(
            config_args(Command::new("attn-dump").about("Per-step attention weights as JSON lines"))
                .arg(checkpoint_arg())
                .arg(split_arg())
                .arg(limit_arg()),
        )
        .subcommand(
            config_args(Command::new("ablate").about("Train every setting of an ablation suite"))
                .arg(
                    Arg::new("suite")
                        .long("suite")
                        .required(true)
                        .help("steps, memory or knowledge"),
                )
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .default_value("0,1,2")
                        .help("Comma-separated training seeds"),
                ),
        )
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true),
        )
}

fn selected<'a>(corpus: &'a Corpus, m: &ArgMatches) -> Result<Vec<&'a dmmgr::data::Sample>> {
    let split: Split = m.get_one::<String>("split").expect("defaulted").parse()?;
    let mut s = corpus.split(split);
    if let Some(&n) = m.get_one::<usize>("limit") {
        s.truncate(n);
    }
    Ok(s)
}

fn gen_data(cfg: &TrainConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let d = cfg.world.generate(cfg.samples)?;
    save_dataset(&out.join("dataset.jsonl"), &d.samples)?;
    save_triples(&out.join("kb.tsv"), &d.triples)?;
    fs::write(out.join("embeddings.txt"), d.embeddings.to_text())?;
    let mut world = String::new();
    for line in cfg.to_text().lines().filter(|l| l.starts_with("world.") || l.starts_with("samples")) {
        world.push_str(line);
        world.push('\n');
    }
    fs::write(out.join("world.cfg"), world)?;
    println!(
        "{} samples, {} facts, {} tokens -> {}",
        d.samples.len(),
        d.triples.len(),
        d.embeddings.len(),
        out.display()
    );
    Ok(())
}

fn retrieve(cfg: &TrainConfig, m: &ArgMatches) -> Result<()> {
    let corpus = Corpus::resolve(cfg)?;
    for s in selected(&corpus, m)? {
        let p = prepare_one(&corpus, s, &corpus.answers, cfg)?;
        let line = serde_json::json!({"id": p.id, "question": s.question, "facts": p.retrieved});
        println!("{line}");
    }
    Ok(())
}

fn build_graph(cfg: &TrainConfig, m: &ArgMatches) -> Result<()> {
    let corpus = Corpus::resolve(cfg)?;
    for s in selected(&corpus, m)? {
        let p = prepare_one(&corpus, s, &corpus.answers, cfg)?;
        let g = &p.graph;
        let edges: Vec<_> = g
            .edges
            .iter()
            .map(|e| serde_json::json!({"source": e.source, "target": e.target, "r": e.r}))
            .collect();
        let line = serde_json::json!({"id": p.id, "objects": g.labels, "boxes": g.bboxes, "edges": edges});
        println!("{line}");
    }
    Ok(())
}

fn train(cfg: &TrainConfig) -> Result<()> {
    log::info!("seed {}", cfg.seed);
    let corpus = Corpus::resolve(cfg)?;
    let outcome = fit(cfg, &corpus)?;
    let dir = PathBuf::from(&cfg.output);
    save_outcome(&dir, &outcome, &corpus.answers, cfg)?;
    let val = outcome.best_val.as_ref().map_or(0.0, |r| r.top1);
    println!(
        "best epoch {} | val top-1 {val:.4} | {} epochs | checkpoint {}",
        outcome.best_epoch,
        outcome.log.len(),
        dir.display()
    );
    Ok(())
}

fn eval(m: &ArgMatches) -> Result<()> {
    let dir = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
    let model = load_model(&dir)?;
    let cfg = resolve_config(m, Some(model.config.clone()))?;
    let corpus = Corpus::resolve(&cfg)?;
    check_vocabulary(&model, &corpus)?;
    let data = prepare(&corpus, &selected(&corpus, m)?, &model.answers, &cfg)?;
    let report = evaluate(&model.params, &model.model, &data)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn attn_dump(m: &ArgMatches) -> Result<()> {
    let dir = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
    let model = load_model(&dir)?;
    let cfg = resolve_config(m, Some(model.config.clone()))?;
    let corpus = Corpus::resolve(&cfg)?;
    check_vocabulary(&model, &corpus)?;
    for s in selected(&corpus, m)? {
        let p = prepare_one(&corpus, s, &model.answers, &cfg)?;
        let d = attention_dump(&model.params, &model.model, &model.answers, &p)?;
        println!("{}", serde_json::to_string(&d)?);
    }
    Ok(())
}

fn ablate(cfg: &TrainConfig, m: &ArgMatches) -> Result<()> {
    let suite: Suite = m.get_one::<String>("suite").expect("required").parse()?;
    let seeds = m
        .get_one::<String>("seeds")
        .expect("defaulted")
        .split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    log::info!("seeds {seeds:?}");
    let corpus = Corpus::resolve(cfg)?;
    let table = run_ablation(suite, cfg, &corpus, &seeds)?;
    print!("{}", table.to_text());
    let dir = PathBuf::from(&cfg.output);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("ablation-{}.json", m.get_one::<String>("suite").expect("required")));
    fs::write(&path, serde_json::to_string_pretty(&table)?)?;
    println!("table written to {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let matches = cli().get_matches();
    let level = match matches.get_count("verbose") {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (name, m) = matches.subcommand().expect("subcommand required");
    match name {
        "gen-data" => {
            let cfg = resolve_config(m, None)?;
            gen_data(&cfg, Path::new(m.get_one::<String>("out").expect("required")))
        }
        "retrieve" => retrieve(&resolve_config(m, None)?, m),
        "build-graph" => build_graph(&resolve_config(m, None)?, m),
        "train" => train(&resolve_config(m, None)?),
        "eval" => eval(m),
        "attn-dump" => attn_dump(m),
        "ablate" => ablate(&resolve_config(m, None)?, m),
        other => bail!("unknown subcommand `{other}`"),
    }
}
