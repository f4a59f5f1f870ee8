use std::path::Path;
use std::process::Command;

const TINY: &[&str] = &[
    "--lstm_hidden", "6", "--lstm_layers", "1", "--memory_dim", "6", "--width", "8", "--heads", "2",
    "--head_hidden", "8", "--batch_size", "8", "--epochs", "1", "--lr", "0.003",
];

fn dmmgr(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_dmmgr")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "dmmgr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data_args(dir: &Path) -> Vec<String> {
    let p = |f: &str| dir.join(f).display().to_string();
    vec![
        "--dataset".into(),
        p("dataset.jsonl"),
        "--kb".into(),
        p("kb.tsv"),
        "--embeddings".into(),
        p("embeddings.txt"),
    ]
}

#[test]
fn every_subcommand_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let data_s = data.display().to_string();
    let printed = dmmgr(&["gen-data", "--out", &data_s, "--samples", "60", "--world.two_step_fraction", "0.5"]);
    assert!(printed.contains("60 samples"));
    for f in ["dataset.jsonl", "kb.tsv", "embeddings.txt", "world.cfg"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let owned = data_args(&data);
    let d: Vec<&str> = owned.iter().map(String::as_str).collect();

    let mut args = vec!["retrieve", "--split", "val", "--limit", "3"];
    args.extend(&d);
    let lines: Vec<serde_json::Value> = dmmgr(&args).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0]["facts"].as_array().unwrap().len() <= 5);

    let mut args = vec!["build-graph", "--split", "train", "--limit", "2"];
    args.extend(&d);
    let g: serde_json::Value = serde_json::from_str(dmmgr(&args).lines().next().unwrap()).unwrap();
    assert!(g["edges"].as_array().is_some());

    let ckpt = tmp.path().join("ckpt").display().to_string();
    let mut args = vec!["train", "--output", &ckpt, "--seed", "3"];
    args.extend(TINY);
    args.extend(&d);
    assert!(dmmgr(&args).contains("best epoch"));

    let report: serde_json::Value = serde_json::from_str(&dmmgr(&["eval", "--checkpoint", &ckpt, "--split", "val"])).unwrap();
    assert!(report["top1"].as_f64().unwrap() <= report["top3"].as_f64().unwrap());

    let dump = dmmgr(&["attn-dump", "--checkpoint", &ckpt, "--split", "val", "--limit", "1"]);
    let dump: serde_json::Value = serde_json::from_str(dump.trim()).unwrap();
    assert_eq!(dump["steps"].as_array().unwrap().len(), 2);

    let out = tmp.path().join("abl").display().to_string();
    let mut args = vec!["ablate", "--suite", "memory", "--seeds", "0", "--output", &out];
    args.extend(TINY);
    args.extend(&d);
    let table = dmmgr(&args);
    assert!(table.contains("standard-kv") && table.contains("average-embedding"));
    assert!(tmp.path().join("abl/ablation-memory.json").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_dmmgr"))
        .args(["train", "--no_such_key", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_dmmgr"))
        .args(["eval", "--checkpoint", "/nonexistent/ckpt"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Error"));
}
