use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn danli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_danli"))
        .args(args)
        .env("DANLI_LOG_LEVEL", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--embed-dim", "12", "--proj-dim", "6", "--hidden", "6"];

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = danli(&[
            "synth",
            "--out",
            s(dir.path()),
            "--pairs",
            "24",
            "--dev-pairs",
            "8",
            "--dim",
            "12",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, run: &str, extra: &[&str]) -> Output {
        let (train, dev, vec, out) = (
            self.path("train.jsonl"),
            self.path("dev.jsonl"),
            self.path("vectors.txt"),
            self.path(run),
        );
        let mut args = vec![
            "train",
            "--train",
            s(&train),
            "--dev",
            s(&dev),
            "--embeddings",
            s(&vec),
            "--out",
            s(&out),
            "--max-steps",
            "12",
            "--eval-every",
            "6",
            "--log-every",
            "3",
            "--checkpoint-every",
            "6",
        ];
        args.extend_from_slice(&SMALL);
        args.extend_from_slice(extra);
        danli(&args)
    }

    /// Trains once and returns the best checkpoint.
    fn checkpoint(&self) -> PathBuf {
        let out = self.train("run", &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        self.path("run").join("best.danli")
    }
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    for sub in ["train", "eval", "predict", "attend-dump", "bench", "synth"] {
        let out = danli(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
    assert_eq!(code(&danli(&["--help"])), 0);
    assert_eq!(code(&danli(&["--version"])), 0);
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(code(&danli(&[])), 1);
    assert_eq!(code(&danli(&["frobnicate"])), 1);
    assert_eq!(code(&danli(&["train", "--bogus"])), 1);
    assert_eq!(code(&danli(&["bench", "--length", "-3"])), 1);
    let out = danli(&["train"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--train"));
}

#[test]
fn missing_embeddings_exits_two_and_names_the_path() {
    let fx = Fixture::new();
    let missing = fx.path("no-such-vectors.txt");
    let (train, dev, out) = (fx.path("train.jsonl"), fx.path("dev.jsonl"), fx.path("run"));
    let mut args = vec![
        "train",
        "--train",
        s(&train),
        "--dev",
        s(&dev),
        "--embeddings",
        s(&missing),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(&SMALL);
    let res = danli(&args);
    assert_eq!(code(&res), 2);
    assert!(
        stderr(&res).contains("no-such-vectors.txt"),
        "{}",
        stderr(&res)
    );
}

#[test]
fn training_writes_checkpoints_and_log() {
    let fx = Fixture::new();
    fx.checkpoint();
    let run = fx.path("run");
    for name in [
        "best.danli",
        "step-0000000006.danli",
        "step-0000000012.danli",
        "train_log.jsonl",
    ] {
        assert!(run.join(name).exists(), "{name}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let records: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let steps: Vec<u64> = records
        .iter()
        .map(|r| r["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, [3, 6, 9, 12]);
    assert!(records[1]["dev_accuracy"].is_f64());
    assert!(records[0].get("dev_accuracy").is_none());
}

#[test]
fn deterministic_runs_write_identical_logs() {
    let fx = Fixture::new();
    for run in ["a", "b"] {
        let out = fx.train(run, &["--workers", "2", "--deterministic", "--seed", "7"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |run: &str| std::fs::read(fx.path(run).join("train_log.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    let read = |run: &str| std::fs::read(fx.path(run).join("best.danli")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn config_file_supplies_options_and_flags_win() {
    let fx = Fixture::new();
    let cfg = fx.path("cfg.json");
    let body = serde_json::json!({
        "train": fx.path("train.jsonl"),
        "dev": fx.path("dev.jsonl"),
        "embeddings": fx.path("vectors.txt"),
        "out": fx.path("from-config"),
        "max_steps": 4,
        "eval_every": 2,
        "log_every": 2,
        "embed_dim": 12,
        "proj_dim": 6,
        "hidden": 6,
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = danli(&["train", "--config", s(&cfg), "--max-steps", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = std::fs::read_to_string(fx.path("from-config").join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn config_file_with_unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"learning_rate": 0.1}"#).unwrap();
    let out = danli(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn eval_json_counts_add_up() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let dev = fx.path("dev.jsonl");
    let out = danli(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dev",
        s(&dev),
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["total"], 8);
    let classes = report["per_class"].as_array().unwrap();
    let labels: Vec<&str> = classes
        .iter()
        .map(|c| c["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["neutral", "entailment", "contradiction"]);
    let sum = |k: &str| classes.iter().map(|c| c[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(sum("total"), 8);
    assert_eq!(sum("correct"), report["correct"].as_u64().unwrap());
}

#[test]
fn eval_table_lists_classes_then_overall() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let dev = fx.path("dev.jsonl");
    let out = danli(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--test",
        s(&dev),
        "--format",
        "table",
    ]);
    assert_eq!(code(&out), 0);
    let firsts: Vec<String> = stdout(&out)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(
        firsts,
        ["class", "neutral", "entailment", "contradiction", "overall"]
    );
}

#[test]
fn eval_errors_are_data_errors() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let empty = fx.path("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(
        code(&danli(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&empty)
        ])),
        2
    );
    let junk = fx.path("junk.danli");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let dev = fx.path("dev.jsonl");
    let out = danli(&["eval", "--checkpoint", s(&junk), "--data", s(&dev)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn predict_scores_form_a_distribution() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let out = danli(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--premise",
        "w0 w1 w2",
        "--hypothesis",
        "w1 unseen",
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let p: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let scores = p["scores"].as_object().unwrap();
    let total: f64 = scores.values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let label = p["label"].as_str().unwrap();
    let best = scores
        .iter()
        .max_by(|a, b| a.1.as_f64().unwrap().total_cmp(&b.1.as_f64().unwrap()))
        .unwrap()
        .0;
    assert_eq!(label, best);
}

#[test]
fn predict_rejects_an_empty_sentence() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let out = danli(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--premise",
        "  ",
        "--hypothesis",
        "w1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn attend_dump_weights_are_normalized() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let out = danli(&[
        "attend-dump",
        "--checkpoint",
        s(&ckpt),
        "--premise",
        "w0 w1 w2",
        "--hypothesis",
        "w1 w5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let d: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(d["premise_tokens"][0], "NULL");
    assert_eq!(d["premise_tokens"].as_array().unwrap().len(), 4);
    assert_eq!(d["hypothesis_tokens"].as_array().unwrap().len(), 3);
    let matrix = |k: &str| -> Vec<Vec<f64>> { serde_json::from_value(d[k].clone()).unwrap() };
    let scores = matrix("scores");
    assert_eq!((scores.len(), scores[0].len()), (4, 3));
    for (key, rows, cols) in [
        ("premise_to_hypothesis", 4, 3),
        ("hypothesis_to_premise", 3, 4),
    ] {
        let m = matrix(key);
        assert_eq!(m.len(), rows, "{key}");
        for row in &m {
            assert_eq!(row.len(), cols, "{key}");
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{key}");
        }
    }
}

#[test]
fn bench_reports_f_applications() {
    let out = danli(&[
        "bench",
        "--premise-len",
        "30",
        "--hypothesis-len",
        "20",
        "--dim",
        "16",
        "--workers",
        "1,2",
        "--repeats",
        "2",
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(r["f_applications"], 50);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert!(row["max_logit_diff"].as_f64().unwrap() <= 1e-12);
    }
}

#[test]
fn bench_rejects_zero_workers() {
    let out = danli(&["bench", "--workers", "0", "--dim", "8", "--repeats", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn intra_variant_trains_and_predicts() {
    let fx = Fixture::new();
    let out = fx.train("intra", &["--variant", "intra", "--distance-cap", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = fx.path("intra").join("best.danli");
    let out = danli(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--premise",
        "w0 w1",
        "--hypothesis",
        "w1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn predict_handles_oov_input_and_repeats_exactly() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let run = || {
        danli(&[
            "predict",
            "--checkpoint",
            s(&ckpt),
            "--premise",
            "zebra quantum",
            "--hypothesis",
            "zebra quantum",
            "--format",
            "json",
        ])
    };
    let first = run();
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(first.stdout, run().stdout);
    let p: Value = serde_json::from_str(stdout(&first).trim()).unwrap();
    let total: f64 = p["scores"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn attend_dump_keeps_tokenizer_order() {
    let fx = Fixture::new();
    let ckpt = fx.checkpoint();
    let out = danli(&[
        "attend-dump",
        "--checkpoint",
        s(&ckpt),
        "--premise",
        "A dog, running.",
        "--hypothesis",
        "x",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let d: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let tokens: Vec<String> = serde_json::from_value(d["premise_tokens"].clone()).unwrap();
    assert_eq!(tokens, ["NULL", "A", "dog", ",", "running", "."]);
    let weights: Vec<Vec<f64>> =
        serde_json::from_value(d["hypothesis_to_premise"].clone()).unwrap();
    assert_eq!(weights.len(), 2);
}

fn bench_flops(len: &str) -> u64 {
    let out = danli(&[
        "bench",
        "--length",
        len,
        "--dim",
        "64",
        "--workers",
        "1,1",
        "--repeats",
        "1",
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    for row in r["rows"].as_array().unwrap() {
        assert_eq!(row["max_logit_diff"].as_f64().unwrap(), 0.0);
    }
    r["flops"].as_u64().unwrap()
}

#[test]
fn bench_flops_roughly_double_with_length() {
    let ratio = bench_flops("16") as f64 / bench_flops("8") as f64;
    assert!((1.8..2.4).contains(&ratio), "ratio {ratio}");
}
