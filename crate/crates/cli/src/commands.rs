use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::Arc;

use danli::bench::{random_model, run_bench, BenchReport, BenchSpec};
use danli::data::{encode_tokens, load_corpus, tokenize_raw, Label, PairInput};
use danli::embeddings::{load_pretrained, EmbeddingOptions, NULL_TOKEN};
use danli::model::{forward, predict, Mode, ModelConfig};
use danli::numerics::{Exec, Mask, Matrix};
use danli::synthetic::{generate, SyntheticSpec};
use danli::trainer::{
    evaluate, load_checkpoint, train, Checkpoint, EvalReport, LogRecord, TrainInputs,
};
use serde::Serialize;

use crate::args::{required, BenchArgs, EvalArgs, Format, PairArgs, SynthArgs, TrainArgs, Variant};
use crate::error::CliError;

pub const LOG_FILE: &str = "train_log.jsonl";

pub fn train_cmd(args: TrainArgs) -> Result<(), CliError> {
    let args = args.resolve()?;
    let train_path = required(&args.train, "--train")?;
    let dev_path = required(&args.dev, "--dev")?;
    let emb_path = required(&args.embeddings, "--embeddings")?;
    let out_dir = required(&args.out, "--out")?;
    let model = args.model_config()?;
    let cfg = args.train_config(&model)?;

    let train_corpus = load_corpus(train_path)?;
    let dev_corpus = load_corpus(dev_path)?;
    log::info!(
        "train: {} pairs kept, {} skipped; dev: {} kept, {} skipped",
        train_corpus.stats.kept,
        train_corpus.stats.skipped,
        dev_corpus.stats.kept,
        dev_corpus.stats.skipped
    );
    if train_corpus.pairs.is_empty() {
        return Err(CliError::data(format!(
            "{}: no usable pairs",
            train_path.display()
        )));
    }
    if dev_corpus.pairs.is_empty() {
        return Err(CliError::data(format!(
            "{}: no usable pairs",
            dev_path.display()
        )));
    }
    let mut tokens = train_corpus.token_set();
    tokens.extend(dev_corpus.token_set());
    let opts = EmbeddingOptions {
        dim: model.embed_dim,
        lowercase: args.lowercase,
        ..Default::default()
    };
    let (embeddings, vocab) = load_pretrained(emb_path, &tokens, &opts)?;
    log::info!("vocabulary: {} pretrained tokens", vocab.len());
    let train_set = train_corpus.encode(&vocab);
    let dev_set = dev_corpus.encode(&vocab);

    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path)?);
    let mut write_err: Option<std::io::Error> = None;
    let mut on_log = |rec: &LogRecord| {
        match rec.dev_accuracy {
            Some(acc) => log::info!(
                "step {} loss {:.4} dev {:.4}",
                rec.step,
                rec.train_loss,
                acc
            ),
            None => log::info!("step {} loss {:.4}", rec.step, rec.train_loss),
        }
        if write_err.is_none() {
            let line = serde_json::to_string(rec).expect("log record serializes");
            if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
                write_err = Some(e);
            }
        }
    };
    let inputs = TrainInputs {
        train: &train_set,
        dev: &dev_set,
        vocab: Arc::new(vocab),
        embeddings: Arc::new(embeddings),
    };
    let outcome = train(&cfg, &model, &inputs, &mut on_log)?;
    if let Some(e) = write_err {
        return Err(CliError::data(format!("{}: {e}", log_path.display())));
    }
    println!(
        "trained {} steps; best dev accuracy {} at step {}; checkpoint {}",
        outcome.steps,
        outcome
            .best
            .dev_accuracy
            .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
        outcome.best.step,
        out_dir.join("best.danli").display()
    );
    Ok(())
}

pub fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    if args.workers == 0 {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let corpus = load_corpus(&args.data)?;
    if corpus.pairs.is_empty() {
        return Err(CliError::data(format!(
            "{}: no usable pairs",
            args.data.display()
        )));
    }
    let examples = corpus.encode(&ckpt.vocab);
    let exec = executor(args.workers);
    let report = evaluate(
        &ckpt.params,
        &ckpt.config,
        &ckpt.embeddings,
        &examples,
        &exec,
    )?;
    if matches!(args.format, Format::Table | Format::Both) {
        print_eval_table(&report, corpus.stats.skipped);
    }
    if matches!(args.format, Format::Json | Format::Both) {
        println!(
            "{}",
            serde_json::to_string(&report).expect("report serializes")
        );
    }
    Ok(())
}

fn print_eval_table(report: &EvalReport, skipped: usize) {
    println!(
        "{:<14} {:>7} {:>7} {:>8}",
        "class", "total", "correct", "accuracy"
    );
    for c in &report.per_class {
        println!(
            "{:<14} {:>7} {:>7} {:>8.4}",
            c.label.name(),
            c.total,
            c.correct,
            c.accuracy
        );
    }
    println!(
        "{:<14} {:>7} {:>7} {:>8.4}",
        "overall", report.total, report.correct, report.accuracy
    );
    if skipped > 0 {
        println!("({skipped} lines without a gold label skipped)");
    }
}

struct EncodedPair {
    premise_tokens: Vec<String>,
    hypothesis_tokens: Vec<String>,
    premise: Vec<u32>,
    hypothesis: Vec<u32>,
}

impl EncodedPair {
    fn new(ckpt: &Checkpoint, premise: &str, hypothesis: &str) -> Result<Self, CliError> {
        let p = tokenize_raw(premise);
        let h = tokenize_raw(hypothesis);
        if p.is_empty() || h.is_empty() {
            return Err(CliError::data(
                "premise and hypothesis must both contain a token",
            ));
        }
        let with_null = |t: &[String]| -> Vec<String> {
            std::iter::once(NULL_TOKEN.to_string())
                .chain(t.iter().cloned())
                .collect()
        };
        Ok(Self {
            premise: encode_tokens(&p, &ckpt.vocab),
            hypothesis: encode_tokens(&h, &ckpt.vocab),
            premise_tokens: with_null(&p),
            hypothesis_tokens: with_null(&h),
        })
    }

    fn input(&self) -> Result<PairInput<'_>, CliError> {
        Ok(PairInput {
            premise: &self.premise,
            premise_mask: Mask::full(self.premise.len())?,
            hypothesis: &self.hypothesis,
            hypothesis_mask: Mask::full(self.hypothesis.len())?,
        })
    }
}

#[derive(Serialize)]
struct Prediction {
    label: Label,
    scores: Scores,
}

#[derive(Serialize)]
struct Scores {
    entailment: f64,
    contradiction: f64,
    neutral: f64,
}

pub fn predict_cmd(args: PairArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let pair = EncodedPair::new(&ckpt, &args.premise, &args.hypothesis)?;
    let (label, probs) = predict(&ckpt.params, &ckpt.config, &ckpt.embeddings, &pair.input()?)?;
    let p = |l: Label| probs[l.index()];
    let out = Prediction {
        label,
        scores: Scores {
            entailment: p(Label::Entailment),
            contradiction: p(Label::Contradiction),
            neutral: p(Label::Neutral),
        },
    };
    if matches!(args.format, Format::Table | Format::Both) {
        println!("{}", label.name());
        for l in Label::ALL {
            println!("  {:<14} {:.6}", l.name(), p(l));
        }
    }
    if matches!(args.format, Format::Json | Format::Both) {
        println!(
            "{}",
            serde_json::to_string(&out).expect("prediction serializes")
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AttendDump {
    premise_tokens: Vec<String>,
    hypothesis_tokens: Vec<String>,
    /// Raw scores, premise rows by hypothesis columns.
    scores: Vec<Vec<f64>>,
    /// Row-normalized: each premise token's weights over the hypothesis.
    premise_to_hypothesis: Vec<Vec<f64>>,
    /// Column-normalized, transposed: each hypothesis token's weights over
    /// the premise.
    hypothesis_to_premise: Vec<Vec<f64>>,
    label: Label,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub fn attend_dump_cmd(args: PairArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let pair = EncodedPair::new(&ckpt, &args.premise, &args.hypothesis)?;
    let trace = forward(
        &ckpt.params,
        &ckpt.config,
        &ckpt.embeddings,
        &pair.input()?,
        Mode::Eval,
        &Exec::sequential(),
    )?;
    let logits = trace.logits().as_slice();
    let label = Label::from_index(danli::model::argmax(logits)).expect("three classes");
    let dump = AttendDump {
        premise_tokens: pair.premise_tokens,
        hypothesis_tokens: pair.hypothesis_tokens,
        scores: rows(&trace.attend.scores),
        premise_to_hypothesis: rows(&trace.attend.premise_weights),
        hypothesis_to_premise: rows(&trace.attend.hypothesis_weights),
        label,
    };
    let text = serde_json::to_string_pretty(&dump).expect("dump serializes");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn bench_cmd(args: BenchArgs) -> Result<(), CliError> {
    let spec = BenchSpec {
        premise_len: args.premise_len.unwrap_or(args.length),
        hypothesis_len: args.hypothesis_len.unwrap_or(args.length),
        workers: args.workers.clone(),
        repeats: args.repeats,
        seed: args.seed,
    };
    let report = match &args.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            run_bench(&ckpt.params, &ckpt.config, &ckpt.embeddings, &spec)?
        }
        None => {
            if args.dim == 0 {
                return Err(CliError::usage("--dim must be at least 1"));
            }
            let base = match args.variant {
                Variant::Vanilla => ModelConfig::vanilla(),
                Variant::Intra => ModelConfig::intra(),
            };
            let config = ModelConfig {
                proj_dim: args.dim,
                hidden: args.dim,
                ..base
            };
            let (params, embeddings) = random_model(&config, 1000, args.seed)?;
            run_bench(&params, &config, &embeddings, &spec)?
        }
    };
    if matches!(args.format, Format::Table | Format::Both) {
        print_bench_table(&report);
    }
    if matches!(args.format, Format::Json | Format::Both) {
        println!(
            "{}",
            serde_json::to_string(&report).expect("report serializes")
        );
    }
    Ok(())
}

fn print_bench_table(r: &BenchReport) {
    println!(
        "lengths {}+{}, dim {}/{}, intra {}: {} F applications, {} flops per pass; {} cores",
        r.premise_len,
        r.hypothesis_len,
        r.proj_dim,
        r.hidden,
        r.use_intra,
        r.f_applications,
        r.flops,
        r.available_cores
    );
    println!(
        "{:>7} {:>10} {:>11} {:>8} {:>10}",
        "workers", "wall s", "pairs/s", "speedup", "max diff"
    );
    for row in &r.rows {
        println!(
            "{:>7} {:>10.4} {:>11.1} {:>8.2} {:>10.1e}",
            row.workers, row.wall_seconds, row.pairs_per_second, row.speedup, row.max_logit_diff
        );
    }
}

pub fn synth_cmd(args: SynthArgs) -> Result<(), CliError> {
    if args.pairs == 0 || args.dev_pairs == 0 || args.dim == 0 {
        return Err(CliError::usage(
            "--pairs, --dev-pairs and --dim must be at least 1",
        ));
    }
    std::fs::create_dir_all(&args.out)?;
    let spec = SyntheticSpec {
        pairs: args.pairs,
        dim: args.dim,
        seed: args.seed,
        ..Default::default()
    };
    let train = generate(&spec);
    let dev = generate(&SyntheticSpec {
        pairs: args.dev_pairs,
        seed: args.seed.wrapping_add(1),
        ..spec
    });
    train.write_corpus(&args.out.join("train.jsonl"))?;
    dev.write_corpus(&args.out.join("dev.jsonl"))?;
    train.write_embeddings(&args.out.join("vectors.txt"))?;
    println!(
        "wrote {} training and {} dev pairs with {}-dimensional vectors to {}",
        args.pairs,
        args.dev_pairs,
        args.dim,
        args.out.display()
    );
    Ok(())
}

fn executor(workers: usize) -> Exec {
    if workers == 1 {
        Exec::sequential()
    } else {
        Exec::with_workers(workers)
    }
}
