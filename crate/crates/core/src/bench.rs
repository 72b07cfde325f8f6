//! Forward-pass throughput at several worker counts.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::PairInput;
use crate::embeddings::EmbeddingTable;
use crate::model::{forward, ForwardTrace, Mode, ModelConfig, ModelError, ModelParams};
use crate::numerics::{mix_seed, Exec, Mask, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub premise_len: usize,
    pub hypothesis_len: usize,
    /// Worker counts to time; 1 runs the sequential kernels.
    pub workers: Vec<usize>,
    /// Forward passes per worker count.
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub workers: usize,
    pub wall_seconds: f64,
    pub pairs_per_second: f64,
    /// Throughput relative to the first row.
    pub speedup: f64,
    /// Largest |logit| difference from the sequential run.
    pub max_logit_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub premise_len: usize,
    pub hypothesis_len: usize,
    pub proj_dim: usize,
    pub hidden: usize,
    pub use_intra: bool,
    pub f_applications: usize,
    pub flops: u64,
    /// Hardware threads reported by the OS.
    pub available_cores: usize,
    pub rows: Vec<BenchRow>,
}

/// Random parameters for `config` and a random embedding table with
/// `vocab_rows` rows, both seeded.
pub fn random_model(
    config: &ModelConfig,
    vocab_rows: usize,
    seed: u64,
) -> Result<(ModelParams, EmbeddingTable), ModelError> {
    let params = ModelParams::init(config, mix_seed(seed, 1))?;
    let embeddings = EmbeddingTable::random(vocab_rows, config.embed_dim, mix_seed(seed, 2));
    Ok((params, embeddings))
}

fn run_once(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    premise: &[u32],
    hypothesis: &[u32],
    exec: &Exec,
) -> Result<ForwardTrace, ModelError> {
    let input = PairInput {
        premise,
        premise_mask: Mask::full(premise.len())?,
        hypothesis,
        hypothesis_mask: Mask::full(hypothesis.len())?,
    };
    forward(params, config, embeddings, &input, Mode::Eval, exec)
}

/// Times eval-mode forward passes over one random pair of the requested
/// lengths (NULL included) at each worker count.
pub fn run_bench(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    spec: &BenchSpec,
) -> Result<BenchReport, ModelError> {
    if spec.premise_len == 0 || spec.hypothesis_len == 0 {
        return Err(ModelError::Config(
            "sentence lengths must be at least 1".into(),
        ));
    }
    if spec.workers.is_empty() || spec.workers.contains(&0) {
        return Err(ModelError::Config(
            "worker counts must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = embeddings.rows() as u32;
    let mut sentence = |len: usize| -> Vec<u32> {
        std::iter::once(0)
            .chain((1..len).map(|_| rng.random_range(0..rows)))
            .collect()
    };
    let premise = sentence(spec.premise_len);
    let hypothesis = sentence(spec.hypothesis_len);

    let reference = run_once(
        params,
        config,
        embeddings,
        &premise,
        &hypothesis,
        &Exec::sequential(),
    )?;
    let mut out = Vec::with_capacity(spec.workers.len());
    for &w in &spec.workers {
        let exec = if w == 1 {
            Exec::sequential()
        } else {
            Exec::with_workers(w)
        };
        // warm-up, also the output used for the equivalence check
        let trace = run_once(params, config, embeddings, &premise, &hypothesis, &exec)?;
        let diff = max_diff(trace.logits(), reference.logits());
        let start = Instant::now();
        for _ in 0..spec.repeats.max(1) {
            run_once(params, config, embeddings, &premise, &hypothesis, &exec)?;
        }
        let wall = start.elapsed().as_secs_f64();
        out.push(BenchRow {
            workers: w,
            wall_seconds: wall,
            pairs_per_second: spec.repeats.max(1) as f64 / wall,
            speedup: 1.0,
            max_logit_diff: diff,
        });
    }
    let base = out[0].pairs_per_second;
    for r in &mut out {
        r.speedup = r.pairs_per_second / base;
    }
    Ok(BenchReport {
        premise_len: spec.premise_len,
        hypothesis_len: spec.hypothesis_len,
        proj_dim: config.proj_dim,
        hidden: config.hidden,
        use_intra: config.use_intra,
        f_applications: reference.stats.f_applications,
        flops: reference.stats.flops,
        available_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        rows: out,
    })
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}
