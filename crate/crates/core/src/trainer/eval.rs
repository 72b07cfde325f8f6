use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{make_batches, Example, Label};
use crate::embeddings::EmbeddingTable;
use crate::model::{argmax, forward, Mode, ModelConfig, ModelParams};
use crate::numerics::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: Label,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Neutral, entailment, contradiction.
    pub per_class: Vec<ClassAccuracy>,
}

/// Display order of the per-class breakdown.
pub const REPORT_ORDER: [Label; 3] = [Label::Neutral, Label::Entailment, Label::Contradiction];

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

impl EvalReport {
    /// Builds the report from `(gold, predicted)` pairs.
    pub fn from_predictions(pairs: &[(Label, Label)]) -> Self {
        let mut per_class = [(0usize, 0usize); 3];
        for &(gold, pred) in pairs {
            per_class[gold.index()].0 += 1;
            if gold == pred {
                per_class[gold.index()].1 += 1;
            }
        }
        let correct = per_class.iter().map(|c| c.1).sum();
        Self {
            total: pairs.len(),
            correct,
            accuracy: ratio(correct, pairs.len()),
            per_class: REPORT_ORDER
                .iter()
                .map(|&label| {
                    let (total, correct) = per_class[label.index()];
                    ClassAccuracy {
                        label,
                        total,
                        correct,
                        accuracy: ratio(correct, total),
                    }
                })
                .collect(),
        }
    }
}

/// Eval-mode predictions for `examples`, in order. Pairs are batched by
/// position without any reordering; `exec` spreads pairs over workers.
pub fn predict_all(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    examples: &[Example],
    batch_size: usize,
    exec: &Exec,
) -> Result<Vec<Label>, TrainError> {
    let batches = make_batches(examples, batch_size.max(1));
    let jobs: Vec<(usize, usize)> = batches
        .iter()
        .enumerate()
        .flat_map(|(b, batch)| (0..batch.len()).map(move |i| (b, i)))
        .collect();
    let seq = Exec::sequential();
    exec.map(&jobs, |&(b, i)| {
        let trace = forward(
            params,
            config,
            embeddings,
            &batches[b].pair(i),
            Mode::Eval,
            &seq,
        )?;
        let k = argmax(trace.logits().as_slice());
        Ok(Label::from_index(k).expect("three classes"))
    })
    .into_iter()
    .collect()
}

/// Overall and per-class accuracy with dropout off.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    examples: &[Example],
    exec: &Exec,
) -> Result<EvalReport, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation set".into()));
    }
    if config.classes != 3 {
        return Err(TrainError::Config(
            "evaluation needs exactly three classes".into(),
        ));
    }
    let predicted = predict_all(params, config, embeddings, examples, 32, exec)?;
    let pairs: Vec<(Label, Label)> = examples.iter().map(|e| e.label).zip(predicted).collect();
    Ok(EvalReport::from_predictions(&pairs))
}
