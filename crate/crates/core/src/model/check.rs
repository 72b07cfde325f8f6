//! Finite-difference verification of the hand-written backward pass on a
//! small instance of the full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, Mode, ModelConfig, ModelError, ModelParams};
use crate::data::PairInput;
use crate::embeddings::EmbeddingTable;
use crate::numerics::{grad_check, mix_seed, AdjointPair, Exec, GradCheckReport, Mask, Matrix};

/// Shapes and tolerances of one gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSpec {
    pub config: ModelConfig,
    pub premise_len: usize,
    pub hypothesis_len: usize,
    /// Central-difference step.
    pub eps: f64,
    /// Every ReLU pre-activation must be at least this far from 0.
    pub min_margin: f64,
    /// Standard deviation of the random parameters.
    pub init_sd: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl GradCheckSpec {
    /// Toy dimensions: projection to 7, hidden width 5, ℓa = 4, ℓb = 3.
    pub fn toy(use_intra: bool) -> Self {
        Self {
            config: ModelConfig {
                embed_dim: 9,
                proj_dim: 7,
                hidden: 5,
                layers: 2,
                classes: 3,
                dropout: 0.2,
                use_intra,
                distance_cap: 2,
            },
            premise_len: 4,
            hypothesis_len: 3,
            eps: 1e-5,
            min_margin: 1e-3,
            init_sd: 0.5,
            mode: Mode::Eval,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    /// Tensor names, indexed like `report.worst`.
    pub tensors: Vec<String>,
    pub min_abs_preactivation: f64,
    /// Instances rejected for a pre-activation too close to 0.
    pub rejected: usize,
}

impl GradCheckOutcome {
    pub fn worst_tensor(&self) -> Option<&str> {
        self.report.worst.map(|(t, _)| self.tensors[t].as_str())
    }
}

const MAX_ATTEMPTS: usize = 1000;

/// Draws random parameters and a random pair until every ReLU
/// pre-activation clears `min_margin`, then compares the analytic
/// gradient of the loss against central differences over every
/// trainable scalar.
pub fn check_gradients(spec: &GradCheckSpec) -> Result<GradCheckOutcome, ModelError> {
    let config = spec.config;
    let vocab_rows = 12;
    let embeddings = EmbeddingTable::random(vocab_rows, config.embed_dim, mix_seed(spec.seed, 0));
    let exec = Exec::sequential();

    for attempt in 0..MAX_ATTEMPTS {
        let seed = mix_seed(spec.seed, attempt as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init_with_sd(&config, seed, spec.init_sd)?;
        if let Some(intra) = &mut params.intra {
            intra.distance_bias =
                Matrix::gaussian(1, config.distance_buckets(), spec.init_sd, &mut rng);
        }
        let mut sentence = |len: usize| -> Vec<u32> {
            std::iter::once(0)
                .chain((1..len).map(|_| rng.random_range(1..vocab_rows as u32)))
                .collect()
        };
        let premise = sentence(spec.premise_len);
        let hypothesis = sentence(spec.hypothesis_len);
        let label = attempt % config.classes;
        let input = PairInput {
            premise: &premise,
            premise_mask: Mask::full(premise.len())?,
            hypothesis: &hypothesis,
            hypothesis_mask: Mask::full(hypothesis.len())?,
        };

        let trace = forward(&params, &config, &embeddings, &input, spec.mode, &exec)?;
        let margin = trace.min_abs_preactivation();
        if margin < spec.min_margin {
            continue;
        }
        let (_, grads) = backward(&params, &trace, label)?;

        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let pairs = params
            .tensors()
            .into_iter()
            .zip(grads.params.tensors())
            .map(|(v, g)| AdjointPair::with_adjoint(v.clone(), g.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut scratch = params.clone();
        let loss_at = |values: &[Matrix]| -> f64 {
            for (slot, v) in scratch.tensors_mut().into_iter().zip(values) {
                slot.clone_from(v);
            }
            forward(&scratch, &config, &embeddings, &input, spec.mode, &exec)
                .and_then(|t| super::loss(t.logits(), label))
                .unwrap_or(f64::NAN)
        };
        let report = grad_check(loss_at, &pairs, spec.eps)?;
        return Ok(GradCheckOutcome {
            report,
            tensors: names,
            min_abs_preactivation: margin,
            rejected: attempt,
        });
    }
    Err(ModelError::Config(format!(
        "no instance with pre-activations at least {} from 0 in {MAX_ATTEMPTS} draws",
        spec.min_margin
    )))
}
