//! The decomposable attention network.
//!
//! A pair is encoded token by token (fixed embedding, trainable projection,
//! optional intra-sentence attention), soft-aligned across sentences
//! (attend), compared position by position with its aligned subphrase
//! (compare), and the comparison vectors are summed and classified
//! (aggregate). Gradients are derived by hand over the recorded trace.

mod backward;
mod check;
mod config;
mod forward;
mod net;
mod params;

pub use backward::{
    backward, backward_from_logits, param_gradients, param_gradients_into, Gradients,
};
pub use check::{check_gradients, GradCheckOutcome, GradCheckSpec};
pub use config::ModelConfig;
pub use forward::{
    aggregate, argmax, attend, compare, distance_bucket, forward, intra_encode, loss,
    loss_and_grad, probabilities, project, AggregateTrace, AttendTrace, CompareTrace, ForwardStats,
    ForwardTrace, IntraTrace, Mode, SideTrace,
};
pub use net::{net_backward, net_forward, DropoutSite, LayerTrace, NetTrace};
pub use params::{
    count_params, expected_shapes, FeedForward, IntraParams, Linear, ModelParams, TensorShape,
    INIT_SD,
};

use thiserror::Error;

use crate::data::{Label, PairInput};
use crate::embeddings::{EmbeddingError, EmbeddingTable};
use crate::numerics::{Exec, NumericsError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("non-finite {0}")]
    NonFinite(String),
}

/// Eval-mode prediction for one pair: the argmax class and the softmax
/// of the logits.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    input: &PairInput<'_>,
) -> Result<(Label, Vec<f64>), ModelError> {
    let trace = forward(
        params,
        config,
        embeddings,
        input,
        Mode::Eval,
        &Exec::sequential(),
    )?;
    let logits = trace.logits().as_slice();
    let label =
        Label::from_index(argmax(logits)).ok_or(ModelError::LabelOutOfRange(argmax(logits)))?;
    Ok((label, probabilities(logits)))
}
