use super::TrainError;
use crate::model::ModelParams;
use crate::numerics::{Matrix, NumericsError};

/// Starting value of every Adagrad accumulator cell.
pub const INITIAL_ACCUMULATOR: f64 = 0.1;

/// One Adagrad update: `accum += grad²`, then
/// `param -= lr · grad / sqrt(accum)`.
///
/// Nothing is written when `grad` holds a non-finite value.
pub fn adagrad_step(
    param: &mut Matrix,
    grad: &Matrix,
    accum: &mut Matrix,
    lr: f64,
) -> Result<(), TrainError> {
    for other in [grad.shape(), accum.shape()] {
        if other != param.shape() {
            return Err(NumericsError::Shape {
                op: "adagrad_step",
                left: param.shape(),
                right: other,
            }
            .into());
        }
    }
    if !grad.is_finite() {
        return Err(TrainError::NonFinite("gradient".into()));
    }
    for ((p, &g), a) in param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(accum.as_mut_slice())
    {
        *a += g * g;
        *p -= lr * g / a.sqrt();
    }
    Ok(())
}

/// Adagrad accumulators, one per trainable tensor in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Matrix>,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let accumulators = params
            .tensors()
            .into_iter()
            .map(|t| Matrix::filled(t.rows(), t.cols(), INITIAL_ACCUMULATOR))
            .collect();
        Self {
            accumulators,
            learning_rate,
        }
    }

    /// Applies `grads` to every tensor of `params`. Gradients are checked
    /// for finiteness before anything is modified.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
    ) -> Result<(), TrainError> {
        let grads = grads.tensors();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite("gradient".into()));
        }
        let tensors = params.tensors_mut();
        if tensors.len() != self.accumulators.len() || grads.len() != tensors.len() {
            return Err(TrainError::Config(
                "optimizer state does not match the parameters".into(),
            ));
        }
        for ((p, g), a) in tensors.into_iter().zip(grads).zip(&mut self.accumulators) {
            adagrad_step(p, g, a, self.learning_rate)?;
        }
        Ok(())
    }
}
