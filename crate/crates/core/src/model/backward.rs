//! Reverse pass over a recorded [`ForwardTrace`].

use super::forward::{distance_bucket, loss_and_grad, ForwardTrace, IntraTrace};
use super::net::net_backward;
use super::params::IntraParams;
use super::{ModelError, ModelParams};
use crate::numerics::{
    affine_backward_acc, masked_row_sum_backward, masked_softmax_rows_backward, matmul, matmul_nt,
    matmul_tn, matmul_tn_acc, split_cols, Mask, Matrix,
};

/// Adjoints of the loss with respect to every trainable tensor, plus the
/// (fixed) embedded inputs for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    pub premise_embedded: Matrix,
    pub hypothesis_embedded: Matrix,
}

/// [`backward`] without the embedded-input adjoints, which training never
/// needs.
pub fn param_gradients(
    params: &ModelParams,
    trace: &ForwardTrace,
    label: usize,
) -> Result<(f64, ModelParams), ModelError> {
    let mut grads = params.zeros_like();
    let loss = param_gradients_into(params, trace, label, &mut grads)?;
    Ok((loss, grads))
}

/// [`param_gradients`] added into an existing buffer shaped like `params`.
/// Returns the loss.
pub fn param_gradients_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    label: usize,
    grads: &mut ModelParams,
) -> Result<f64, ModelError> {
    let (loss, d_logits) = loss_and_grad(trace.logits(), label)?;
    reverse(params, trace, &d_logits, grads, false)?;
    Ok(loss)
}

/// Gradients of the single-pair loss for gold class `label`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    label: usize,
) -> Result<(f64, Gradients), ModelError> {
    let (loss, d_logits) = loss_and_grad(trace.logits(), label)?;
    Ok((loss, backward_from_logits(params, trace, &d_logits)?))
}

/// Gradients given the adjoint of the logits.
pub fn backward_from_logits(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_logits: &Matrix,
) -> Result<Gradients, ModelError> {
    let mut grads = params.zeros_like();
    let inputs = reverse(params, trace, d_logits, &mut grads, true)?;
    let (premise_embedded, hypothesis_embedded) = inputs.expect("requested");
    Ok(Gradients {
        params: grads,
        premise_embedded,
        hypothesis_embedded,
    })
}

fn reverse(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_logits: &Matrix,
    grads: &mut ModelParams,
    input_grads: bool,
) -> Result<Option<(Matrix, Matrix)>, ModelError> {
    if grads.intra.is_some() != params.intra.is_some() {
        return Err(ModelError::Config(
            "gradient buffer does not match the parameters".into(),
        ));
    }

    // aggregate
    let agg = &trace.aggregate;
    let d_hidden = affine_backward_acc(
        &agg.hidden.output,
        &params.output.weight,
        d_logits,
        &mut grads.output.weight,
        &mut grads.output.bias,
    )?;
    let d_joined = net_backward(
        &params.aggregate,
        &agg.hidden,
        &d_hidden,
        &mut grads.aggregate,
    )?;
    let (d_sum_p, d_sum_h) = split_cols(&d_joined, agg.premise_sum.cols())?;
    let d_v1 = masked_row_sum_backward(&d_sum_p, &trace.premise.mask)?;
    let d_v2 = masked_row_sum_backward(&d_sum_h, &trace.hypothesis.mask)?;

    // compare
    let enc = trace.premise.encoded().cols();
    let d_left = net_backward(
        &params.compare,
        &trace.compare.premise,
        &d_v1,
        &mut grads.compare,
    )?;
    let d_right = net_backward(
        &params.compare,
        &trace.compare.hypothesis,
        &d_v2,
        &mut grads.compare,
    )?;
    let (mut d_premise, d_beta) = split_cols(&d_left, enc)?;
    let (mut d_hypothesis, d_alpha) = split_cols(&d_right, enc)?;

    // attend
    let att = &trace.attend;
    let premise_enc = trace.premise.encoded();
    let hypothesis_enc = trace.hypothesis.encoded();
    let d_pw = matmul_nt(&d_beta, hypothesis_enc)?;
    d_hypothesis.add_assign(&matmul_tn(&att.premise_weights, &d_beta)?)?;
    let d_hw = matmul_nt(&d_alpha, premise_enc)?;
    d_premise.add_assign(&matmul_tn(&att.hypothesis_weights, &d_alpha)?)?;
    let mut d_scores =
        masked_softmax_rows_backward(&att.premise_weights, &d_pw, &trace.hypothesis.mask)?;
    d_scores.add_assign(
        &masked_softmax_rows_backward(&att.hypothesis_weights, &d_hw, &trace.premise.mask)?
            .transpose(),
    )?;
    let d_fp = matmul(&d_scores, &att.f_hypothesis.output)?;
    let d_fh = matmul_tn(&d_scores, &att.f_premise.output)?;
    d_premise.add_assign(&net_backward(
        &params.attend,
        &att.f_premise,
        &d_fp,
        &mut grads.attend,
    )?)?;
    d_hypothesis.add_assign(&net_backward(
        &params.attend,
        &att.f_hypothesis,
        &d_fh,
        &mut grads.attend,
    )?)?;

    // intra-sentence attention
    let d_projected_p;
    let d_projected_h;
    match (
        &params.intra,
        &mut grads.intra,
        &trace.premise.intra,
        &trace.hypothesis.intra,
    ) {
        (Some(ip), Some(ig), Some(tp), Some(th)) => {
            d_projected_p = intra_backward(
                ip,
                tp,
                &trace.premise.projected,
                trace.premise.mask,
                &d_premise,
                ig,
            )?;
            d_projected_h = intra_backward(
                ip,
                th,
                &trace.hypothesis.projected,
                trace.hypothesis.mask,
                &d_hypothesis,
                ig,
            )?;
        }
        _ => {
            d_projected_p = d_premise;
            d_projected_h = d_hypothesis;
        }
    }

    // projection
    matmul_tn_acc(
        &trace.premise.embedded,
        &d_projected_p,
        &mut grads.projection,
    )?;
    matmul_tn_acc(
        &trace.hypothesis.embedded,
        &d_projected_h,
        &mut grads.projection,
    )?;
    let inputs = if input_grads {
        Some((
            matmul_nt(&d_projected_p, &params.projection)?,
            matmul_nt(&d_projected_h, &params.projection)?,
        ))
    } else {
        None
    };
    Ok(inputs)
}

/// Adjoint of the intra-attention input `x`, accumulating into `grads`.
fn intra_backward(
    params: &IntraParams,
    trace: &IntraTrace,
    x: &Matrix,
    mask: Mask,
    d_output: &Matrix,
    grads: &mut IntraParams,
) -> Result<Matrix, ModelError> {
    let (mut d_x, d_context) = split_cols(d_output, x.cols())?;
    let d_weights = matmul_nt(&d_context, x)?;
    d_x.add_assign(&matmul_tn(&trace.weights, &d_context)?)?;
    let d_scores = masked_softmax_rows_backward(&trace.weights, &d_weights, &mask)?;

    let cap = (params.distance_bias.cols() - 1) / 2;
    let bias_grad = grads.distance_bias.as_mut_slice();
    for i in 0..d_scores.rows() {
        for (j, &g) in d_scores.row(i).iter().enumerate() {
            bias_grad[distance_bucket(i, j, cap)] += g;
        }
    }

    // scores = F·Fᵀ, so dF = (dS + dSᵀ)·F
    let mut sym = d_scores.clone();
    sym.add_assign(&d_scores.transpose())?;
    let d_f = matmul(&sym, &trace.net.output)?;
    d_x.add_assign(&net_backward(
        &params.net,
        &trace.net,
        &d_f,
        &mut grads.net,
    )?)?;
    Ok(d_x)
}
