//! The attend / compare / aggregate pipeline and its recorded trace.

use super::net::{linear_flops, net_flops, net_forward, DropoutSite, NetTrace};
use super::params::{FeedForward, IntraParams, Linear};
use super::{ModelConfig, ModelError, ModelParams};
use crate::data::PairInput;
use crate::embeddings::EmbeddingTable;
use crate::numerics::{
    affine_in, concat_cols, masked_row_sum, masked_softmax_rows_in, matmul_in, matmul_nt_in,
    mix_seed, Exec, Mask, Matrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off.
    Eval,
    /// Dropout on, every mask derived from `seed`.
    Train { seed: u64 },
}

impl Mode {
    fn seed(self) -> Option<u64> {
        match self {
            Mode::Eval => None,
            Mode::Train { seed } => Some(seed),
        }
    }
}

// Salts for the dropout sites of one forward pass.
const SITE_INTRA_PREMISE: u64 = 1;
const SITE_INTRA_HYPOTHESIS: u64 = 2;
const SITE_ATTEND_PREMISE: u64 = 3;
const SITE_ATTEND_HYPOTHESIS: u64 = 4;
const SITE_COMPARE_PREMISE: u64 = 5;
const SITE_COMPARE_HYPOTHESIS: u64 = 6;
const SITE_AGGREGATE: u64 = 7;

fn site(config: &ModelConfig, mode: Mode, salt: u64) -> DropoutSite {
    DropoutSite {
        ratio: config.dropout,
        seed: mode.seed().map(|s| mix_seed(s, salt)),
    }
}

/// Work counters for one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Rows pushed through F: one per premise position plus one per
    /// hypothesis position (padding included).
    pub f_applications: usize,
    /// 2 × multiply-adds of every matrix product.
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraTrace {
    pub net: NetTrace,
    /// Self-attention weights, `ℓ × ℓ`, rows summing to 1 over real columns.
    pub weights: Matrix,
    /// `[x, weights · x]`.
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideTrace {
    pub ids: Vec<u32>,
    pub mask: Mask,
    pub embedded: Matrix,
    pub projected: Matrix,
    pub intra: Option<IntraTrace>,
}

impl SideTrace {
    /// The representation fed to attend and compare.
    pub fn encoded(&self) -> &Matrix {
        self.intra.as_ref().map_or(&self.projected, |t| &t.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttendTrace {
    pub f_premise: NetTrace,
    pub f_hypothesis: NetTrace,
    /// Unnormalized alignment scores `e`, `ℓa × ℓb`.
    pub scores: Matrix,
    /// Row `i`: distribution over hypothesis positions for premise token `i`.
    pub premise_weights: Matrix,
    /// Row `j`: distribution over premise positions for hypothesis token `j`.
    pub hypothesis_weights: Matrix,
    /// Hypothesis subphrase aligned to each premise token.
    pub beta: Matrix,
    /// Premise subphrase aligned to each hypothesis token.
    pub alpha: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTrace {
    pub premise: NetTrace,
    pub hypothesis: NetTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrace {
    pub premise_sum: Matrix,
    pub hypothesis_sum: Matrix,
    pub hidden: NetTrace,
    pub logits: Matrix,
}

/// Everything one forward pass computed, enough for an exact backward.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub premise: SideTrace,
    pub hypothesis: SideTrace,
    pub attend: AttendTrace,
    pub compare: CompareTrace,
    pub aggregate: AggregateTrace,
    pub stats: ForwardStats,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        &self.aggregate.logits
    }

    /// Smallest |pre-activation| over every ReLU in the pass.
    pub fn min_abs_preactivation(&self) -> f64 {
        let mut nets = vec![
            &self.attend.f_premise,
            &self.attend.f_hypothesis,
            &self.compare.premise,
            &self.compare.hypothesis,
            &self.aggregate.hidden,
        ];
        for side in [&self.premise, &self.hypothesis] {
            if let Some(t) = &side.intra {
                nets.push(&t.net);
            }
        }
        nets.iter()
            .map(|n| n.min_abs_preactivation())
            .fold(f64::INFINITY, f64::min)
    }
}

/// `embedded · projection`; no bias, no nonlinearity.
pub fn project(embedded: &Matrix, projection: &Matrix, exec: &Exec) -> Result<Matrix, ModelError> {
    Ok(matmul_in(exec, embedded, projection)?)
}

/// Bucket of the signed offset `i - j`, clamped to `[-cap, cap]`.
#[inline]
pub fn distance_bucket(i: usize, j: usize, cap: usize) -> usize {
    let cap = cap as isize;
    ((i as isize - j as isize).clamp(-cap, cap) + cap) as usize
}

/// Self-attention within one sentence with distance-bucket biases.
/// Output row `i` is `[x_i, Σ_j w_ij x_j]`.
pub fn intra_encode(
    x: &Matrix,
    mask: Mask,
    intra: &IntraParams,
    distance_cap: usize,
    site: DropoutSite,
    exec: &Exec,
) -> Result<IntraTrace, ModelError> {
    let net = net_forward(&intra.net, x, site, exec)?;
    let mut scores = matmul_nt_in(exec, &net.output, &net.output)?;
    let bias = intra.distance_bias.as_slice();
    for i in 0..scores.rows() {
        for (j, s) in scores.row_mut(i).iter_mut().enumerate() {
            *s += bias[distance_bucket(i, j, distance_cap)];
        }
    }
    let weights = masked_softmax_rows_in(exec, &scores, &mask)?;
    let context = matmul_in(exec, &weights, x)?;
    let output = concat_cols(x, &context)?;
    Ok(IntraTrace {
        net,
        weights,
        output,
    })
}

/// Soft alignment between the two sentences. F is applied once per row of
/// each side and the score matrix is the product of the two results.
#[allow(clippy::too_many_arguments)]
pub fn attend(
    premise: &Matrix,
    premise_mask: Mask,
    hypothesis: &Matrix,
    hypothesis_mask: Mask,
    f: &FeedForward,
    sites: (DropoutSite, DropoutSite),
    exec: &Exec,
) -> Result<AttendTrace, ModelError> {
    if premise.cols() != hypothesis.cols() {
        return Err(ModelError::Numerics(
            crate::numerics::NumericsError::Shape {
                op: "attend",
                left: premise.shape(),
                right: hypothesis.shape(),
            },
        ));
    }
    let (f_premise, f_hypothesis) = exec.join(
        || net_forward(f, premise, sites.0, exec),
        || net_forward(f, hypothesis, sites.1, exec),
    );
    let (f_premise, f_hypothesis) = (f_premise?, f_hypothesis?);
    let scores = matmul_nt_in(exec, &f_premise.output, &f_hypothesis.output)?;
    let premise_weights = masked_softmax_rows_in(exec, &scores, &hypothesis_mask)?;
    let hypothesis_weights = masked_softmax_rows_in(exec, &scores.transpose(), &premise_mask)?;
    let beta = matmul_in(exec, &premise_weights, hypothesis)?;
    let alpha = matmul_in(exec, &hypothesis_weights, premise)?;
    Ok(AttendTrace {
        f_premise,
        f_hypothesis,
        scores,
        premise_weights,
        hypothesis_weights,
        beta,
        alpha,
    })
}

/// G over `[ā_i, β_i]` and `[b̄_j, α_j]`, sharing parameters.
pub fn compare(
    premise: &Matrix,
    beta: &Matrix,
    hypothesis: &Matrix,
    alpha: &Matrix,
    g: &FeedForward,
    sites: (DropoutSite, DropoutSite),
    exec: &Exec,
) -> Result<CompareTrace, ModelError> {
    let left = concat_cols(premise, beta)?;
    let right = concat_cols(hypothesis, alpha)?;
    let (p, h) = exec.join(
        || net_forward(g, &left, sites.0, exec),
        || net_forward(g, &right, sites.1, exec),
    );
    Ok(CompareTrace {
        premise: p?,
        hypothesis: h?,
    })
}

/// Sums the real comparison rows of each side and classifies the pair.
pub fn aggregate(
    v1: &Matrix,
    premise_mask: Mask,
    v2: &Matrix,
    hypothesis_mask: Mask,
    h: &FeedForward,
    output: &Linear,
    site: DropoutSite,
) -> Result<AggregateTrace, ModelError> {
    let premise_sum = masked_row_sum(v1, &premise_mask)?;
    let hypothesis_sum = masked_row_sum(v2, &hypothesis_mask)?;
    let joined = concat_cols(&premise_sum, &hypothesis_sum)?;
    let hidden = net_forward(h, &joined, site, &Exec::sequential())?;
    let logits = affine_in(
        &Exec::sequential(),
        &hidden.output,
        &output.weight,
        &output.bias,
    )?;
    Ok(AggregateTrace {
        premise_sum,
        hypothesis_sum,
        hidden,
        logits,
    })
}

/// Runs the full model on one pair.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    input: &PairInput<'_>,
    mode: Mode,
    exec: &Exec,
) -> Result<ForwardTrace, ModelError> {
    if config.use_intra && params.intra.is_none() {
        return Err(ModelError::Config(
            "intra attention enabled but parameters have none".into(),
        ));
    }
    let intra_params = params.intra.as_ref().filter(|_| config.use_intra);
    input
        .premise_mask
        .check_len("forward", input.premise.len())?;
    input
        .hypothesis_mask
        .check_len("forward", input.hypothesis.len())?;

    let mut stats = ForwardStats::default();
    let encode_side = |ids: &[u32], mask: Mask, salt: u64| -> Result<SideTrace, ModelError> {
        let embedded = embeddings.embed_sentence(ids)?;
        let projected = project(&embedded, &params.projection, exec)?;
        let intra = match intra_params {
            Some(ip) => Some(intra_encode(
                &projected,
                mask,
                ip,
                config.distance_cap,
                site(config, mode, salt),
                exec,
            )?),
            None => None,
        };
        Ok(SideTrace {
            ids: ids.to_vec(),
            mask,
            embedded,
            projected,
            intra,
        })
    };
    let premise = encode_side(input.premise, input.premise_mask, SITE_INTRA_PREMISE)?;
    let hypothesis = encode_side(
        input.hypothesis,
        input.hypothesis_mask,
        SITE_INTRA_HYPOTHESIS,
    )?;

    let attend = attend(
        premise.encoded(),
        premise.mask,
        hypothesis.encoded(),
        hypothesis.mask,
        &params.attend,
        (
            site(config, mode, SITE_ATTEND_PREMISE),
            site(config, mode, SITE_ATTEND_HYPOTHESIS),
        ),
        exec,
    )?;
    let compare = compare(
        premise.encoded(),
        &attend.beta,
        hypothesis.encoded(),
        &attend.alpha,
        &params.compare,
        (
            site(config, mode, SITE_COMPARE_PREMISE),
            site(config, mode, SITE_COMPARE_HYPOTHESIS),
        ),
        exec,
    )?;
    let aggregate = aggregate(
        &compare.premise.output,
        premise.mask,
        &compare.hypothesis.output,
        hypothesis.mask,
        &params.aggregate,
        &params.output,
        site(config, mode, SITE_AGGREGATE),
    )?;

    let (la, lb) = (premise.ids.len(), hypothesis.ids.len());
    let enc = premise.encoded().cols();
    stats.f_applications = attend.f_premise.output.rows() + attend.f_hypothesis.output.rows();
    stats.flops += 2 * ((la + lb) * config.embed_dim * config.proj_dim) as u64;
    if let Some(ip) = intra_params {
        for l in [la, lb] {
            stats.flops += net_flops(&ip.net, l)
                + 2 * (l * l * config.hidden) as u64
                + 2 * (l * l * config.proj_dim) as u64;
        }
    }
    stats.flops += net_flops(&params.attend, la + lb)
        + 2 * (la * lb * config.hidden) as u64
        + 4 * (la * lb * enc) as u64
        + net_flops(&params.compare, la + lb)
        + net_flops(&params.aggregate, 1)
        + linear_flops(&params.output, 1);

    Ok(ForwardTrace {
        mode,
        premise,
        hypothesis,
        attend,
        compare,
        aggregate,
        stats,
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Softmax of one row of logits.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of the gold class: `logsumexp(logits) - logits[label]`.
pub fn loss(logits: &Matrix, label: usize) -> Result<f64, ModelError> {
    loss_and_grad(logits, label).map(|(l, _)| l)
}

/// The loss together with its gradient `softmax(logits) - onehot(label)`.
pub fn loss_and_grad(logits: &Matrix, label: usize) -> Result<(f64, Matrix), ModelError> {
    if label >= logits.cols() {
        return Err(ModelError::LabelOutOfRange(label));
    }
    if !logits.is_finite() {
        return Err(ModelError::NonFinite("logits".into()));
    }
    let z = logits.as_slice();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - z[label];
    let mut grad: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, Matrix::from_vec(1, z.len(), grad)?))
}
