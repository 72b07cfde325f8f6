//! Forward and backward passes of the affine+ReLU stacks.

use super::params::{FeedForward, Linear};
use super::ModelError;
use crate::numerics::{
    affine_backward_acc, affine_in, dropout, dropout_backward, mix_seed, relu, relu_backward,
    DropoutMask, Exec, Matrix,
};

/// Dropout setting for one network application. `seed == None` is eval
/// mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSite {
    pub ratio: f64,
    pub seed: Option<u64>,
}

impl DropoutSite {
    pub fn off() -> Self {
        Self {
            ratio: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Layer input after dropout.
    pub input: Matrix,
    /// Affine output before the ReLU.
    pub pre: Matrix,
    pub dropout: DropoutMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetTrace {
    pub layers: Vec<LayerTrace>,
    pub output: Matrix,
}

impl NetTrace {
    /// Smallest |pre-activation| over every layer; kinks of the ReLU sit at 0.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.pre.as_slice())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Applies the network row by row: for each layer, dropout on the input,
/// then affine, then ReLU.
pub fn net_forward(
    net: &FeedForward,
    x: &Matrix,
    site: DropoutSite,
    exec: &Exec,
) -> Result<NetTrace, ModelError> {
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut current = x.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        let (input, mask) = dropout(
            &current,
            site.ratio,
            site.seed.map_or(0, |s| mix_seed(s, i as u64)),
            site.seed.is_some(),
        )?;
        let pre = affine_in(exec, &input, &layer.weight, &layer.bias)?;
        current = relu(&pre);
        layers.push(LayerTrace {
            input,
            pre,
            dropout: mask,
        });
    }
    Ok(NetTrace {
        layers,
        output: current,
    })
}

/// Returns the adjoint of the network input and accumulates parameter
/// adjoints into `grads`.
pub fn net_backward(
    net: &FeedForward,
    trace: &NetTrace,
    d_output: &Matrix,
    grads: &mut FeedForward,
) -> Result<Matrix, ModelError> {
    let mut upstream = d_output.clone();
    for ((layer, lt), g) in net
        .layers
        .iter()
        .zip(&trace.layers)
        .zip(&mut grads.layers)
        .rev()
    {
        let d_pre = relu_backward(&lt.pre, &upstream)?;
        let dx = affine_backward_acc(&lt.input, &layer.weight, &d_pre, &mut g.weight, &mut g.bias)?;
        upstream = dropout_backward(&lt.dropout, &dx)?;
    }
    Ok(upstream)
}

/// Multiply-add count (×2) of one application over `rows` inputs.
pub fn net_flops(net: &FeedForward, rows: usize) -> u64 {
    net.layers.iter().map(|l| linear_flops(l, rows)).sum()
}

pub fn linear_flops(l: &Linear, rows: usize) -> u64 {
    2 * (rows * l.input_dim() * l.output_dim()) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn per_row_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = FeedForward::init(4, 3, 2, 0.7, &mut rng);
        let x = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let trace = net_forward(&net, &x, DropoutSite::off(), &Exec::sequential()).unwrap();
        for r in 0..5 {
            let mut h: Vec<f64> = x.row(r).to_vec();
            for l in &net.layers {
                h = (0..l.output_dim())
                    .map(|j| {
                        let s: f64 = (0..l.input_dim())
                            .map(|k| h[k] * l.weight.get(k, j))
                            .sum::<f64>()
                            + l.bias.get(0, j);
                        s.max(0.0)
                    })
                    .collect();
            }
            for (a, b) in trace.output.row(r).iter().zip(&h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
