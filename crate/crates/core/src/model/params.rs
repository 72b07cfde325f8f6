use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::numerics::{mix_seed, Matrix};

/// Standard deviation of the Gaussian used for every weight and bias.
pub const INIT_SD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: Matrix,
    /// `1 × out`.
    pub bias: Matrix,
}

impl Linear {
    fn init(input: usize, output: usize, sd: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Matrix::gaussian(input, output, sd, rng),
            bias: Matrix::gaussian(1, output, sd, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// A stack of affine+ReLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
}

impl FeedForward {
    pub fn init(input: usize, hidden: usize, depth: usize, sd: f64, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..depth)
            .map(|i| Linear::init(if i == 0 { input } else { hidden }, hidden, sd, rng))
            .collect();
        Self { layers }
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraParams {
    pub net: FeedForward,
    /// `1 × (2·cap + 1)`, indexed by `clamp(i - j, -cap, cap) + cap`.
    pub distance_bias: Matrix,
}

/// Every trainable tensor of the model. The embedding table is not here:
/// it is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `embed_dim × proj_dim`, no bias.
    pub projection: Matrix,
    /// F: scores tokens for cross-sentence alignment.
    pub attend: FeedForward,
    /// G: compares a token with its aligned subphrase.
    pub compare: FeedForward,
    /// Hidden layers of H.
    pub aggregate: FeedForward,
    /// Final linear layer of H, producing class scores.
    pub output: Linear,
    pub intra: Option<IntraParams>,
}

impl ModelParams {
    /// Gaussian(0, 0.01) weights and biases; distance biases start at 0.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::init_with_sd(config, seed, INIT_SD)
    }

    pub fn init_with_sd(config: &ModelConfig, seed: u64, sd: f64) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let rng = |salt| ChaCha8Rng::seed_from_u64(mix_seed(seed, salt));
        let enc = c.encoded_dim();
        Ok(Self {
            projection: Matrix::gaussian(c.embed_dim, c.proj_dim, sd, &mut rng(1)),
            attend: FeedForward::init(enc, c.hidden, c.layers, sd, &mut rng(2)),
            compare: FeedForward::init(2 * enc, c.hidden, c.layers, sd, &mut rng(3)),
            aggregate: FeedForward::init(2 * c.hidden, c.hidden, c.layers, sd, &mut rng(4)),
            output: Linear::init(c.hidden, c.classes, sd, &mut rng(5)),
            intra: c.use_intra.then(|| IntraParams {
                net: FeedForward::init(c.proj_dim, c.hidden, c.layers, sd, &mut rng(6)),
                distance_bias: Matrix::zeros(1, c.distance_buckets()),
            }),
        })
    }

    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let linear = |input, output| Linear {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        };
        let net = |input| FeedForward {
            layers: (0..c.layers)
                .map(|i| linear(if i == 0 { input } else { c.hidden }, c.hidden))
                .collect(),
        };
        let enc = c.encoded_dim();
        Ok(Self {
            projection: Matrix::zeros(c.embed_dim, c.proj_dim),
            attend: net(enc),
            compare: net(2 * enc),
            aggregate: net(2 * c.hidden),
            output: linear(c.hidden, c.classes),
            intra: c.use_intra.then(|| IntraParams {
                net: net(c.proj_dim),
                distance_bias: Matrix::zeros(1, c.distance_buckets()),
            }),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projection: Matrix::zeros(self.projection.rows(), self.projection.cols()),
            attend: self.attend.zeros_like(),
            compare: self.compare.zeros_like(),
            aggregate: self.aggregate.zeros_like(),
            output: self.output.zeros_like(),
            intra: self.intra.as_ref().map(|p| IntraParams {
                net: p.net.zeros_like(),
                distance_bias: Matrix::zeros(1, p.distance_bias.cols()),
            }),
        }
    }

    /// Tensors in their canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("projection".to_string(), &self.projection)];
        fn net<'a>(prefix: &str, net: &'a FeedForward, out: &mut Vec<(String, &'a Matrix)>) {
            for (i, l) in net.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &l.weight));
                out.push((format!("{prefix}.{i}.bias"), &l.bias));
            }
        }
        net("attend", &self.attend, &mut out);
        net("compare", &self.compare, &mut out);
        net("aggregate", &self.aggregate, &mut out);
        out.push(("output.weight".to_string(), &self.output.weight));
        out.push(("output.bias".to_string(), &self.output.bias));
        if let Some(intra) = &self.intra {
            net("intra", &intra.net, &mut out);
            out.push(("intra.distance_bias".to_string(), &intra.distance_bias));
        }
        out
    }

    /// Mutable tensors, in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        fn net<'a>(net: &'a mut FeedForward, out: &mut Vec<&'a mut Matrix>) {
            for l in &mut net.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        let mut out = vec![&mut self.projection];
        net(&mut self.attend, &mut out);
        net(&mut self.compare, &mut out);
        net(&mut self.aggregate, &mut out);
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        if let Some(intra) = &mut self.intra {
            net(&mut intra.net, &mut out);
            out.push(&mut intra.distance_bias);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named_tensors().into_iter().map(|(_, m)| m).collect()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Checks every tensor shape against the shapes `config` calls for.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = expected_shapes(config)?;
        let ours = self.named_tensors();
        if ours.len() != expected.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors for this config, found {}",
                expected.len(),
                ours.len()
            )));
        }
        for ((name, m), (_, shape)) in ours.iter().zip(&expected) {
            if m.shape() != *shape {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: *shape,
                    found: m.shape(),
                });
            }
        }
        Ok(())
    }

    /// Builds parameters for `config` from `(name, tensor)` pairs, which
    /// must cover exactly the expected names and shapes.
    pub fn from_named(
        config: &ModelConfig,
        mut named: std::collections::HashMap<String, Matrix>,
    ) -> Result<Self, ModelError> {
        let mut params = Self::zeros(config)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let m = named
                .remove(name)
                .ok_or_else(|| ModelError::Config(format!("missing tensor {name}")))?;
            if m.shape() != slot.shape() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: slot.shape(),
                    found: m.shape(),
                });
            }
            *slot = m;
        }
        if let Some(extra) = named.keys().next() {
            return Err(ModelError::Config(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) -> Result<(), ModelError> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    /// Sets every entry to 0, keeping the allocations.
    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.scale_in_place(factor);
        }
    }
}

/// A tensor name and its `(rows, cols)`.
pub type TensorShape = (String, (usize, usize));

/// Tensor names and shapes for `config`, in canonical order.
pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<TensorShape>, ModelError> {
    config.validate()?;
    let c = config;
    let mut out = vec![("projection".to_string(), (c.embed_dim, c.proj_dim))];
    let net = |prefix: &str, input: usize, out: &mut Vec<_>| {
        for i in 0..c.layers {
            let rows = if i == 0 { input } else { c.hidden };
            out.push((format!("{prefix}.{i}.weight"), (rows, c.hidden)));
            out.push((format!("{prefix}.{i}.bias"), (1, c.hidden)));
        }
    };
    let enc = c.encoded_dim();
    net("attend", enc, &mut out);
    net("compare", 2 * enc, &mut out);
    net("aggregate", 2 * c.hidden, &mut out);
    out.push(("output.weight".to_string(), (c.hidden, c.classes)));
    out.push(("output.bias".to_string(), (1, c.classes)));
    if c.use_intra {
        net("intra", c.proj_dim, &mut out);
        out.push(("intra.distance_bias".to_string(), (1, c.distance_buckets())));
    }
    Ok(out)
}

/// Number of trainable scalars, after checking `params` against `config`.
pub fn count_params(params: &ModelParams, config: &ModelConfig) -> Result<usize, ModelError> {
    params.check_shapes(config)?;
    Ok(params.count())
}
