use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, NumericsError, Result};

/// Record of which elements survived a dropout call.
#[derive(Debug, Clone, PartialEq)]
pub enum DropoutMask {
    /// Eval mode or ratio 0: nothing dropped.
    Identity,
    /// Per-element multipliers, each either 0 or `1 / (1 - ratio)`.
    Scales(Vec<f64>),
}

/// SplitMix64 finalizer; used to derive independent seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `ratio` and survivors are scaled by `1 / (1 - ratio)`; in eval mode the
/// input is returned unchanged.
///
/// Each row draws from its own stream derived from `(seed, row)`, so the
/// mask of a row does not depend on how many rows follow it.
pub fn dropout(x: &Matrix, ratio: f64, seed: u64, train: bool) -> Result<(Matrix, DropoutMask)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(NumericsError::DropoutRatio(ratio));
    }
    if !train || ratio == 0.0 {
        return Ok((x.clone(), DropoutMask::Identity));
    }
    let keep = 1.0 / (1.0 - ratio);
    let mut scales = Vec::with_capacity(x.len());
    for row in 0..x.rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, row as u64));
        scales.extend((0..x.cols()).map(|_| {
            if rng.random::<f64>() < ratio {
                0.0
            } else {
                keep
            }
        }));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(&scales)
        .map(|(v, s)| v * s)
        .collect();
    Ok((
        Matrix::from_vec(x.rows(), x.cols(), data)?,
        DropoutMask::Scales(scales),
    ))
}

pub fn dropout_backward(mask: &DropoutMask, dy: &Matrix) -> Result<Matrix> {
    match mask {
        DropoutMask::Identity => Ok(dy.clone()),
        DropoutMask::Scales(scales) => {
            if scales.len() != dy.len() {
                return Err(NumericsError::BadBuffer {
                    rows: dy.rows(),
                    cols: dy.cols(),
                    len: scales.len(),
                });
            }
            let data = dy
                .as_slice()
                .iter()
                .zip(scales)
                .map(|(g, s)| g * s)
                .collect();
            Matrix::from_vec(dy.rows(), dy.cols(), data)
        }
    }
}
