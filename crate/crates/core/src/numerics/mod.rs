//! Dense matrix math with paired forward/backward kernels.
//!
//! Everything here works in `f64`. Each forward op that participates in the
//! model has a `*_backward` companion that maps an upstream adjoint to the
//! adjoints of its inputs. Ops are pure functions; the only shared state is
//! the optional worker pool carried by [`Exec`].

mod dropout;
mod exec;
mod grad_check;
mod mask;
mod matrix;
mod ops;

pub(crate) use dropout::mix_seed;
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use exec::Exec;
pub use grad_check::{grad_check, AdjointPair, GradCheckReport};
pub use mask::Mask;
pub use matrix::Matrix;
pub use ops::{
    affine, affine_backward, affine_backward_acc, affine_in, concat_cols, masked_row_sum,
    masked_row_sum_backward, masked_softmax_rows, masked_softmax_rows_backward,
    masked_softmax_rows_in, matmul, matmul_in, matmul_nt, matmul_nt_in, matmul_tn, matmul_tn_acc,
    relu, relu_backward, split_cols, AffineGrads,
};

use thiserror::Error;

/// Errors raised by the matrix kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: mask of length {mask} does not cover {len} positions")]
    MaskLength {
        op: &'static str,
        mask: usize,
        len: usize,
    },
    #[error("mask has no real positions; cannot normalize over an empty support")]
    EmptyMask,
    #[error("mask flags are not a contiguous prefix of real tokens followed by padding")]
    MaskNotPrefix,
    #[error("buffer of length {len} cannot form a {rows}x{cols} matrix")]
    BadBuffer {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("dropout ratio {0} outside [0, 1)")]
    DropoutRatio(f64),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
