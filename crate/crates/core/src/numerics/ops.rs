use super::{Exec, Mask, Matrix, NumericsError, Result};

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_in(&Exec::sequential(), a, b)
}

pub fn matmul_in(exec: &Exec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    let q = b.cols();
    exec.for_each_row(out.as_mut_slice(), q, |i, row| {
        for (k, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(b.row(k)) {
                *o += x * w;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ`: every row of `a` dotted with every row of `b`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_nt_in(&Exec::sequential(), a, b)
}

pub fn matmul_nt_in(exec: &Exec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(shape_err("matmul_nt", a, b));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    exec.for_each_row(out.as_mut_slice(), b.rows(), |i, row| {
        let ai = a.row(i);
        let mut blocks = row.chunks_exact_mut(4);
        let mut j = 0;
        for block in &mut blocks {
            block.copy_from_slice(&dot4(
                ai,
                [b.row(j), b.row(j + 1), b.row(j + 2), b.row(j + 3)],
            ));
            j += 4;
        }
        for o in blocks.into_remainder() {
            *o = dot(ai, b.row(j));
            j += 1;
        }
    });
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.cols(), b.cols());
    matmul_tn_acc(a, b, &mut out)?;
    Ok(out)
}

/// `out += aᵀ · b`, one row of `a` and `b` at a time.
pub fn matmul_tn_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(shape_err("matmul_tn", a, b));
    }
    if out.shape() != (a.cols(), b.cols()) {
        return Err(NumericsError::Shape {
            op: "matmul_tn output",
            left: out.shape(),
            right: (a.cols(), b.cols()),
        });
    }
    let q = b.cols();
    let dst = out.as_mut_slice();
    for i in 0..a.rows() {
        let bi = b.row(i);
        if bi.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (k, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &v) in dst[k * q..(k + 1) * q].iter_mut().zip(bi) {
                *o += x * v;
            }
        }
    }
    Ok(())
}

/// Four interleaved partial sums, added as `(s0 + s1) + (s2 + s3)` plus
/// the tail; the order is fixed, so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail = tail_dot(ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            s[k] += x[k] * y[k];
        }
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
fn tail_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// [`dot`] of `a` with four vectors at once, bit-identical to four calls.
#[inline]
fn dot4(a: &[f64], bs: [&[f64]; 4]) -> [f64; 4] {
    let n = a.len() / 4 * 4;
    let mut s = [[0.0; 4]; 4];
    for c in (0..n).step_by(4) {
        let x = &a[c..c + 4];
        for (sr, b) in s.iter_mut().zip(&bs) {
            let y = &b[c..c + 4];
            for k in 0..4 {
                sr[k] += x[k] * y[k];
            }
        }
    }
    let mut out = [0.0; 4];
    for ((o, sr), b) in out.iter_mut().zip(&s).zip(&bs) {
        *o = (sr[0] + sr[1]) + (sr[2] + sr[3]) + tail_dot(&a[n..], &b[n..]);
    }
    out
}

/// `x · W + b`, with `b` a `1×q` row broadcast over the rows of `x`.
pub fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    affine_in(&Exec::sequential(), x, w, b)
}

pub fn affine_in(exec: &Exec, x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(shape_err("affine", x, w));
    }
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(shape_err("affine bias", w, b));
    }
    let mut out = Matrix::zeros(x.rows(), w.cols());
    exec.for_each_row(out.as_mut_slice(), w.cols(), |i, row| {
        row.copy_from_slice(b.as_slice());
        for (k, &v) in x.row(i).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, &wk) in row.iter_mut().zip(w.row(k)) {
                *o += v * wk;
            }
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
}

/// Adjoints of [`affine`] given the forward input `x`, weights `w` and the
/// upstream adjoint `dy`.
pub fn affine_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<AffineGrads> {
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let mut db = Matrix::zeros(1, w.cols());
    let dx = affine_backward_acc(x, w, dy, &mut dw, &mut db)?;
    Ok(AffineGrads { dx, dw, db })
}

/// [`affine_backward`] that adds the weight and bias adjoints into `dw` and
/// `db` and returns `dx`.
pub fn affine_backward_acc(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut Matrix,
) -> Result<Matrix> {
    if dy.rows() != x.rows() || dy.cols() != w.cols() {
        return Err(shape_err("affine_backward", x, dy));
    }
    if db.shape() != (1, w.cols()) {
        return Err(shape_err("affine_backward bias", w, db));
    }
    matmul_tn_acc(x, dy, dw)?;
    for row in dy.row_iter() {
        for (o, &v) in db.as_mut_slice().iter_mut().zip(row) {
            *o += v;
        }
    }
    matmul_nt(dy, w)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `dy` where the forward input was strictly positive. The
/// derivative at exactly 0 is taken to be 0.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix> {
    if x.shape() != dy.shape() {
        return Err(shape_err("relu_backward", x, dy));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(dy.as_slice())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

/// Row-wise softmax restricted to the real columns of `mask`. Padding
/// columns come out as exactly 0. The row maximum over real columns is
/// subtracted before exponentiation.
pub fn masked_softmax_rows(e: &Matrix, mask: &Mask) -> Result<Matrix> {
    masked_softmax_rows_in(&Exec::sequential(), e, mask)
}

pub fn masked_softmax_rows_in(exec: &Exec, e: &Matrix, mask: &Mask) -> Result<Matrix> {
    mask.check_len("masked_softmax_rows", e.cols())?;
    if mask.valid() == 0 {
        return Err(NumericsError::EmptyMask);
    }
    let valid = mask.valid();
    let mut out = Matrix::zeros(e.rows(), e.cols());
    exec.for_each_row(out.as_mut_slice(), e.cols(), |i, row| {
        let src = &e.row(i)[..valid];
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in row[..valid].iter_mut().zip(src) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in &mut row[..valid] {
            *o /= total;
        }
    });
    Ok(out)
}

/// Adjoint of [`masked_softmax_rows`] from its output `y`. Padding columns
/// receive exactly 0.
pub fn masked_softmax_rows_backward(y: &Matrix, dy: &Matrix, mask: &Mask) -> Result<Matrix> {
    if y.shape() != dy.shape() {
        return Err(shape_err("masked_softmax_rows_backward", y, dy));
    }
    mask.check_len("masked_softmax_rows_backward", y.cols())?;
    let valid = mask.valid();
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yi = &y.row(i)[..valid];
        let gi = &dy.row(i)[..valid];
        let inner = dot(yi, gi);
        for ((o, &p), &g) in out.row_mut(i)[..valid].iter_mut().zip(yi).zip(gi) {
            *o = p * (g - inner);
        }
    }
    Ok(out)
}

/// `[x, y]`: columns of `x` followed by columns of `y`.
pub fn concat_cols(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows() != y.rows() {
        return Err(shape_err("concat_cols", x, y));
    }
    let cols = x.cols() + y.cols();
    let mut data = Vec::with_capacity(x.rows() * cols);
    for i in 0..x.rows() {
        data.extend_from_slice(x.row(i));
        data.extend_from_slice(y.row(i));
    }
    Matrix::from_vec(x.rows(), cols, data)
}

/// Inverse of [`concat_cols`]: the first `left_cols` columns, then the rest.
/// Doubles as the backward of concatenation.
pub fn split_cols(m: &Matrix, left_cols: usize) -> Result<(Matrix, Matrix)> {
    if left_cols > m.cols() {
        return Err(NumericsError::Shape {
            op: "split_cols",
            left: m.shape(),
            right: (m.rows(), left_cols),
        });
    }
    let right_cols = m.cols() - left_cols;
    let mut left = Vec::with_capacity(m.rows() * left_cols);
    let mut right = Vec::with_capacity(m.rows() * right_cols);
    for row in m.row_iter() {
        left.extend_from_slice(&row[..left_cols]);
        right.extend_from_slice(&row[left_cols..]);
    }
    Ok((
        Matrix::from_vec(m.rows(), left_cols, left)?,
        Matrix::from_vec(m.rows(), right_cols, right)?,
    ))
}

/// Sum of the real rows of `v`, as a `1×d` row.
pub fn masked_row_sum(v: &Matrix, mask: &Mask) -> Result<Matrix> {
    mask.check_len("masked_row_sum", v.rows())?;
    let mut out = Matrix::zeros(1, v.cols());
    for row in v.row_iter().take(mask.valid()) {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(row) {
            *o += x;
        }
    }
    Ok(out)
}

/// Broadcasts the `1×d` adjoint to every real row; padding rows get 0.
pub fn masked_row_sum_backward(dy: &Matrix, mask: &Mask) -> Result<Matrix> {
    if dy.rows() != 1 {
        return Err(NumericsError::Shape {
            op: "masked_row_sum_backward",
            left: dy.shape(),
            right: (1, dy.cols()),
        });
    }
    let mut out = Matrix::zeros(mask.len(), dy.cols());
    for i in 0..mask.valid() {
        out.row_mut(i).copy_from_slice(dy.as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.max_abs_diff(b).is_some_and(|d| d <= tol)
    }

    #[test]
    fn affine_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let id = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let zero_b = Matrix::row_vector(&[0.0, 0.0]);
        assert_eq!(affine(&x, &id, &zero_b).unwrap(), x);

        let zero_w = Matrix::zeros(2, 2);
        let b = Matrix::row_vector(&[3.0, 4.0]);
        assert_eq!(
            affine(&x, &zero_w, &b).unwrap(),
            Matrix::from_rows(&[[3.0, 4.0]])
        );

        // 1*2 + 1*4 + 1 = 7, 1*3 + 1*5 + 1 = 9
        let x = Matrix::from_rows(&[[1.0, 1.0]]);
        let w = Matrix::from_rows(&[[2.0, 3.0], [4.0, 5.0]]);
        let b = Matrix::row_vector(&[1.0, 1.0]);
        assert_eq!(
            affine(&x, &w, &b).unwrap(),
            Matrix::from_rows(&[[7.0, 9.0]])
        );
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let x = Matrix::zeros(1, 3);
        let w = Matrix::zeros(2, 2);
        let err = affine(&x, &w, &Matrix::zeros(1, 2)).unwrap_err();
        assert_eq!(
            err,
            NumericsError::Shape {
                op: "affine",
                left: (1, 3),
                right: (2, 2)
            }
        );
        assert!(err.to_string().contains("(1, 3)") && err.to_string().contains("(2, 2)"));
    }

    #[test]
    fn relu_examples() {
        let x = Matrix::row_vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x), Matrix::row_vector(&[0.0, 0.0, 2.0]));
        let pos = Matrix::row_vector(&[0.5, 3.0]);
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(
            &Matrix::row_vector(&[-1.0, 2.0]),
            &Matrix::row_vector(&[5.0, 5.0]),
        );
        assert_eq!(g.unwrap(), Matrix::row_vector(&[0.0, 5.0]));
        // subgradient at exactly zero is zero
        let g0 = relu_backward(&Matrix::row_vector(&[0.0]), &Matrix::row_vector(&[1.0]));
        assert_eq!(g0.unwrap(), Matrix::row_vector(&[0.0]));
    }

    #[test]
    fn softmax_examples() {
        let full3 = Mask::full(3).unwrap();
        let y = masked_softmax_rows(&Matrix::row_vector(&[1.0, 1.0, 1.0]), &full3).unwrap();
        assert!(close(&y, &Matrix::row_vector(&[1.0 / 3.0; 3]), 1e-15));

        let full2 = Mask::full(2).unwrap();
        let y = masked_softmax_rows(&Matrix::row_vector(&[0.0, 2f64.ln()]), &full2).unwrap();
        assert!(close(
            &y,
            &Matrix::row_vector(&[1.0 / 3.0, 2.0 / 3.0]),
            1e-15
        ));

        let first = Mask::prefix(1, 2).unwrap();
        let y = masked_softmax_rows(&Matrix::row_vector(&[5.0, 100.0]), &first).unwrap();
        assert_eq!(y, Matrix::row_vector(&[1.0, 0.0]));
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let y = masked_softmax_rows(
            &Matrix::row_vector(&[1000.0, 999.0]),
            &Mask::full(2).unwrap(),
        )
        .unwrap();
        assert!(y.is_finite());
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_wrong_mask_length() {
        let e = Matrix::zeros(1, 3);
        assert!(matches!(
            masked_softmax_rows(&e, &Mask::full(2).unwrap()),
            Err(NumericsError::MaskLength { .. })
        ));
    }

    #[test]
    fn concat_examples() {
        let a = Matrix::from_rows(&[[1.0]]);
        let b = Matrix::from_rows(&[[2.0]]);
        assert_eq!(
            concat_cols(&a, &b).unwrap(),
            Matrix::from_rows(&[[1.0, 2.0]])
        );
        let a = Matrix::from_rows(&[[1.0, 2.0]]);
        let b = Matrix::from_rows(&[[3.0]]);
        assert_eq!(
            concat_cols(&a, &b).unwrap(),
            Matrix::from_rows(&[[1.0, 2.0, 3.0]])
        );
        let adj = Matrix::from_rows(&[[7.0, 8.0, 9.0]]);
        let (l, r) = split_cols(&adj, 2).unwrap();
        assert_eq!(l, Matrix::from_rows(&[[7.0, 8.0]]));
        assert_eq!(r, Matrix::from_rows(&[[9.0]]));
        assert!(concat_cols(&Matrix::zeros(1, 1), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn masked_row_sum_examples() {
        let v = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(
            masked_row_sum(&v, &Mask::full(2).unwrap()).unwrap(),
            Matrix::row_vector(&[4.0, 6.0])
        );
        let v = Matrix::from_rows(&[[1.0, 2.0], [9.0, 9.0]]);
        assert_eq!(
            masked_row_sum(&v, &Mask::prefix(1, 2).unwrap()).unwrap(),
            Matrix::row_vector(&[1.0, 2.0])
        );
        let one = Matrix::from_rows(&[[5.0, -1.0]]);
        assert_eq!(masked_row_sum(&one, &Mask::full(1).unwrap()).unwrap(), one);
    }

    #[test]
    fn masked_row_sum_backward_zeroes_padding() {
        let g = masked_row_sum_backward(
            &Matrix::row_vector(&[1.5, -2.0]),
            &Mask::prefix(2, 4).unwrap(),
        )
        .unwrap();
        assert_eq!(g.row(0), &[1.5, -2.0]);
        assert_eq!(g.row(1), &[1.5, -2.0]);
        assert!(g.row(2).iter().chain(g.row(3)).all(|&v| v == 0.0));
    }

    #[test]
    fn pooled_matmul_matches_sequential_bitwise() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::gaussian(17, 9, 1.0, &mut rng);
        let b = Matrix::gaussian(9, 13, 1.0, &mut rng);
        let pool = Exec::with_workers(3);
        assert_eq!(matmul(&a, &b).unwrap(), matmul_in(&pool, &a, &b).unwrap());
        let bt = b.transpose();
        assert_eq!(
            matmul_nt(&a, &bt).unwrap(),
            matmul_nt_in(&pool, &a, &bt).unwrap()
        );
    }

    #[test]
    fn blocked_dot_matches_plain_dot_bitwise() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in [1, 3, 4, 7, 8, 13] {
            let a = Matrix::gaussian(2, n, 1.0, &mut rng);
            let b = Matrix::gaussian(11, n, 1.0, &mut rng);
            let c = matmul_nt(&a, &b).unwrap();
            for i in 0..2 {
                for j in 0..11 {
                    assert_eq!(c.get(i, j), dot(a.row(i), b.row(j)));
                }
            }
        }
    }

    #[test]
    fn matmul_tn_acc_adds_to_existing_values() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let b = Matrix::from_rows(&[vec![1.0], vec![4.0]]);
        let mut out = Matrix::from_rows(&[vec![10.0], vec![20.0]]);
        matmul_tn_acc(&a, &b, &mut out).unwrap();
        assert_eq!(out.as_slice(), &[11.0, 34.0]);
        assert!(matmul_tn_acc(&a, &b, &mut Matrix::zeros(1, 1)).is_err());
    }
}
