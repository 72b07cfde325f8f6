use super::{Matrix, NumericsError, Result};

/// A value together with its adjoint (the gradient of some scalar with
/// respect to it). Shapes always agree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    value: Matrix,
    adjoint: Matrix,
}

impl AdjointPair {
    /// A value with a zero adjoint.
    pub fn new(value: Matrix) -> Self {
        let adjoint = Matrix::zeros(value.rows(), value.cols());
        Self { value, adjoint }
    }

    pub fn with_adjoint(value: Matrix, adjoint: Matrix) -> Result<Self> {
        if value.shape() != adjoint.shape() {
            return Err(NumericsError::Shape {
                op: "adjoint_pair",
                left: value.shape(),
                right: adjoint.shape(),
            });
        }
        Ok(Self { value, adjoint })
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn adjoint(&self) -> &Matrix {
        &self.adjoint
    }

    pub fn accumulate(&mut self, delta: &Matrix) -> Result<()> {
        self.adjoint.add_assign(delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares the analytic adjoints stored in `params` against central
/// differences of `f` with step `eps`.
///
/// The error at each coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`; the report holds
/// the maximum over every coordinate of every tensor.
pub fn grad_check<F>(mut f: F, params: &[AdjointPair], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> f64,
{
    let mut values: Vec<Matrix> = params.iter().map(|p| p.value.clone()).collect();
    let base = f(&values);
    if !base.is_finite() {
        return Err(NumericsError::NonFinite(format!(
            "f at base point = {base}"
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (t, pair) in params.iter().enumerate() {
        for k in 0..pair.value.len() {
            let orig = values[t].as_slice()[k];
            values[t].as_mut_slice()[k] = orig + eps;
            let up = f(&values);
            values[t].as_mut_slice()[k] = orig - eps;
            let down = f(&values);
            values[t].as_mut_slice()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NumericsError::NonFinite(format!(
                    "f perturbed at tensor {t}, index {k}"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let analytic = pair.adjoint.as_slice()[k];
            let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((t, k));
            }
        }
    }
    Ok(report)
}
