use nalgebra::{DMatrix, DVector};

use super::{NumoptError, Result};

/// Minimizes `‖design·β − y‖₂` through a singular value decomposition.
///
/// Singular values below `max(n, p)·ε·σ_max` are treated as zero, so a
/// rank-deficient design yields the minimum-norm minimizer.
pub fn linear_least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if design.nrows() != y.len() {
        return Err(NumoptError::DimensionMismatch(format!(
            "design has {} rows, target has {}",
            design.nrows(),
            y.len()
        )));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(NumoptError::NonFinite("design matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NumoptError::NonFinite("target vector"));
    }
    let p = design.ncols();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    if design.nrows() == 0 {
        return Ok(DVector::zeros(p));
    }

    let svd = design.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = (design.nrows().max(p) as f64) * f64::EPSILON * sigma_max;
    let beta = svd
        .solve(y, eps)
        .map_err(|e| NumoptError::DimensionMismatch(e.to_string()))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(NumoptError::NonFinite("least-squares solution"));
    }
    Ok(beta)
}
