//! Small dense linear solves shared by the fitters: ridge-regularized
//! symmetric systems with a minimal-norm fallback for ill-conditioned cases.

use nalgebra::{DMatrix, DVector};

use crate::error::{OpeError, Result};

/// Relative ridge added to the diagonal before solving.
pub const SOLVE_RIDGE: f64 = 1e-8;
/// Condition-number threshold beyond which the minimal-norm pseudo-solution
/// is used instead of the plain solve.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
pub struct SolveDiagnostics {
    /// `sigma_max / sigma_min` of the ridged matrix.
    pub condition: f64,
    /// True when the minimal-norm fallback produced the solution.
    pub used_fallback: bool,
}

/// Solves the symmetric PSD system `A x = b` with a relative ridge
/// `SOLVE_RIDGE * trace(A)/dim` on the diagonal. When the raw system's
/// condition number exceeds [`CONDITION_LIMIT`], the near-null directions are
/// truncated instead, which yields the minimal-norm pseudo-solution.
pub fn solve_ridge_sym(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, SolveDiagnostics)> {
    let dim = a.nrows();
    if dim == 0 {
        return Ok((
            DVector::zeros(0),
            SolveDiagnostics {
                condition: 1.0,
                used_fallback: false,
            },
        ));
    }
    let trace: f64 = (0..dim).map(|j| a[(j, j)]).sum();
    let ridge = SOLVE_RIDGE * (trace / dim as f64).max(f64::MIN_POSITIVE);

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !smax.is_finite() || smax <= 0.0 {
        return Err(OpeError::SingularSystem);
    }
    let condition = smax / smin.max(f64::MIN_POSITIVE);
    let used_fallback = !condition.is_finite() || condition > CONDITION_LIMIT;

    // One SVD serves both paths: A is symmetric PSD, so shifting every kept
    // singular value by the ridge solves the ridged system.
    let u = svd.u.as_ref().ok_or(OpeError::SingularSystem)?;
    let v_t = svd.v_t.as_ref().ok_or(OpeError::SingularSystem)?;
    let mut coeffs = u.transpose() * b;
    for (i, c) in coeffs.iter_mut().enumerate() {
        let sigma = svd.singular_values[i];
        *c = if used_fallback {
            if sigma > smax * 1e-12 {
                *c / sigma
            } else {
                0.0
            }
        } else {
            *c / (sigma + ridge)
        };
    }
    let x = v_t.transpose() * coeffs;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OpeError::SingularSystem);
    }
    Ok((
        x,
        SolveDiagnostics {
            condition,
            used_fallback,
        },
    ))
}
