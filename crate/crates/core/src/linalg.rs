//! Small dense linear-algebra helpers shared by the table and system builders.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for "an eigenvalue sits at the target".
const EIG_MATCH_TOL: f64 = 1e-8;
/// Two eigenvalues closer than this count as one repeated eigenvalue.
const EIG_MULTIPLICITY_TOL: f64 = 1e-7;

/// Eigenvector of `a` for the eigenvalue `target` by shifted inverse iteration.
///
/// The start vector is all ones so the result is reproducible. The returned
/// vector has unit Euclidean norm; sign and scale are left to the caller.
pub fn eigenvector_at(a: &DMatrix<f64>, target: f64) -> Result<DVector<f64>> {
    let n = a.nrows();
    let eigs = a.complex_eigenvalues();
    let mut closest = f64::INFINITY;
    let mut closest_val = f64::NAN;
    let mut multiplicity = 0;
    for z in eigs.iter() {
        let dist = ((z.re - target).powi(2) + z.im.powi(2)).sqrt();
        if dist < closest {
            closest = dist;
            closest_val = z.re;
        }
        if dist < EIG_MULTIPLICITY_TOL.max(EIG_MATCH_TOL) {
            multiplicity += 1;
        }
    }
    if closest > EIG_MATCH_TOL {
        return Err(Error::EigenvalueMissing {
            target,
            closest: closest_val,
        });
    }
    if multiplicity > 1 {
        return Err(Error::DegenerateEigenspace {
            target,
            multiplicity,
        });
    }

    let shift = target + 1e-10 * target.abs().max(1.0);
    let shifted = a - DMatrix::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = DVector::from_element(n, 1.0);
    v /= v.norm();
    for _ in 0..100 {
        let mut w = lu
            .solve(&v)
            .ok_or_else(|| Error::SingularSystem("inverse iteration shift".into()))?;
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::SingularSystem("inverse iteration diverged".into()));
        }
        w /= norm;
        // align sign with the previous iterate before measuring the change
        if w.dot(&v) < 0.0 {
            w.neg_mut();
        }
        let change = (&w - &v).amax();
        v = w;
        if change < 1e-15 {
            break;
        }
    }
    Ok(v)
}

/// Least-squares solution of a consistent (possibly overdetermined) system.
///
/// Fails with `SingularSystem` when the matrix loses column rank or the
/// residual exceeds `resid_tol * (1 + |b|_inf)`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, resid_tol: f64) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if rcond < 1e-13 {
        return Err(Error::SingularSystem(format!(
            "rank deficient, sigma_min/sigma_max = {rcond:.3e}"
        )));
    }
    let mut x = svd
        .solve(b, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    // two rounds of iterative refinement
    for _ in 0..2 {
        let r = b - a * &x;
        if let Ok(dx) = svd.solve(&r, 0.0) {
            x += dx;
        }
    }
    let resid = (a * &x - b).amax();
    if resid > resid_tol * (1.0 + b.amax()) {
        return Err(Error::SingularSystem(format!(
            "residual {resid:.3e} above tolerance (cond {:.3e})",
            1.0 / rcond
        )));
    }
    Ok(x)
}

/// Solve a square system by LU with partial pivoting and verify the residual.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>, resid_tol: f64) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} system with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularMatrix("zero pivot in LU".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMatrix("non-finite solution".into()));
    }
    let resid = (a * &x - b).amax();
    if resid > resid_tol * (1.0 + b.amax()) {
        return Err(Error::SingularMatrix(format!(
            "residual {resid:.3e} exceeds tolerance"
        )));
    }
    Ok(x)
}
