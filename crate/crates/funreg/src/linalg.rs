//! Thin wrappers around the LAPACK-backed routines used across the crate.

use crate::error::{FunRegError, Result};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, Eigh, SVD, UPLO};

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn eigh_ascending(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let sym = symmetrize(a);
    let (vals, vecs) = sym.eigh(UPLO::Lower)?;
    Ok((vals, vecs))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &Array2<f64>) -> Result<Array1<f64>> {
    use ndarray_linalg::EigValsh;
    let sym = symmetrize(a);
    Ok(sym.eigvalsh(UPLO::Lower)?)
}

/// Average a matrix with its transpose.
pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    0.5 * (a + &a.t())
}

/// Inverse square root of a symmetric positive definite matrix.
///
/// Eigenvalues below `rel_floor * lambda_max` are rejected as singular.
pub fn inv_sqrt_spd(a: &Array2<f64>, rel_floor: f64) -> Result<Array2<f64>> {
    let (vals, vecs) = eigh_ascending(a)?;
    let vmax = vals[vals.len() - 1];
    if !(vmax > 0.0) {
        return Err(FunRegError::SingularCovarianceForm);
    }
    if vals[0] <= rel_floor * vmax {
        return Err(FunRegError::SingularCovarianceForm);
    }
    let scaled = &vecs * &vals.mapv(|v| v.powf(-0.25));
    Ok(scaled.dot(&scaled.t()))
}

/// Lower Cholesky factor; `None` when the matrix is not positive definite.
pub fn cholesky_lower(a: &Array2<f64>) -> Option<Array2<f64>> {
    symmetrize(a).cholesky(UPLO::Lower).ok()
}

/// Thin singular value decomposition `(u, s, vt)`.
pub fn svd_thin(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (u, s, vt) = a.svd(true, true)?;
    let u = u.ok_or_else(|| FunRegError::Linalg("SVD returned no U factor".into()))?;
    let vt = vt.ok_or_else(|| FunRegError::Linalg("SVD returned no Vt factor".into()))?;
    // LAPACK gesvd already returns full/thin depending on shape; trim to min dim.
    let r = s.len();
    Ok((
        u.slice(ndarray::s![.., ..r]).to_owned(),
        s,
        vt.slice(ndarray::s![..r, ..]).to_owned(),
    ))
}

/// Singular values only, descending.
pub fn singular_values(a: &Array2<f64>) -> Result<Array1<f64>> {
    let (_, s, _) = a.svd(false, false).map(|(_, s, _)| ((), s, ()))?;
    Ok(s)
}

/// Solve a symmetric positive (semi-)definite system by Cholesky with a
/// small diagonal escalation on failure.
pub fn solve_spd(a: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if rhs.len() != n {
        return Err(FunRegError::DimensionMismatch(format!(
            "solve_spd: matrix {n}x{n} vs rhs {}",
            rhs.len()
        )));
    }
    let scale = a.diag().iter().fold(0.0f64, |m, &d| m.max(d.abs())).max(1.0);
    for &jitter in &[0.0, 1e-14, 1e-12, 1e-10] {
        let mut m = symmetrize(a);
        if jitter > 0.0 {
            for i in 0..n {
                m[[i, i]] += jitter * scale;
            }
        }
        if let Some(l) = cholesky_lower(&m) {
            return Ok(chol_solve(&l, rhs));
        }
    }
    Err(FunRegError::SingularSystem)
}

/// Forward/back substitution with a lower Cholesky factor.
pub fn chol_solve(l: &Array2<f64>, rhs: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = rhs.to_owned();
    for i in 0..n {
        let mut s = y[i];
        for j in 0..i {
            s -= l[[i, j]] * y[j];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= l[[j, i]] * y[j];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Least-squares slope and intercept of y on x with the slope's standard error.
pub fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (x.len().max(3) - 2) as f64;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let r = v - intercept - slope * u;
            r * r
        })
        .sum();
    let se = (rss / dof / sxx).sqrt();
    (slope, intercept, se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn inv_sqrt_spd_roundtrip() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let s = inv_sqrt_spd(&a, 1e-14).unwrap();
        let ident = s.dot(&a).dot(&s);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ident[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chol_solve_matches_direct() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let rhs = array![1.0, -2.0, 0.5];
        let x = solve_spd(&a, &rhs).unwrap();
        let back = a.dot(&x);
        for i in 0..3 {
            assert!((back[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_line_exact_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (slope, intercept, se) = ols_line(&x, &y);
        assert!((slope - 2.5).abs() < 1e-12);
        assert!((intercept + 1.0).abs() < 1e-12);
        assert!(se < 1e-12);
    }
}
