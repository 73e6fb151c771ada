//! Small dense linear-algebra helpers shared across the crate.
//!
//! The Cholesky routines are hand-rolled so that factorization failures can
//! report the offending pivot and so that positive *semi*-definite inputs
//! (zero input covariances, rank-deficient pose covariances) factor cleanly.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};

use crate::error::{Error, Result};

/// Strict lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix. Fails with the minimum pivot encountered when the matrix is not
/// numerically positive definite.
pub fn cholesky_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::IllConditioned { min_pivot: d });
        }
        let lj = d.sqrt();
        l[(j, j)] = lj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / lj;
        }
    }
    Ok(l)
}

/// Solve L x = b with L lower triangular.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve L^T x = b with L lower triangular.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve (L L^T) x = b.
pub fn solve_cholesky(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

fn psd_pivot_tolerance(max_diag: f64) -> f64 {
    1e-12 * max_diag.max(1.0)
}

/// Lower-triangular factor L with L L^T = a for a symmetric positive
/// *semi*-definite 2x2 matrix. Pivots within tolerance of zero produce a zero
/// column; genuinely negative pivots are an error.
pub fn psd_factor2(a: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let tol = psd_pivot_tolerance(a[(0, 0)].abs().max(a[(1, 1)].abs()));
    let mut l = Matrix2::zeros();
    let d0 = a[(0, 0)];
    if d0 < -tol || !d0.is_finite() {
        return Err(Error::IllConditioned { min_pivot: d0 });
    }
    if d0 > tol {
        l[(0, 0)] = d0.sqrt();
        l[(1, 0)] = a[(1, 0)] / l[(0, 0)];
    }
    let d1 = a[(1, 1)] - l[(1, 0)] * l[(1, 0)];
    if d1 < -tol || !d1.is_finite() {
        return Err(Error::IllConditioned { min_pivot: d1 });
    }
    if d1 > tol {
        l[(1, 1)] = d1.sqrt();
    }
    Ok(l)
}

/// 3x3 analogue of [`psd_factor2`].
pub fn psd_factor3(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let tol = psd_pivot_tolerance(
        a[(0, 0)].abs().max(a[(1, 1)].abs()).max(a[(2, 2)].abs()),
    );
    let mut l = Matrix3::zeros();
    for j in 0..3 {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol || !d.is_finite() {
            return Err(Error::IllConditioned { min_pivot: d });
        }
        if d > tol {
            l[(j, j)] = d.sqrt();
            for i in (j + 1)..3 {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Smallest eigenvalue of a symmetric 2x2 matrix (closed form).
pub fn min_eig2(a: &Matrix2<f64>) -> f64 {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    0.5 * (tr - disc)
}

/// Clamp a symmetric 2x2 matrix to the PSD cone by clipping negative
/// eigenvalues to zero.
pub fn clamp_psd2(a: &Matrix2<f64>) -> Matrix2<f64> {
    let sym = 0.5 * (a + a.transpose());
    if min_eig2(&sym) >= 0.0 {
        return sym;
    }
    let eig = nalgebra::SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose()
}
