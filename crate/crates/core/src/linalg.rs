//! Dense linear algebra helpers on top of `faer`.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Relative jitter added before the first factorization attempt.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of `A + jitter * I`.
pub struct JitteredCholesky {
    llt: Llt<f64>,
    /// Absolute jitter that was added to the diagonal.
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn l(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Solves `(A + jitter I) X = B` in place.
    pub fn solve_in_place(&self, rhs: &mut Mat<f64>) {
        self.llt.solve_in_place(rhs.as_mut());
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = col_mat(rhs);
        self.solve_in_place(&mut b);
        b.col_as_slice(0).to_vec()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    /// `log det (A + jitter I)`.
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

pub fn mean_diagonal(a: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64
}

/// Factorizes a symmetric positive semi-definite matrix, adding
/// `1e-10 * mean(diag)` to the diagonal and escalating by a factor of ten up
/// to `1e-4 * mean(diag)` until the factorization succeeds.
pub fn cholesky_jittered(a: MatRef<'_, f64>) -> Result<JitteredCholesky> {
    cholesky_jittered_scaled(a, mean_diagonal(a))
}

/// As [`cholesky_jittered`] with the jitter measured against `scale` instead
/// of the mean diagonal.
pub fn cholesky_jittered_scaled(a: MatRef<'_, f64>, scale: f64) -> Result<JitteredCholesky> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if !scale.is_finite() || (n > 0 && scale <= 0.0) {
        return Err(Error::Conditioning(format!(
            "mean diagonal is {scale}, matrix is not positive definite"
        )));
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = a.to_owned();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Ok(llt) = m.llt(Side::Lower) {
            return Ok(JitteredCholesky { llt, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Conditioning(format!(
        "{n}x{n} matrix not positive definite with jitter {:.1e}",
        JITTER_MAX * scale
    )))
}

/// A single-column matrix holding `v`.
pub fn col_mat(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Selects the given rows of `a`.
pub fn select_rows(a: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Copies a row of `a` into a vector.
pub fn row_vec(a: MatRef<'_, f64>, i: usize) -> Vec<f64> {
    (0..a.ncols()).map(|j| a[(i, j)]).collect()
}

/// `[1, X]`.
pub fn with_intercept(x: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Solves the symmetric positive definite system `A x = b` without jitter,
/// reporting a rank-deficiency error when a pivot collapses.
pub fn solve_spd(a: MatRef<'_, f64>, b: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let llt = a
        .to_owned()
        .llt(Side::Lower)
        .map_err(|_| Error::RankDeficient(what.to_string()))?;
    let l = llt.L();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if n > 0 && min_pivot <= 1e-12 * max_diag {
        return Err(Error::RankDeficient(what.to_string()));
    }
    let mut rhs = col_mat(b);
    llt.solve_in_place(rhs.as_mut());
    Ok(rhs.col_as_slice(0).to_vec())
}

/// Inverse of a symmetric positive definite matrix (small systems only).
pub fn inverse_spd(a: MatRef<'_, f64>, what: &str) -> Result<Mat<f64>> {
    let llt = a
        .to_owned()
        .llt(Side::Lower)
        .map_err(|_| Error::RankDeficient(what.to_string()))?;
    Ok(llt.inverse())
}

/// Ordinary least squares via the normal equations.
pub fn least_squares(z: MatRef<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    let ztz = z.transpose() * z;
    let zty: Vec<f64> = (0..z.ncols())
        .map(|j| (0..z.nrows()).map(|i| z[(i, j)] * y[i]).sum())
        .collect();
    solve_spd(ztz.as_ref(), &zty, "least-squares normal equations are singular")
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: MatRef<'_, f64>) -> f64 {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map(|ev| ev.into_iter().fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN)
}
