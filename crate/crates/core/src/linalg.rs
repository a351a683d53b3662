//! Dense linear algebra used by the model updates.
//!
//! The SVD itself is nalgebra's Golub-Kahan implementation, which is
//! deterministic for a fixed input. Everything on top of it (pseudo-inverse,
//! Procrustes, least squares, Levinson-Durbin) lives here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative cutoff below which singular values count as zero.
pub const PINV_RCOND: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD `a = u * diag(s) * v^T` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }

    /// Number of singular values above `PINV_RCOND * s_max`.
    pub fn rank(&self) -> usize {
        let cutoff = PINV_RCOND * self.s.max();
        self.s.iter().filter(|&&s| s > cutoff).count()
    }
}

pub fn svd(a: &DMatrix<f64>) -> Result<SvdResult> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch(
            "svd input has non-finite entries".into(),
        ));
    }
    let (rows, cols) = a.shape();
    let decomposed = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::SvdNoConvergence { rows, cols })?;
    let u = decomposed.u.ok_or(Error::SvdNoConvergence { rows, cols })?;
    let v_t = decomposed
        .v_t
        .ok_or(Error::SvdNoConvergence { rows, cols })?;
    Ok(SvdResult {
        u,
        s: decomposed.singular_values,
        v: v_t.transpose(),
    })
}

/// Moore-Penrose pseudo-inverse with relative cutoff [`PINV_RCOND`].
pub fn pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let d = svd(a)?;
    let cutoff = PINV_RCOND * d.s.max();
    let inv_s =
        d.s.map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    Ok(&d.v * DMatrix::from_diagonal(&inv_s) * d.u.transpose())
}

/// Orthogonal Procrustes: the `Q` with orthonormal columns maximizing
/// `trace(Q^T m)`, i.e. `U V^T` from the thin SVD of `m`.
///
/// For rank-deficient `m` the SVD's own singular vectors complete the
/// subspace, so the result is still deterministic.
pub fn procrustes(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() < m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "procrustes needs rows >= cols, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let d = svd(m)?;
    Ok(&d.u * d.v.transpose())
}

/// Solves the Yule-Walker system `R a = r` with `R_ij = gamma_|i-j|` and
/// `r_i = gamma_i` by Levinson-Durbin recursion.
///
/// `gamma` holds `gamma_0..=gamma_p`; the result has length `p`.
pub fn solve_toeplitz(gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() < 2 {
        return Err(Error::DimensionMismatch(
            "need autocovariances up to lag p >= 1".into(),
        ));
    }
    let g0 = gamma[0];
    if g0.is_nan() || g0 <= 0.0 || gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::Singular(format!("gamma_0 = {g0} must be positive")));
    }
    let p = gamma.len() - 1;
    let floor = 1e-12 * g0;
    let mut a: Vec<f64> = Vec::with_capacity(p);
    let mut err = g0;
    for k in 1..=p {
        let acc: f64 = gamma[k]
            - a.iter()
                .enumerate()
                .map(|(j, aj)| aj * gamma[k - 1 - j])
                .sum::<f64>();
        let reflection = acc / err;
        let prev = a.clone();
        for j in 0..a.len() {
            a[j] = prev[j] - reflection * prev[k - 2 - j];
        }
        a.push(reflection);
        err *= 1.0 - reflection * reflection;
        if !err.is_finite() || err.abs() <= floor {
            return Err(Error::Singular(format!(
                "Toeplitz system is singular at order {k}"
            )));
        }
    }
    Ok(a)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "lstsq: a has {} rows but b has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    Ok(pinv(a)? * b)
}

/// Orthonormal basis of the column space of a tall matrix (thin QR).
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() < a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cannot orthonormalize {}x{} columns",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.clone().qr().q())
}

/// `||q^T q - I||_F`
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    (q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).norm()
}
