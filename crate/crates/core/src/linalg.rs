//! Dense symmetric positive definite helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
/// The result is symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = cholesky(m, what)?;
    Ok(symmetrize(chol.inverse()))
}

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd(what));
    }
    Cholesky::new(m.clone()).ok_or(Error::NotSpd(what))
}

pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `(L Lᵀ)⁻¹` for a lower-triangular `l` with positive diagonal.
pub fn inverse_from_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("nonsingular triangular factor");
    symmetrize(l_inv.transpose() * l_inv)
}

/// In-place rank-one update (`sign = +1`) or downdate (`sign = -1`) of a
/// lower-triangular Cholesky factor: afterwards `L Lᵀ = L₀ L₀ᵀ + sign·v vᵀ`.
/// `v` is consumed as workspace. Fails (leaving `l` partially modified) if a
/// downdate would lose positive definiteness.
pub fn chol_rank_one(l: &mut DMatrix<f64>, mut v: DVector<f64>, sign: f64) -> Result<()> {
    let n = l.nrows();
    for j in 0..n {
        let ljj = l[(j, j)];
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let arg = ljj * ljj + sign * vj * vj;
        if !(arg > 0.0) || !arg.is_finite() {
            return Err(Error::NotSpd("rank-one downdate"));
        }
        let r = arg.sqrt();
        let c = r / ljj;
        let s = vj / ljj;
        l[(j, j)] = r;
        for i in (j + 1)..n {
            l[(i, j)] = (l[(i, j)] + sign * s * v[i]) / c;
            v[i] = c * v[i] - s * l[(i, j)];
        }
    }
    Ok(())
}

/// Quadratic forms `c_iᵀ Σ c_i` for every row `c_i` of `c`.
pub fn row_quadratic_forms(c: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    let cs = c * sigma;
    DVector::from_iterator(c.nrows(), (0..c.nrows()).map(|i| cs.row(i).dot(&c.row(i))))
}

/// `Cᵀ diag(weights) C`.
pub fn weighted_gram(c: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = c.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    symmetrize(c.transpose() * scaled)
}
