//! Small dense Hermitian solves for the least-squares gain fits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Below this reciprocal condition number the normal equations are treated
/// as singular.
pub const MIN_RCOND: f64 = 1e-10;

/// Solves `G x = b` for a Hermitian positive (semi)definite Gram matrix `G`.
///
/// `gram` is row-major `L x L`. Fails with [`Error::IllConditioned`] when the
/// eigenvalue spread of `G` exceeds `1 / MIN_RCOND`.
pub fn solve_gram(gram: &[Complex64], rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let l = rhs.len();
    if gram.len() != l * l {
        return Err(Error::DimensionMismatch {
            expected: format!("{l}x{l} Gram matrix"),
            found: format!("{} entries", gram.len()),
        });
    }
    if l == 0 {
        return Ok(Vec::new());
    }
    let g = DMatrix::from_row_slice(l, l, gram);
    let eig = g.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if !(rcond >= MIN_RCOND) {
        return Err(Error::IllConditioned { rcond });
    }
    let chol = g
        .cholesky()
        .ok_or(Error::IllConditioned { rcond })?;
    let x = chol.solve(&DVector::from_column_slice(rhs));
    Ok(x.iter().copied().collect())
}

/// `sum_i conj(a_i) b_i`.
#[inline]
pub fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
