//! Thomas algorithm for symmetric tridiagonal systems.

use crate::error::{Error, Result};

/// Solves `A x = rhs` in place for symmetric tridiagonal `A` with main
/// diagonal `diag` and off-diagonal `off` (`off[i] = A[i][i+1] = A[i+1][i]`).
///
/// `diag` is overwritten with the eliminated pivots and `rhs` with the solution.
/// No pivoting is performed; the caller supplies a diagonally dominant matrix.
pub fn solve_symmetric(diag: &mut [f64], off: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            what: "tridiagonal rhs",
            got: rhs.len(),
            expected: n,
        });
    }
    if n == 0 {
        return Ok(());
    }
    if off.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            what: "tridiagonal off-diagonal",
            got: off.len(),
            expected: n - 1,
        });
    }
    for i in 1..n {
        if diag[i - 1] == 0.0 {
            return Err(Error::Domain(format!("zero pivot in row {}", i - 1)));
        }
        let m = off[i - 1] / diag[i - 1];
        diag[i] -= m * off[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    if diag[n - 1] == 0.0 {
        return Err(Error::Domain(format!("zero pivot in row {}", n - 1)));
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - off[i] * rhs[i + 1]) / diag[i];
    }
    Ok(())
}
