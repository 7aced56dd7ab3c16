//! Pseudo-inverse for tall complex matrices via the Gram system.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

/// Relative pivot threshold below which the Gram matrix is declared singular.
const PIVOT_REL_TOL: f64 = 1e-12;

/// Right pseudo-inverse `H (H^H H)^{-1}` of a tall matrix `H` (rows >= cols).
///
/// The K x K Gram matrix is inverted by Gaussian elimination with partial
/// pivoting; a pivot smaller than `1e-12` times the largest Gram entry is
/// reported as a singularity.
pub fn hermitian_solve_pinv(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    if h.rows() < h.cols() {
        return Err(Error::Shape(format!(
            "pseudo-inverse needs rows >= cols, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let gram = h.hermitian().matmul(h)?;
    let inv = invert_in_place(gram)?;
    h.matmul(&inv)
}

/// Invert a square complex matrix by row reduction of `[A | I]`.
fn invert_in_place(a: ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let pivot_floor = PIVOT_REL_TOL * a.max_abs();

    let mut work = a;
    let mut inv = ComplexMatrix::identity(n);

    for col in 0..n {
        // Partial pivoting on the remaining rows.
        let mut pivot_row = col;
        let mut pivot_mag = work.get(col, col).norm();
        for r in col + 1..n {
            let mag = work.get(r, col).norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag < pivot_floor || pivot_mag == 0.0 {
            return Err(Error::Singular(format!(
                "pivot {pivot_mag:.3e} below threshold in column {col}"
            )));
        }
        if pivot_row != col {
            swap_rows(&mut work, col, pivot_row);
            swap_rows(&mut inv, col, pivot_row);
        }

        let pivot = work.get(col, col);
        for c in 0..n {
            work.set(col, c, work.get(col, c) / pivot);
            inv.set(col, c, inv.get(col, c) / pivot);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work.get(r, col);
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..n {
                let w = work.get(r, c) - factor * work.get(col, c);
                work.set(r, c, w);
                let v = inv.get(r, c) - factor * inv.get(col, c);
                inv.set(r, c, v);
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut ComplexMatrix, a: usize, b: usize) {
    for c in 0..m.cols() {
        let tmp = m.get(a, c);
        m.set(a, c, m.get(b, c));
        m.set(b, c, tmp);
    }
}
