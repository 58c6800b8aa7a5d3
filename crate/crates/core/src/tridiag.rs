//! Thomas algorithm for tridiagonal systems.

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals. `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, Default)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Weak diagonal dominance by rows or by columns, with at least one strict
    /// inequality. Either is sufficient for a breakdown-free Thomas sweep.
    pub fn check_diagonally_dominant(&self) -> Result<()> {
        let n = self.len();
        let off_row = |i: usize| {
            let l = if i > 0 { self.lower[i].abs() } else { 0.0 };
            let u = if i + 1 < n { self.upper[i].abs() } else { 0.0 };
            l + u
        };
        let off_col = |j: usize| {
            let u = if j > 0 { self.upper[j - 1].abs() } else { 0.0 };
            let l = if j + 1 < n { self.lower[j + 1].abs() } else { 0.0 };
            u + l
        };
        let scan = |off: &dyn Fn(usize) -> f64| -> std::result::Result<(), usize> {
            let mut strict = false;
            for i in 0..n {
                let d = self.diag[i].abs();
                let o = off(i);
                if d < o {
                    return Err(i);
                }
                strict |= d > o;
            }
            if strict {
                Ok(())
            } else {
                Err(0)
            }
        };
        match scan(&off_row) {
            Ok(()) => Ok(()),
            Err(row) => scan(&off_col).map_err(|_| Error::NotDiagonallyDominant { row }),
        }
    }

    /// Solves `A x = rhs` in place, using `scratch` for the modified upper diagonal.
    pub fn solve_in_place(&self, rhs: &mut [f64], scratch: &mut Vec<f64>) -> Result<()> {
        let n = self.len();
        assert_eq!(rhs.len(), n, "rhs length mismatch");
        if n == 0 {
            return Ok(());
        }
        scratch.clear();
        scratch.resize(n, 0.0);
        let mut denom = self.diag[0];
        if denom == 0.0 {
            return Err(Error::NotDiagonallyDominant { row: 0 });
        }
        scratch[0] = if n > 1 { self.upper[0] / denom } else { 0.0 };
        rhs[0] /= denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i] * scratch[i - 1];
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::NotDiagonallyDominant { row: i });
            }
            if i + 1 < n {
                scratch[i] = self.upper[i] / denom;
            }
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= scratch[i] * rhs[i + 1];
        }
        Ok(())
    }
}
