//! Tridiagonal matrices and the Thomas algorithm.

use crate::error::{Error, Result};

/// Square tridiagonal matrix stored by diagonals.
///
/// `lower[i]` is entry `(i + 1, i)` and `upper[i]` is entry `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = diag.len();
        assert!(n >= 1, "empty tridiagonal matrix");
        assert_eq!(lower.len(), n - 1);
        assert_eq!(upper.len(), n - 1);
        Self { lower, diag, upper }
    }

    /// Constant-diagonal (Toeplitz) matrix of size `n`.
    pub fn toeplitz(n: usize, sub: f64, main: f64, sup: f64) -> Self {
        Self::new(vec![sub; n - 1], vec![main; n], vec![sup; n - 1])
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i == j + 1 {
            self.lower[j]
        } else if j == i + 1 {
            self.upper[i]
        } else {
            0.0
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Tridiagonal) -> Tridiagonal {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect();
        Tridiagonal::new(
            zip(&self.lower, &other.lower),
            zip(&self.diag, &other.diag),
            zip(&self.upper, &other.upper),
        )
    }

    /// `out = self * x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.size();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        if n == 1 {
            out[0] = self.diag[0] * x[0];
            return;
        }
        out[0] = self.diag[0] * x[0] + self.upper[0] * x[1];
        for i in 1..n - 1 {
            out[i] = self.lower[i - 1] * x[i - 1] + self.diag[i] * x[i] + self.upper[i] * x[i + 1];
        }
        out[n - 1] = self.lower[n - 2] * x[n - 2] + self.diag[n - 1] * x[n - 1];
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.apply_into(x, &mut out);
        out
    }

    /// Row sums, i.e. `self * 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.apply(&vec![1.0; self.size()])
    }

    /// Column sums, i.e. `1^T * self`.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = self.diag.clone();
        for i in 0..n - 1 {
            out[i] += self.lower[i];
            out[i + 1] += self.upper[i];
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(a, b)| a == b)
    }

    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        let n = self.size();
        (0..n).all(|i| {
            let mut off = 0.0;
            if i > 0 {
                off += self.lower[i - 1].abs();
            }
            if i + 1 < n {
                off += self.upper[i].abs();
            }
            self.diag[i].abs() > off
        })
    }

    pub fn factorize(&self) -> Result<ThomasFactor> {
        ThomasFactor::new(self)
    }

    /// One-shot solve of `self * x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.factorize()?.solve_in_place(&mut x);
        Ok(x)
    }
}

/// Forward-elimination coefficients of the Thomas algorithm, reusable across
/// right-hand sides. No pivoting.
#[derive(Debug, Clone)]
pub struct ThomasFactor {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl ThomasFactor {
    pub fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.size();
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n.saturating_sub(1)];
        let mut pivot = m.diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = m.diag[i] - m.lower[i - 1] * upper_scaled[i - 1];
            }
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular tridiagonal system at row {i}"
                )));
            }
            inv_pivot[i] = 1.0 / pivot;
            if i + 1 < n {
                upper_scaled[i] = m.upper[i] * inv_pivot[i];
            }
        }
        Ok(Self {
            lower: m.lower.clone(),
            inv_pivot,
            upper_scaled,
        })
    }

    pub fn size(&self) -> usize {
        self.inv_pivot.len()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.size();
        debug_assert_eq!(rhs.len(), n);
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i - 1] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_scaled[i] * rhs[i + 1];
        }
    }
}
