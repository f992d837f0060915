//! Small dense real matrices and symmetric positive-definite factorization.
//!
//! Everything in this crate works on systems of at most a few dozen rows
//! (users and chips per channel use), so the plain O(n³) algorithms are the
//! right tool. No pivoting is used: every matrix factorized here is symmetric
//! and positive-definite by construction, and a nonpositive pivot is a
//! meaningful error reported to the caller rather than a numerical accident.

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// An all-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be nonzero");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from rows; panics unless all rows have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "matrix must have at least one row");
        let cols = rows[0].len();
        assert!(cols > 0, "matrix must have at least one column");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(i < self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Largest absolute entrywise difference against another matrix of the
    /// same shape. Convenient for closeness assertions in tests.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Computes the lower-triangular `L` with `L·Lᵀ = A` for symmetric
/// positive-definite `A`. On failure returns the column index and value of
/// the first nonpositive pivot.
pub(crate) fn cholesky_lower(a: &Matrix) -> Result<Matrix, (usize, f64)> {
    assert_eq!(a.rows(), a.cols(), "cholesky needs a square matrix");
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err((j, pivot));
        }
        let ljj = pivot.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `L·Lᵀ·x = b` by forward and back substitution given the lower
/// factor `L` from [`cholesky_lower`].
pub(crate) fn solve_cholesky(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    assert_eq!(b.len(), n, "right-hand side length must match");
    // Forward: L·y = b.
    let mut x = b.to_vec();
    for i in 0..n {
        let row = l.row(i);
        let mut s = x[i];
        for k in 0..i {
            s -= row[k] * x[k];
        }
        x[i] = s / row[i];
    }
    // Back: Lᵀ·x = y.
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_3x3() -> Matrix {
        // B·Bᵀ + I for an arbitrary B is symmetric positive-definite.
        Matrix::from_rows(&[
            vec![5.0, 2.0, 1.0],
            vec![2.0, 3.0, 0.5],
            vec![1.0, 0.5, 2.0],
        ])
    }

    #[test]
    fn factor_reconstructs_the_input() {
        let a = spd_3x3();
        let l = cholesky_lower(&a).unwrap();
        let n = a.rows();
        let mut rebuilt = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += l.get(i, k) * l.get(j, k);
                }
                rebuilt.set(i, j, s);
            }
        }
        assert!(a.max_abs_diff(&rebuilt) < 1e-12);
        // Strictly lower-triangular with positive diagonal.
        for i in 0..n {
            assert!(l.get(i, i) > 0.0);
            for j in (i + 1)..n {
                assert_eq!(l.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn indefinite_input_reports_the_failing_column() {
        // Leading 2x2 block is fine; the full matrix has a negative
        // eigenvalue direction that surfaces as a nonpositive pivot at
        // column 2.
        let a = Matrix::from_rows(&[
            vec![4.0, 0.0, 3.0],
            vec![0.0, 1.0, 0.0],
            vec![3.0, 0.0, 2.0],
        ]);
        match cholesky_lower(&a) {
            Err((col, pivot)) => {
                assert_eq!(col, 2);
                assert!(pivot <= 0.0);
            }
            Ok(_) => panic!("indefinite matrix must not factor"),
        }
    }

    #[test]
    fn solve_round_trips_a_known_system() {
        let a = spd_3x3();
        let l = cholesky_lower(&a).unwrap();
        let x_true = [1.0, -2.0, 0.5];
        let mut b = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a.get(i, j) * x_true[j];
            }
        }
        let x = solve_cholesky(&l, &b);
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }
}
