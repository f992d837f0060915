//! Rank-restoring transformation of the spreading correlation matrix.
//!
//! With more users than chips the Gram matrix `G = SᵀS` is singular, so no
//! whitening or decorrelating filter exists. The workaround implemented here
//! replaces the diagonal of `G` by a loading value `ρ` large enough that the
//! loaded matrix `G̃` is positive definite, and factors it as `G̃ = TᵀT`
//! with `T` *lower*-triangular. Writing the squared distance as
//!
//! ```text
//! ‖r − S·d‖² = ‖r‖² + Σₖ ( Re{yₖ·dₖ} + |Σ_{j≤k} t_{kj}·d_j|² + uₖ·|dₖ|² )
//! ```
//!
//! with `y = −2·rᴴS` (matched filter) and `uₖ = G_{kk} − ρ` makes the `k`-th
//! summand depend only on the symbols of users `1..k`, which is exactly the
//! structure a depth-first or breadth-first tree search needs. The loading
//! cancels between the `|·|²` and `uₖ` terms, so the sum is independent of
//! `ρ`; what `ρ` controls is how the total splits across depths.
//!
//! `ρ` is chosen from the constellation geometry as
//! `ρ = (K−1)·max_{a,b} [−Re{a*·b} / |a|²] + margin`, which both keeps `G̃`
//! diagonally dominant (every off-diagonal entry of `G` has magnitude at
//! most one) and keeps the per-depth summands from going far negative.

use num_complex::Complex64;

use crate::linalg::{cholesky_lower, Matrix};
use crate::model::{Constellation, SpreadingMatrix};
use crate::{Error, Result};

/// The correlation matrix `G = SᵀS` of the spreading columns.
pub fn gram_matrix(s: &SpreadingMatrix) -> Matrix {
    let k = s.users();
    let mut g = Matrix::zeros(k, k);
    for i in 0..k {
        let ci = s.column(i);
        for j in i..k {
            let cj = s.column(j);
            let dot: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            g.set(i, j, dot);
            g.set(j, i, dot);
        }
    }
    g
}

/// Diagonal loading value for `users` simultaneous transmissions of the
/// given constellation, with an additive safety `margin`.
///
/// The maximum is taken over all ordered symbol pairs; for antipodal (BPSK)
/// signalling it equals one, so `ρ = K − 1 + margin`.
pub fn choose_rho(users: usize, constellation: &Constellation, margin: f64) -> f64 {
    let syms = constellation.symbols();
    let mut worst = 0.0f64;
    for a in syms {
        for b in syms {
            let ratio = -(a.conj() * b).re / a.norm_sqr();
            if ratio > worst {
                worst = ratio;
            }
        }
    }
    users.saturating_sub(1) as f64 * worst + margin
}

/// The matched-filter statistic `y = −2·rᴴS`, one entry per user.
///
/// # Errors
/// [`Error::DimensionMismatch`] when `r` does not have one entry per chip.
pub fn matched_filter(r: &[Complex64], s: &SpreadingMatrix) -> Result<Vec<Complex64>> {
    if r.len() != s.gain() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} chips, spreading matrix has {}",
            r.len(),
            s.gain()
        )));
    }
    Ok((0..s.users())
        .map(|k| {
            let col = s.column(k);
            let dot: Complex64 = r.iter().zip(col).map(|(ri, &c)| ri.conj() * c).sum();
            -2.0 * dot
        })
        .collect())
}

/// The loaded Gram matrix together with its triangular factor and the
/// diagonal correction used by the path metric.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTransform {
    gram: Matrix,
    loaded: Matrix,
    factor: Matrix,
    u: Vec<f64>,
    rho: f64,
}

impl GramTransform {
    /// Builds the transform for a spreading matrix, with `ρ` chosen by
    /// [`choose_rho`].
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] for a non-positive margin;
    /// [`Error::FactorizationFailure`] if the loaded matrix is not positive
    /// definite (cannot happen for a `ρ` from [`choose_rho`] with positive
    /// margin, since `G̃` is then strictly diagonally dominant).
    pub fn new(s: &SpreadingMatrix, constellation: &Constellation, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "loading margin must be positive and finite, got {margin}"
            )));
        }
        let gram = gram_matrix(s);
        let rho = choose_rho(s.users(), constellation, margin);
        GramTransform::with_rho(gram, rho)
    }

    /// Builds the transform for an explicit Gram matrix and loading value.
    ///
    /// # Errors
    /// [`Error::DimensionMismatch`] for a non-square matrix;
    /// [`Error::FactorizationFailure`] when the loaded matrix is not
    /// positive definite, reporting the user index at which the pivot
    /// failed.
    pub fn with_rho(gram: Matrix, rho: f64) -> Result<Self> {
        if gram.rows() != gram.cols() || gram.rows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "gram matrix must be square and non-empty, got {}x{}",
                gram.rows(),
                gram.cols()
            )));
        }
        let k = gram.rows();
        let mut loaded = gram.clone();
        for i in 0..k {
            loaded.set(i, i, rho);
        }

        // A lower-triangular T with TᵀT = G̃ is a Cholesky factor taken from
        // the "wrong" end. Reverse the index order, factor B = J·G̃·J as
        // B = L·Lᵀ, and map back: T = J·Lᵀ·J.
        let mut reversed = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                reversed.set(i, j, loaded.get(k - 1 - i, k - 1 - j));
            }
        }
        let l = cholesky_lower(&reversed).map_err(|(col, pivot)| Error::FactorizationFailure {
            column: k - 1 - col,
            pivot,
        })?;
        let mut factor = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                factor.set(i, j, l.get(k - 1 - j, k - 1 - i));
            }
        }

        let u = (0..k).map(|i| gram.get(i, i) - rho).collect();
        Ok(GramTransform { gram, loaded, factor, u, rho })
    }

    /// Number of users `K`.
    pub fn users(&self) -> usize {
        self.gram.rows()
    }

    /// The unmodified correlation matrix `G`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// The matrix `G̃` — `G` with its diagonal replaced by `ρ`.
    pub fn loaded_gram(&self) -> &Matrix {
        &self.loaded
    }

    /// The lower-triangular factor `T` with `TᵀT = G̃`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// The per-user diagonal correction `uₖ = G_{kk} − ρ`.
    pub fn diagonal_correction(&self) -> &[f64] {
        &self.u
    }

    /// The loading value `ρ` on the diagonal of `G̃`.
    pub fn rho(&self) -> f64 {
        self.rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::draw_spreading;
    use crate::rng::{derive_stream, StreamRole};
    use rand::Rng;

    #[test]
    fn rho_matches_hand_computed_values() {
        let bpsk = Constellation::bpsk(1.0);
        assert!((choose_rho(20, &bpsk, 1.0) - 20.0).abs() < 1e-12);
        assert!((choose_rho(1, &bpsk, 0.5) - 0.5).abs() < 1e-12);
        // For the 16-point grid the worst ratio pairs a corner of the inner
        // square with the opposite outer corner: 6/2 = 3.
        let qam = Constellation::qam16(1.0);
        assert!((choose_rho(5, &qam, 1.0) - 13.0).abs() < 1e-9);
    }

    #[test]
    fn single_user_transform_matches_hand_computation() {
        let s = SpreadingMatrix::from_columns(&[vec![1.0]]).unwrap();
        let gram = gram_matrix(&s);
        assert!((gram.get(0, 0) - 1.0).abs() < 1e-15);
        let t = GramTransform::with_rho(gram, 2.0).unwrap();
        assert!((t.loaded_gram().get(0, 0) - 2.0).abs() < 1e-15);
        assert!((t.factor().get(0, 0) - 2.0f64.sqrt()).abs() < 1e-15);
        assert!((t.diagonal_correction()[0] - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_columns_give_a_scaled_identity_factor() {
        // Rows of a 4x4 Hadamard matrix, scaled to chip magnitude 1/2.
        let h: [[f64; 4]; 4] = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let cols: Vec<Vec<f64>> =
            h.iter().map(|row| row.iter().map(|&x| x / 2.0).collect()).collect();
        let s = SpreadingMatrix::from_columns(&cols).unwrap();
        let bpsk = Constellation::bpsk(1.0);
        let t = GramTransform::new(&s, &bpsk, 1.0).unwrap();
        assert!((t.rho() - 4.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((t.factor().get(i, j) - expect).abs() < 1e-12);
            }
            assert!((t.diagonal_correction()[i] - (-3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn factor_reconstructs_the_loaded_gram_on_random_draws() {
        let mut rng = derive_stream(11, StreamRole::Spreading, 0);
        let bpsk = Constellation::bpsk(1.0);
        for trial in 0..1000 {
            let l = 2 + rng.random_range(0..7); // chips 2..8
            let k = 1 + rng.random_range(0..20); // users 1..20, often > L
            let s = draw_spreading(l, k, &mut rng);
            let t = GramTransform::new(&s, &bpsk, 1.0).unwrap();
            let f = t.factor();
            // Strict lower-triangularity, exact zeros above the diagonal.
            for i in 0..k {
                for j in (i + 1)..k {
                    assert_eq!(f.get(i, j), 0.0, "trial {trial}");
                }
            }
            // TᵀT = G̃.
            let mut err = 0.0f64;
            for i in 0..k {
                for j in 0..k {
                    let dot: f64 = (0..k).map(|m| f.get(m, i) * f.get(m, j)).sum();
                    err = err.max((dot - t.loaded_gram().get(i, j)).abs());
                }
            }
            assert!(err < 1e-10, "trial {trial}: reconstruction error {err}");
        }
    }

    #[test]
    fn insufficient_loading_reports_the_failing_user() {
        // Two identical columns: G has unit off-diagonal entries, so a
        // loading below one cannot be positive definite. The first pivot of
        // the reversed factorization fails second, which corresponds to
        // user 0 in the original ordering.
        let col = vec![0.5, -0.5, 0.5, 0.5];
        let s = SpreadingMatrix::from_columns(&[col.clone(), col]).unwrap();
        let gram = gram_matrix(&s);
        match GramTransform::with_rho(gram, 0.5) {
            Err(Error::FactorizationFailure { column, pivot }) => {
                assert_eq!(column, 0);
                assert!(pivot < 0.0);
            }
            other => panic!("expected a factorization failure, got {other:?}"),
        }
    }

    #[test]
    fn rho_dominates_offdiagonal_row_sums_for_bpsk() {
        let mut rng = derive_stream(12, StreamRole::Spreading, 1);
        let bpsk = Constellation::bpsk(1.0);
        for _ in 0..200 {
            let l = 2 + rng.random_range(0..7);
            let k = 2 + rng.random_range(0..19);
            let s = draw_spreading(l, k, &mut rng);
            let g = gram_matrix(&s);
            let rho = choose_rho(k, &bpsk, 1.0);
            for i in 0..k {
                let off: f64 = (0..k).filter(|&j| j != i).map(|j| g.get(i, j).abs()).sum();
                assert!(rho >= off + 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn depth_split_distance_identity_holds_for_complex_symbols() {
        // ‖r − S·d‖² = ‖r‖² + Σₖ ( Re{yₖdₖ} + |(T·d)ₖ|² + uₖ|dₖ|² )
        // for arbitrary complex symbol vectors, any ρ.
        let mut rng = derive_stream(13, StreamRole::Spreading, 2);
        let qam = Constellation::qam16(1.0);
        for trial in 0..200 {
            let l = 3 + rng.random_range(0..4);
            let k = 2 + rng.random_range(0..6);
            let s = draw_spreading(l, k, &mut rng);
            let t = GramTransform::new(&s, &qam, 1.0 + rng.random::<f64>() * 5.0).unwrap();

            let d: Vec<Complex64> = (0..k)
                .map(|_| qam.symbols()[rng.random_range(0..16)])
                .collect();
            let r: Vec<Complex64> = (0..l)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();

            let direct: f64 = (0..l)
                .map(|row| {
                    let sd: Complex64 =
                        (0..k).map(|j| s.column(j)[row] * d[j]).sum();
                    (r[row] - sd).norm_sqr()
                })
                .sum();

            let y = matched_filter(&r, &s).unwrap();
            let r_energy: f64 = r.iter().map(|x| x.norm_sqr()).sum();
            let mut split = r_energy;
            for row in 0..k {
                let td: Complex64 =
                    (0..=row).map(|j| t.factor().get(row, j) * d[j]).sum();
                split += (y[row] * d[row]).re
                    + td.norm_sqr()
                    + t.diagonal_correction()[row] * d[row].norm_sqr();
            }
            assert!(
                (direct - split).abs() < 1e-9 * direct.abs().max(1.0),
                "trial {trial}: direct {direct}, split {split}"
            );
        }
    }

    #[test]
    fn matched_filter_checks_dimensions() {
        let s = SpreadingMatrix::from_columns(&[vec![0.5, 0.5, -0.5, 0.5]]).unwrap();
        let short = vec![Complex64::new(1.0, 0.0); 3];
        assert!(matches!(matched_filter(&short, &s), Err(Error::DimensionMismatch(_))));
    }
}
