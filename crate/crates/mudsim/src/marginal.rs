//! Conversion of weighted candidate lists into per-user symbol
//! probabilities, and the extrinsic/posterior bookkeeping used when those
//! probabilities are exchanged with a soft decoder.
//!
//! A list entry with weight `w` corresponds to an unnormalized joint
//! probability `exp(−w/N₀)`. Summing entry masses per (user, symbol) cell
//! and normalizing each user's column yields the symbol posteriors the list
//! supports. Symbols that never appear in the list for some user would get
//! probability zero, which a subsequent prior-division or logarithm cannot
//! tolerate, so every cell is floored before normalization.

use crate::search::DetectorList;
use crate::{Error, Result};

/// Default floor applied to probability cells before normalization.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-7;

/// A column-per-user matrix of symbol probabilities: entry `(q, k)` is the
/// probability that user `k` sent symbol index `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    q: usize,
    k: usize,
    data: Vec<f64>, // column-major: data[k * q + i]
}

impl ProbabilityMatrix {
    /// Uniform distribution over `q` symbols for each of `k` users.
    pub fn uniform(q: usize, k: usize) -> Self {
        assert!(q > 0);
        ProbabilityMatrix { q, k, data: vec![1.0 / q as f64; q * k] }
    }

    /// Builds a matrix from per-user columns, normalizing each.
    ///
    /// # Errors
    /// [`Error::LengthMismatch`] when columns have differing lengths;
    /// [`Error::InvalidParameter`] for negative, non-finite, or all-zero
    /// columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::InvalidParameter("at least one user column required".into()));
        }
        let q = columns[0].len();
        if q == 0 {
            return Err(Error::InvalidParameter("columns must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(q * k);
        for (user, col) in columns.iter().enumerate() {
            if col.len() != q {
                return Err(Error::LengthMismatch(format!(
                    "column {user} has {} entries, expected {q}",
                    col.len()
                )));
            }
            let mut total = 0.0;
            for &p in col {
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "column {user} contains an invalid probability {p}"
                    )));
                }
                total += p;
            }
            if total <= 0.0 {
                return Err(Error::InvalidParameter(format!("column {user} has zero mass")));
            }
            data.extend(col.iter().map(|&p| p / total));
        }
        Ok(ProbabilityMatrix { q, k, data })
    }

    /// Symbol alphabet size.
    pub fn size(&self) -> usize {
        self.q
    }

    /// Number of users.
    pub fn users(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, symbol: usize, user: usize) -> f64 {
        self.data[user * self.q + symbol]
    }

    #[inline]
    pub fn set(&mut self, symbol: usize, user: usize, p: f64) {
        self.data[user * self.q + symbol] = p;
    }

    /// One user's distribution over symbol indices.
    pub fn column(&self, user: usize) -> &[f64] {
        &self.data[user * self.q..(user + 1) * self.q]
    }

    pub fn column_mut(&mut self, user: usize) -> &mut [f64] {
        &mut self.data[user * self.q..(user + 1) * self.q]
    }

    /// Applies `max(p, floor)` to every cell, then renormalizes each
    /// column. A floor of zero still renormalizes.
    pub fn floor_and_normalize(&mut self, floor: f64) {
        assert!(floor >= 0.0 && floor < 1.0 / self.q as f64);
        for user in 0..self.k {
            let col = &mut self.data[user * self.q..(user + 1) * self.q];
            let mut total = 0.0;
            for p in col.iter_mut() {
                *p = p.max(floor);
                total += *p;
            }
            for p in col.iter_mut() {
                *p /= total;
            }
        }
    }

    /// Largest absolute cell difference against a matrix of the same shape.
    pub fn max_abs_diff(&self, other: &ProbabilityMatrix) -> f64 {
        assert_eq!((self.q, self.k), (other.q, other.k));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-user symbol posteriors supported by a candidate list.
///
/// Entry masses are `exp(−(w − w_min)/n0)`, accumulated per (user, symbol)
/// cell; each user's column is floored and normalized. Subtracting the best
/// weight before exponentiating keeps every mass in `(0, 1]` regardless of
/// the weight scale.
pub fn list_to_posteriors(
    list: &DetectorList,
    q: usize,
    n0: f64,
    floor: f64,
) -> ProbabilityMatrix {
    assert!(!list.is_empty(), "cannot marginalize an empty list");
    assert!(n0 > 0.0);
    let k = list.entries()[0].symbols.len();
    let w_min = list.entries().iter().map(|e| e.weight).fold(f64::INFINITY, f64::min);
    let mut out = ProbabilityMatrix { q, k, data: vec![0.0; q * k] };
    for entry in list.entries() {
        debug_assert_eq!(entry.symbols.len(), k);
        let mass = (-(entry.weight - w_min) / n0).exp();
        for (user, &symbol) in entry.symbols.iter().enumerate() {
            out.data[user * q + symbol as usize] += mass;
        }
    }
    out.floor_and_normalize(floor);
    out
}

/// Extrinsic probabilities: the posterior with the prior divided out,
/// floored and renormalized per user.
pub fn extrinsic_from_posterior(
    posterior: &ProbabilityMatrix,
    prior: &ProbabilityMatrix,
    floor: f64,
) -> ProbabilityMatrix {
    assert_eq!((posterior.q, posterior.k), (prior.q, prior.k));
    let mut out = posterior.clone();
    for i in 0..out.data.len() {
        out.data[i] /= prior.data[i].max(f64::MIN_POSITIVE);
    }
    out.floor_and_normalize(floor);
    out
}
