//! Exact reference answers by exhaustive enumeration.
//!
//! Everything here is deliberately slow and direct: joint metrics are
//! evaluated from their definitions, with none of the triangular-split or
//! pruning machinery used by the production path. The functions exist so
//! tests can compare the fast implementations against an independent ground
//! truth, and they refuse inputs whose enumeration would be unreasonably
//! large instead of silently grinding.

use num_complex::Complex64;

use crate::fec::{BitProbabilityStream, ConvCode};
use crate::marginal::ProbabilityMatrix;
use crate::math::log_sum_exp2;
use crate::model::{Constellation, SpreadingMatrix};
use crate::{Error, Result};

/// Largest enumeration (symbol vectors or info words) accepted by default.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// Exact per-user symbol posteriors for one channel use, by enumerating all
/// `Qᴷ` symbol vectors and accumulating `exp(−‖r − S·d‖²/n0)·p(d)` per
/// (user, symbol) cell. Priors enter exactly as given — no flooring.
///
/// # Errors
/// [`Error::DimensionMismatch`] on inconsistent shapes,
/// [`Error::InvalidParameter`] for a non-positive `n0`, and
/// [`Error::CapExceeded`] when `Qᴷ > `[`DEFAULT_ENUMERATION_CAP`].
pub fn brute_force_symbol_app(
    r: &[Complex64],
    s: &SpreadingMatrix,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
) -> Result<ProbabilityMatrix> {
    brute_force_symbol_app_with_cap(r, s, constellation, priors, n0, DEFAULT_ENUMERATION_CAP)
}

/// [`brute_force_symbol_app`] with an explicit enumeration cap.
pub fn brute_force_symbol_app_with_cap(
    r: &[Complex64],
    s: &SpreadingMatrix,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    cap: u64,
) -> Result<ProbabilityMatrix> {
    let l = s.gain();
    let k = s.users();
    let q = constellation.size();
    if r.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} chips, spreading matrix has {l}",
            r.len()
        )));
    }
    if priors.users() != k || priors.size() != q {
        return Err(Error::DimensionMismatch(format!(
            "priors are {}x{}, expected {q}x{k}",
            priors.size(),
            priors.users()
        )));
    }
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be positive and finite, got {n0}"
        )));
    }
    check_cap(q as u128, k as u32, cap)?;

    let syms = constellation.symbols();
    // Per-cell accumulators in the log domain; ln(0) = −inf is the identity.
    let mut cell_log = vec![f64::NEG_INFINITY; q * k];
    let mut digits = vec![0u8; k];
    loop {
        let mut dist = 0.0;
        for row in 0..l {
            let sd: Complex64 =
                (0..k).map(|j| s.column(j)[row] * syms[digits[j] as usize]).sum();
            dist += (r[row] - sd).norm_sqr();
        }
        let log_prior: f64 =
            digits.iter().enumerate().map(|(j, &d)| priors.get(d as usize, j).ln()).sum();
        let log_mass = -dist / n0 + log_prior;
        for (j, &d) in digits.iter().enumerate() {
            let cell = &mut cell_log[j * q + d as usize];
            *cell = log_sum_exp2(*cell, log_mass);
        }

        // Advance the mixed-radix counter.
        let mut pos = 0;
        loop {
            if pos == k {
                // Wrapped around: every vector has been visited.
                let cols: Vec<Vec<f64>> = (0..k)
                    .map(|j| normalized_exp(&cell_log[j * q..(j + 1) * q]))
                    .collect();
                return ProbabilityMatrix::from_columns(&cols);
            }
            digits[pos] += 1;
            if (digits[pos] as usize) < q {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact information-bit posteriors for one coded frame, by enumerating all
/// `2^I` information words: each word's mass is the product of the given
/// coded-bit probabilities along its codeword.
///
/// # Errors
/// [`Error::LengthMismatch`] when the stream is not a positive multiple of
/// the code's output count, [`Error::CapExceeded`] when
/// `2^I > `[`DEFAULT_ENUMERATION_CAP`].
pub fn brute_force_map(
    coded_priors: &BitProbabilityStream,
    code: &ConvCode,
) -> Result<BitProbabilityStream> {
    brute_force_map_with_cap(coded_priors, code, DEFAULT_ENUMERATION_CAP)
}

/// [`brute_force_map`] with an explicit enumeration cap.
pub fn brute_force_map_with_cap(
    coded_priors: &BitProbabilityStream,
    code: &ConvCode,
    cap: u64,
) -> Result<BitProbabilityStream> {
    let n_out = code.outputs();
    let len = coded_priors.len();
    if len == 0 || len % n_out != 0 {
        return Err(Error::LengthMismatch(format!(
            "coded length {len} is not a positive multiple of {n_out} outputs"
        )));
    }
    let steps = len / n_out;
    check_cap(2, steps as u32, cap)?;

    let lp: Vec<[f64; 2]> = (0..len)
        .map(|i| {
            let p = coded_priors.get(i);
            [p[0].ln(), p[1].ln()]
        })
        .collect();
    let mut bit_log = vec![[f64::NEG_INFINITY; 2]; steps];
    let mut info = vec![0u8; steps];
    for word in 0u64..(1u64 << steps) {
        for (t, b) in info.iter_mut().enumerate() {
            *b = ((word >> t) & 1) as u8;
        }
        let coded = code.encode(&info);
        let log_mass: f64 =
            coded.iter().enumerate().map(|(i, &c)| lp[i][c as usize]).sum();
        for (t, &b) in info.iter().enumerate() {
            let cell = &mut bit_log[t][b as usize];
            *cell = log_sum_exp2(*cell, log_mass);
        }
    }
    let pairs: Vec<[f64; 2]> = bit_log
        .iter()
        .map(|l| {
            let v = normalized_exp(&l[..]);
            [v[0], v[1]]
        })
        .collect();
    Ok(BitProbabilityStream::from_pairs(pairs)?)
}

/// Softmax of a log-domain slice; all-impossible slices become uniform.
fn normalized_exp(log_vals: &[f64]) -> Vec<f64> {
    let max = log_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / log_vals.len() as f64; log_vals.len()];
    }
    let mut vals: Vec<f64> = log_vals.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = vals.iter().sum();
    for v in &mut vals {
        *v /= total;
    }
    vals
}

fn check_cap(base: u128, exponent: u32, cap: u64) -> Result<()> {
    let required = base.checked_pow(exponent).unwrap_or(u128::MAX);
    if required > cap as u128 {
        return Err(Error::CapExceeded { required, cap });
    }
    Ok(())
}
