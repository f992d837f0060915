//! Reference detectors based on Gaussian interference approximations.
//!
//! Both detectors summarize each user's current prior by its mean and
//! variance, treat the residual multiple-access interference at a user's
//! matched-filter (or MMSE-filter) output as Gaussian, and convert the
//! filtered statistic into per-symbol probabilities. They are cheap —
//! nothing here searches a tree — and serve as the comparison points for
//! the list detector: in lightly loaded systems they are near-optimal,
//! while under heavy overload the Gaussian approximation collapses.
//!
//! Conventions match the rest of the crate: spreading columns are real with
//! unit norm, the noise has variance `σ²` per real dimension (`N₀ = 2σ²`),
//! and for a real constellation only the real part of the filtered
//! statistic carries information, with interference counted at its full
//! (real) variance. Outputs are normalized per-symbol probabilities of the
//! likelihood alone — the caller's priors are not multiplied back in, so
//! the result plugs directly into an extrinsic exchange.

use num_complex::Complex64;

use crate::linalg::{cholesky_lower, solve_cholesky, Matrix};
use crate::marginal::ProbabilityMatrix;
use crate::model::{Constellation, NoiseSpec, SpreadingMatrix};
use crate::{Error, Result};

/// Per-user prior mean and variance of the transmitted symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftStatistics {
    /// `mₖ = Σ_q p(q,k)·d_q`.
    pub means: Vec<Complex64>,
    /// `vₖ = Σ_q p(q,k)·|d_q|² − |mₖ|²`, the full (complex) variance.
    pub variances: Vec<f64>,
}

/// Means and variances of each user's symbol under the given priors.
pub fn soft_statistics(
    priors: &ProbabilityMatrix,
    constellation: &Constellation,
) -> SoftStatistics {
    assert_eq!(priors.size(), constellation.size());
    let syms = constellation.symbols();
    let k = priors.users();
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for user in 0..k {
        let col = priors.column(user);
        let mean: Complex64 = col.iter().zip(syms).map(|(&p, &d)| p * d).sum();
        let second: f64 = col.iter().zip(syms).map(|(&p, &d)| p * d.norm_sqr()).sum();
        means.push(mean);
        // Clamp tiny negative rounding residue.
        variances.push((second - mean.norm_sqr()).max(0.0));
    }
    SoftStatistics { means, variances }
}

/// Soft parallel interference cancellation.
///
/// For each user the prior means of all other users are regenerated,
/// spread, and subtracted from the observation; the matched-filter output
/// of the cleaned signal is treated as the user's symbol in Gaussian noise
/// whose variance combines thermal noise and the residual interference
/// `Σ_{j≠k} g_{kj}²·v_j`.
///
/// # Errors
/// [`Error::DimensionMismatch`] on inconsistent shapes,
/// [`Error::InvalidParameter`] for a floor outside `[0, 1/Q)`.
pub fn soft_pic_detect(
    r: &[Complex64],
    s: &SpreadingMatrix,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    noise: &NoiseSpec,
    floor: f64,
) -> Result<ProbabilityMatrix> {
    check_shapes(r, s, constellation, priors, floor)?;
    let k = s.users();
    let l = s.gain();
    let syms = constellation.symbols();
    let stats = soft_statistics(priors, constellation);

    // Gram entries are needed for both the cancellation residue and the
    // interference variance.
    let gram = crate::gram::gram_matrix(s);

    // r − Σ_j s_j·m_j once; per user, add that user's own mean back.
    let mut cleaned = r.to_vec();
    for j in 0..k {
        let col = s.column(j);
        for (row, c) in cleaned.iter_mut().enumerate() {
            *c -= col[row] * stats.means[j];
        }
    }

    let real_symbols = constellation.is_real();
    let mut columns = Vec::with_capacity(k);
    for user in 0..k {
        let col = s.column(user);
        // zₖ = sₖᵀ(r − Σ_{j≠k} s_j m_j): matched filter after cancelling
        // everyone else. Adding g_{kk}·mₖ back undoes the self-subtraction.
        let mut z: Complex64 = (0..l).map(|row| col[row] * cleaned[row]).sum();
        z += gram.get(user, user) * stats.means[user];

        let residual: f64 = (0..k)
            .filter(|&j| j != user)
            .map(|j| {
                let g = gram.get(user, j);
                g * g * stats.variances[j]
            })
            .sum();
        // Real constellation: information lives in the real dimension only,
        // where interference contributes its full variance. Complex: the
        // statistic is circular with total variance N₀ + residual.
        let denom = if real_symbols {
            noise.n0() + 2.0 * residual
        } else {
            noise.n0() + residual
        };
        let g_kk = gram.get(user, user);
        let log_likes: Vec<f64> = syms
            .iter()
            .map(|&d| {
                let err = if real_symbols {
                    let delta = z.re - g_kk * d.re;
                    delta * delta
                } else {
                    (z - g_kk * d).norm_sqr()
                };
                -err / denom
            })
            .collect();
        columns.push(softmax(&log_likes));
    }
    let mut out = ProbabilityMatrix::from_columns(&columns)?;
    out.floor_and_normalize(floor);
    Ok(out)
}

/// Prior-conditioned LMMSE filtering.
///
/// For user `k` the other users' means are cancelled and the residual is
/// passed through the MMSE filter `wₖ = P·Cₖ⁻¹sₖ`, where
/// `Cₖ = Σ_{j≠k} v_j·s_j s_jᵀ + P·sₖsₖᵀ + (noise)·I`. All `K` filters are
/// obtained from one Cholesky factorization of the common matrix
/// `M = Σ_j v_j s_j s_jᵀ + (noise)·I` via a rank-one update: with
/// `cₖ = sₖᵀM⁻¹sₖ` and `βₖ = P − vₖ`,
///
/// ```text
/// Cₖ⁻¹sₖ = M⁻¹sₖ / (1 + βₖcₖ),   μₖ = P·cₖ/(1 + βₖcₖ),
/// ```
///
/// and the filter output is modelled as `zₖ ≈ μₖ·dₖ + η` with
/// `Var(η) = P·μₖ·(1 − μₖ)`.
///
/// # Errors
/// As [`soft_pic_detect`]; additionally [`Error::FactorizationFailure`] if
/// the covariance factorization fails (it cannot for positive noise).
pub fn lmmse_detect(
    r: &[Complex64],
    s: &SpreadingMatrix,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    noise: &NoiseSpec,
    floor: f64,
) -> Result<ProbabilityMatrix> {
    check_shapes(r, s, constellation, priors, floor)?;
    let k = s.users();
    let l = s.gain();
    let syms = constellation.symbols();
    let power = constellation.power();
    let stats = soft_statistics(priors, constellation);
    let real_symbols = constellation.is_real();

    // The common covariance M = Σ_j v_j·s_j s_jᵀ + (noise)·I, with the
    // noise entering at σ² per dimension for real signalling and N₀ per
    // complex dimension otherwise.
    let noise_diag = if real_symbols { noise.sigma2() } else { noise.n0() };
    let mut m = Matrix::zeros(l, l);
    for row in 0..l {
        for colidx in row..l {
            let mut acc: f64 = (0..k)
                .map(|j| {
                    let c = s.column(j);
                    stats.variances[j] * c[row] * c[colidx]
                })
                .sum();
            if row == colidx {
                acc += noise_diag;
            }
            m.set(row, colidx, acc);
            m.set(colidx, row, acc);
        }
    }
    let chol = cholesky_lower(&m).map_err(|(column, pivot)| Error::FactorizationFailure {
        column,
        pivot,
    })?;

    // For real constellations variances are real-dimension quantities, so
    // the symbol power must be counted the same way.
    let p_eff = power;

    let mut cleaned = r.to_vec();
    for j in 0..k {
        let col = s.column(j);
        for (row, c) in cleaned.iter_mut().enumerate() {
            *c -= col[row] * stats.means[j];
        }
    }

    let mut columns = Vec::with_capacity(k);
    for user in 0..k {
        let col = s.column(user);
        let f = solve_cholesky(&chol, col); // M⁻¹ sₖ
        let c_k: f64 = f.iter().zip(col).map(|(a, b)| a * b).sum();
        let beta = p_eff - stats.variances[user];
        let gain = 1.0 / (1.0 + beta * c_k);
        let mu = p_eff * c_k * gain;

        // zₖ = wₖᵀ(r − Σ_{j≠k} s_j m_j); the common residual already has
        // user k's mean removed, so add it back through the filter.
        let mut z: Complex64 = (0..l).map(|row| f[row] * cleaned[row]).sum();
        z += c_k * stats.means[user];
        z *= p_eff * gain;

        let variance = (p_eff * mu * (1.0 - mu)).max(f64::MIN_POSITIVE);
        let denom = if real_symbols { 2.0 * variance } else { variance };
        let log_likes: Vec<f64> = syms
            .iter()
            .map(|&d| {
                let err = if real_symbols {
                    let delta = z.re - mu * d.re;
                    delta * delta
                } else {
                    (z - mu * d).norm_sqr()
                };
                -err / denom
            })
            .collect();
        columns.push(softmax(&log_likes));
    }
    let mut out = ProbabilityMatrix::from_columns(&columns)?;
    out.floor_and_normalize(floor);
    Ok(out)
}

fn check_shapes(
    r: &[Complex64],
    s: &SpreadingMatrix,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    floor: f64,
) -> Result<()> {
    if r.len() != s.gain() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} chips, spreading matrix has {}",
            r.len(),
            s.gain()
        )));
    }
    if priors.users() != s.users() || priors.size() != constellation.size() {
        return Err(Error::DimensionMismatch(format!(
            "priors are {}x{}, expected {}x{}",
            priors.size(),
            priors.users(),
            constellation.size(),
            s.users()
        )));
    }
    if !(0.0..1.0 / constellation.size() as f64).contains(&floor) {
        return Err(Error::InvalidParameter(format!(
            "probability floor must lie in [0, 1/Q), got {floor}"
        )));
    }
    Ok(())
}

/// Normalized exponentials of log-likelihoods, shifted for stability.
fn softmax(log_likes: &[f64]) -> Vec<f64> {
    let max = log_likes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut vals: Vec<f64> = log_likes.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = vals.iter().sum();
    for v in &mut vals {
        *v /= total;
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::draw_spreading;
    use crate::oracle::brute_force_symbol_app;
    use crate::rng::{derive_stream, StreamRole};
    use rand::Rng;

    fn random_observation(l: usize, rng: &mut impl Rng) -> Vec<Complex64> {
        (0..l)
            .map(|_| Complex64::new(2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>() - 1.0))
            .collect()
    }

    #[test]
    fn soft_statistics_match_hand_values_and_the_moment_identity() {
        let bpsk = Constellation::bpsk(4.0); // symbols ±2
        let priors = ProbabilityMatrix::from_columns(&[
            vec![0.5, 0.5],
            vec![1.0, 0.0],
            vec![0.25, 0.75],
        ])
        .unwrap();
        let stats = soft_statistics(&priors, &bpsk);
        assert!((stats.means[0].re - 0.0).abs() < 1e-15);
        assert!((stats.variances[0] - 4.0).abs() < 1e-12);
        assert!((stats.means[1].re - 2.0).abs() < 1e-15);
        assert!(stats.variances[1].abs() < 1e-12);
        assert!((stats.means[2].re - (-1.0)).abs() < 1e-12);
        // |m|² + v = P holds for any binary prior on an antipodal pair.
        for user in 0..3 {
            let total = stats.means[user].norm_sqr() + stats.variances[user];
            assert!((total - 4.0).abs() < 1e-12, "user {user}");
        }
    }

    #[test]
    fn single_user_detectors_are_exact() {
        // With K = 1 there is no interference, and both Gaussian
        // approximations collapse to the true single-user posterior under
        // uniform priors (where posterior = normalized likelihood).
        // The real (BPSK) branch is covered by the next test with a real
        // observation; here the complex branch is checked with 16-QAM.
        let mut rng = derive_stream(61, StreamRole::Spreading, 0);
        let constellation = Constellation::qam16(1.0);
        for &sigma2 in &[0.2f64, 1.0, 5.0] {
            let noise = NoiseSpec::from_sigma2(sigma2).unwrap();
            let s = draw_spreading(4, 1, &mut rng);
            let r = random_observation(4, &mut rng);
            let priors = ProbabilityMatrix::uniform(16, 1);
            let oracle =
                brute_force_symbol_app(&r, &s, &constellation, &priors, noise.n0()).unwrap();
            let pic = soft_pic_detect(&r, &s, &constellation, &priors, &noise, 0.0).unwrap();
            let lmmse = lmmse_detect(&r, &s, &constellation, &priors, &noise, 0.0).unwrap();
            assert!(pic.max_abs_diff(&oracle) < 1e-9);
            assert!(lmmse.max_abs_diff(&oracle) < 1e-9);
        }
    }

    #[test]
    fn single_user_detectors_are_exact_on_the_real_path() {
        let mut rng = derive_stream(62, StreamRole::Spreading, 1);
        let bpsk = Constellation::bpsk(1.0);
        for trial in 0..20 {
            let noise = NoiseSpec::from_sigma2(0.1 + rng.random::<f64>()).unwrap();
            let s = draw_spreading(3, 1, &mut rng);
            let r: Vec<Complex64> =
                (0..3).map(|_| Complex64::new(2.0 * rng.random::<f64>() - 1.0, 0.0)).collect();
            let priors = ProbabilityMatrix::from_columns(&[vec![
                0.2 + 0.6 * rng.random::<f64>(),
                0.2 + 0.6 * rng.random::<f64>(),
            ]])
            .unwrap();
            // Likelihood reference: oracle under uniform priors.
            let uniform = ProbabilityMatrix::uniform(2, 1);
            let oracle = brute_force_symbol_app(&r, &s, &bpsk, &uniform, noise.n0()).unwrap();
            let pic = soft_pic_detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();
            let lmmse = lmmse_detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();
            assert!(pic.max_abs_diff(&oracle) < 1e-9, "trial {trial} pic");
            assert!(lmmse.max_abs_diff(&oracle) < 1e-9, "trial {trial} lmmse");
        }
    }

    #[test]
    fn orthogonal_spreading_decouples_the_users() {
        // With orthogonal columns there is no interference at all, so PIC
        // under uniform priors equals the exact per-user posterior.
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
        let noise = NoiseSpec::from_sigma2(0.3).unwrap();
        let mut rng = derive_stream(63, StreamRole::Noise, 0);
        let r: Vec<Complex64> =
            (0..4).map(|_| Complex64::new(2.0 * rng.random::<f64>() - 1.0, 0.0)).collect();
        let priors = ProbabilityMatrix::uniform(2, 4);
        let oracle = brute_force_symbol_app(&r, &s, &bpsk, &priors, noise.n0()).unwrap();
        let pic = soft_pic_detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();
        let lmmse = lmmse_detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();
        assert!(pic.max_abs_diff(&oracle) < 1e-9);
        assert!(lmmse.max_abs_diff(&oracle) < 1e-9);
    }

    #[test]
    fn rank_one_update_matches_direct_per_user_factorizations() {
        // Rebuild each user's covariance Cₖ explicitly and compare filter
        // outputs against the shared-factorization shortcut.
        let mut rng = derive_stream(64, StreamRole::Spreading, 2);
        let bpsk = Constellation::bpsk(1.0);
        let noise = NoiseSpec::from_sigma2(0.4).unwrap();
        for _ in 0..20 {
            let l = 4;
            let k = 2 + rng.random_range(0..9);
            let s = draw_spreading(l, k, &mut rng);
            let cols: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let p = 0.1 + 0.8 * rng.random::<f64>();
                    vec![p, 1.0 - p]
                })
                .collect();
            let priors = ProbabilityMatrix::from_columns(&cols).unwrap();
            let r: Vec<Complex64> =
                (0..l).map(|_| Complex64::new(2.0 * rng.random::<f64>() - 1.0, 0.0)).collect();

            let fast = lmmse_detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();

            let stats = soft_statistics(&priors, &bpsk);
            let mut slow_cols = Vec::new();
            for user in 0..k {
                let mut c = Matrix::zeros(l, l);
                for row in 0..l {
                    for cc in 0..l {
                        let mut acc = 0.0;
                        for j in 0..k {
                            let w = if j == user { 1.0 } else { stats.variances[j] };
                            acc += w * s.column(j)[row] * s.column(j)[cc];
                        }
                        if row == cc {
                            acc += noise.sigma2();
                        }
                        c.set(row, cc, acc);
                    }
                }
                let chol = cholesky_lower(&c).unwrap();
                let f = solve_cholesky(&chol, s.column(user)); // Cₖ⁻¹sₖ
                let mu: f64 =
                    f.iter().zip(s.column(user)).map(|(a, b)| a * b).sum::<f64>();
                let mut z = 0.0;
                for row in 0..l {
                    let mut x = r[row].re;
                    for j in 0..k {
                        if j != user {
                            x -= s.column(j)[row] * stats.means[j].re;
                        }
                    }
                    z += f[row] * x;
                }
                let variance = mu * (1.0 - mu);
                let like = |d: f64| (-(z - mu * d).powi(2) / (2.0 * variance)).exp();
                let (a, b) = (like(1.0), like(-1.0));
                slow_cols.push(vec![a / (a + b), b / (a + b)]);
            }
            let slow = ProbabilityMatrix::from_columns(&slow_cols).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-9);
        }
    }

    #[test]
    fn overwhelming_noise_flattens_both_detectors() {
        let mut rng = derive_stream(65, StreamRole::Spreading, 3);
        let s = draw_spreading(4, 6, &mut rng);
        let bpsk = Constellation::bpsk(1.0);
        let noise = NoiseSpec::from_sigma2(1e9).unwrap();
        let r = random_observation(4, &mut rng);
        let priors = ProbabilityMatrix::uniform(2, 6);
        for detect in [soft_pic_detect, lmmse_detect] {
            let out = detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();
            for user in 0..6 {
                assert!((out.get(0, user) - 0.5).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn genie_priors_cancel_the_interference_exactly() {
        // When every other user's prior is a point mass on the truth, PIC
        // subtracts their contribution exactly and each user sees a clean
        // single-user channel — even at twice-overloaded K = 2L.
        let mut rng = derive_stream(66, StreamRole::Spreading, 4);
        let bpsk = Constellation::bpsk(1.0);
        let noise = NoiseSpec::from_sigma2(0.05).unwrap();
        for trial in 0..20 {
            let l = 4;
            let k = 8;
            let s = draw_spreading(l, k, &mut rng);
            let truth: Vec<usize> = (0..k).map(|_| rng.random_range(0..2)).collect();
            let mut r: Vec<Complex64> = (0..l)
                .map(|row| {
                    let clean: f64 = (0..k)
                        .map(|j| s.column(j)[row] * bpsk.symbols()[truth[j]].re)
                        .sum();
                    Complex64::new(clean + 0.05 * (rng.random::<f64>() - 0.5), 0.0)
                })
                .collect();
            r[0] += Complex64::new(0.01, 0.0);
            let eps = 1e-9;
            let cols: Vec<Vec<f64>> = truth
                .iter()
                .map(|&t| if t == 0 { vec![1.0 - eps, eps] } else { vec![eps, 1.0 - eps] })
                .collect();
            let priors = ProbabilityMatrix::from_columns(&cols).unwrap();
            let out = soft_pic_detect(&r, &s, &bpsk, &priors, &noise, 0.0).unwrap();
            for user in 0..k {
                assert!(
                    out.get(truth[user], user) > 0.9,
                    "trial {trial} user {user}: {}",
                    out.get(truth[user], user)
                );
            }
        }
    }

    #[test]
    fn shape_and_floor_errors_are_reported() {
        let mut rng = derive_stream(67, StreamRole::Spreading, 5);
        let s = draw_spreading(4, 2, &mut rng);
        let bpsk = Constellation::bpsk(1.0);
        let noise = NoiseSpec::from_sigma2(0.5).unwrap();
        let priors = ProbabilityMatrix::uniform(2, 2);
        let r = random_observation(3, &mut rng); // wrong length
        assert!(matches!(
            soft_pic_detect(&r, &s, &bpsk, &priors, &noise, 0.0),
            Err(Error::DimensionMismatch(_))
        ));
        let r = random_observation(4, &mut rng);
        let bad = ProbabilityMatrix::uniform(2, 3);
        assert!(matches!(
            lmmse_detect(&r, &s, &bpsk, &bad, &noise, 0.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            lmmse_detect(&r, &s, &bpsk, &priors, &noise, 0.6),
            Err(Error::InvalidParameter(_))
        ));
    }
}
