//! Numerically stable accumulation helpers shared by the probability code.

/// Returns `ln(exp(a) + exp(b))` without overflow for widely separated inputs.
///
/// `-inf` inputs are treated as zero probability mass, so the identity
/// element is `f64::NEG_INFINITY`.
pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_direct_evaluation() {
        let cases: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 2.0), (-3.5, 0.25), (10.0, 10.0)];
        for (a, b) in cases {
            let direct = (a.exp() + b.exp()).ln();
            assert!((log_sum_exp2(a, b) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_handles_extreme_separation() {
        // exp(-1000) underflows but the result must still be the larger input.
        assert_eq!(log_sum_exp2(0.0, -1000.0), 0.0);
        assert_eq!(log_sum_exp2(-1000.0, 0.0), 0.0);
        // Large equal inputs must not overflow: ln(2e^700) = 700 + ln 2.
        assert!((log_sum_exp2(700.0, 700.0) - (700.0 + 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn identity_element_is_negative_infinity() {
        assert_eq!(log_sum_exp2(f64::NEG_INFINITY, -1.5), -1.5);
        assert_eq!(log_sum_exp2(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn folding_accumulates_a_full_sum() {
        let xs = [0.3, -2.0, 1.7, 0.0, -9.0];
        let folded = xs.iter().fold(f64::NEG_INFINITY, |acc, &x| log_sum_exp2(acc, x));
        let direct: f64 = xs.iter().map(|&x| x.exp()).sum::<f64>().ln();
        assert!((folded - direct).abs() < 1e-12);
    }
}
