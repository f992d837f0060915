//! Rate-1/n feed-forward convolutional coding, interleaving, and exact
//! symbol-by-symbol MAP (BCJR) decoding over probability streams.
//!
//! Soft values cross this module as per-bit probability pairs `[p0, p1]`
//! rather than log-likelihood ratios; the exchange with the multiuser
//! detector happens in the probability domain on both sides. The decoder
//! consumes one prior pair per coded bit and produces
//!
//! * extrinsic pairs for the coded bits — the trellis evidence about each
//!   bit with that bit's own prior divided out — and
//! * posterior pairs for the information bits.
//!
//! Frames are unterminated: `I` info bits produce exactly `n·I` coded bits,
//! the encoder starts in the zero state, and the backward recursion starts
//! uniform because the final state is unknown. All recursions use exact
//! log-sum-exp arithmetic; a max-log approximation is available as an option.
//!
//! Generator polynomials are given in octal with the most significant bit
//! acting on the current input, e.g. `0o5 = 1 + D²` and `0o7 = 1 + D + D²`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::math::log_sum_exp2;
use crate::{Error, Result};

/// Default probability floor applied to decoder extrinsics (matches
/// [`crate::marginal::DEFAULT_PROB_FLOOR`]).
use crate::marginal::DEFAULT_PROB_FLOOR;

/// A feed-forward convolutional code with one input and `n` generator
/// polynomials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvCode {
    generators: Vec<u32>,
    constraint_len: u32,
}

impl ConvCode {
    /// Builds a code from octal generator words and the constraint length
    /// `κ` (number of taps including the current input).
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] when `κ ∉ [1, 16]`, no generators are
    /// given, or a generator is zero or has taps beyond `κ`.
    pub fn new(generators: &[u32], constraint_len: u32) -> Result<Self> {
        if !(1..=16).contains(&constraint_len) {
            return Err(Error::InvalidParameter(format!(
                "constraint length must be in [1, 16], got {constraint_len}"
            )));
        }
        if generators.is_empty() {
            return Err(Error::InvalidParameter("at least one generator required".into()));
        }
        for &g in generators {
            if g == 0 || g >= (1u32 << constraint_len) {
                return Err(Error::InvalidParameter(format!(
                    "generator {g:#o} invalid for constraint length {constraint_len}"
                )));
            }
        }
        Ok(ConvCode { generators: generators.to_vec(), constraint_len })
    }

    /// Number of coded bits per info bit.
    pub fn outputs(&self) -> usize {
        self.generators.len()
    }

    /// Code rate `1/n`.
    pub fn rate(&self) -> f64 {
        1.0 / self.outputs() as f64
    }

    /// Number of trellis states `2^(κ−1)`.
    pub fn states(&self) -> usize {
        1usize << (self.constraint_len - 1)
    }

    /// The transition out of `state` on input `bit`: `(next_state, outputs)`
    /// with output bits packed little-endian by generator order.
    fn transition(&self, state: u32, bit: u32) -> (u32, u32) {
        debug_assert!(bit <= 1);
        let reg = (bit << (self.constraint_len - 1)) | state;
        let mut out = 0u32;
        for (j, &g) in self.generators.iter().enumerate() {
            out |= ((reg & g).count_ones() & 1) << j;
        }
        (reg >> 1, out)
    }

    /// Encodes an info-bit slice from the zero state, without termination.
    /// Output order is generator order within each step.
    pub fn encode(&self, info: &[u8]) -> Vec<u8> {
        let mut state = 0u32;
        let mut coded = Vec::with_capacity(info.len() * self.outputs());
        for &b in info {
            debug_assert!(b <= 1);
            let (next, out) = self.transition(state, b as u32);
            for j in 0..self.outputs() {
                coded.push(((out >> j) & 1) as u8);
            }
            state = next;
        }
        coded
    }
}

/// A sequence of per-bit binary distributions `[p(0), p(1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BitProbabilityStream {
    pairs: Vec<[f64; 2]>,
}

impl BitProbabilityStream {
    /// All-uniform stream of the given length.
    pub fn uniform(len: usize) -> Self {
        BitProbabilityStream { pairs: vec![[0.5, 0.5]; len] }
    }

    /// Builds a stream from raw pairs, normalizing each.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] when a pair has a negative or non-finite
    /// entry or zero total mass.
    pub fn from_pairs(pairs: Vec<[f64; 2]>) -> Result<Self> {
        let mut out = pairs;
        for (i, p) in out.iter_mut().enumerate() {
            if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "pair {i} has invalid entries [{}, {}]",
                    p[0], p[1]
                )));
            }
            let total = p[0] + p[1];
            if total <= 0.0 {
                return Err(Error::InvalidParameter(format!("pair {i} has zero mass")));
            }
            p[0] /= total;
            p[1] /= total;
        }
        Ok(BitProbabilityStream { pairs: out })
    }

    /// Near-certain stream for known bits: the stated bit gets `1 − eps`.
    pub fn from_bits(bits: &[u8], eps: f64) -> Self {
        assert!((0.0..0.5).contains(&eps));
        let pairs = bits
            .iter()
            .map(|&b| {
                debug_assert!(b <= 1);
                if b == 0 {
                    [1.0 - eps, eps]
                } else {
                    [eps, 1.0 - eps]
                }
            })
            .collect();
        BitProbabilityStream { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> [f64; 2] {
        self.pairs[i]
    }

    /// The raw pairs.
    pub fn pairs(&self) -> &[[f64; 2]] {
        &self.pairs
    }

    /// Applies `max(p, floor)` entrywise and renormalizes each pair.
    pub fn floor_and_normalize(&mut self, floor: f64) {
        assert!((0.0..0.5).contains(&floor));
        for p in &mut self.pairs {
            p[0] = p[0].max(floor);
            p[1] = p[1].max(floor);
            let total = p[0] + p[1];
            p[0] /= total;
            p[1] /= total;
        }
    }

    /// Largest absolute entrywise difference against another stream of the
    /// same length.
    pub fn max_abs_diff(&self, other: &BitProbabilityStream) -> f64 {
        assert_eq!(self.len(), other.len());
        self.pairs
            .iter()
            .zip(&other.pairs)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max)
    }
}

/// A fixed permutation applied to bit or probability streams.
///
/// `interleave` gathers: `out[i] = in[perm[i]]`; `deinterleave` is its exact
/// inverse, so `deinterleave(interleave(x)) = x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Interleaver {
    /// The identity permutation of length `n`.
    pub fn identity(n: usize) -> Self {
        let perm: Vec<usize> = (0..n).collect();
        Interleaver { inv: perm.clone(), perm }
    }

    /// A uniformly random permutation of length `n` drawn from `rng`.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Interleaver::from_permutation(perm).expect("shuffled identity is a bijection")
    }

    /// Builds an interleaver from an explicit permutation.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] unless `perm` is a bijection on `0..n`.
    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut inv = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inv[p] != usize::MAX {
                return Err(Error::InvalidParameter(format!(
                    "permutation entry {p} at position {i} is out of range or repeated"
                )));
            }
            inv[p] = i;
        }
        Ok(Interleaver { perm, inv })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.perm.len() {
            return Err(Error::LengthMismatch(format!(
                "stream of length {got} through an interleaver of length {}",
                self.perm.len()
            )));
        }
        Ok(())
    }

    /// Permutes bits into channel order.
    pub fn interleave_bits(&self, x: &[u8]) -> Result<Vec<u8>> {
        self.check_len(x.len())?;
        Ok(self.perm.iter().map(|&p| x[p]).collect())
    }

    /// Restores encoder order.
    pub fn deinterleave_bits(&self, x: &[u8]) -> Result<Vec<u8>> {
        self.check_len(x.len())?;
        Ok(self.inv.iter().map(|&p| x[p]).collect())
    }

    /// Permutes probability pairs into channel order.
    pub fn interleave_probs(&self, s: &BitProbabilityStream) -> Result<BitProbabilityStream> {
        self.check_len(s.len())?;
        Ok(BitProbabilityStream { pairs: self.perm.iter().map(|&p| s.pairs[p]).collect() })
    }

    /// Restores encoder order for probability pairs.
    pub fn deinterleave_probs(&self, s: &BitProbabilityStream) -> Result<BitProbabilityStream> {
        self.check_len(s.len())?;
        Ok(BitProbabilityStream { pairs: self.inv.iter().map(|&p| s.pairs[p]).collect() })
    }
}

/// Decoder options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcjrOptions {
    /// Replace log-sum-exp by max (suboptimal but cheaper). Default: off.
    pub max_log: bool,
    /// Floor applied to the coded-bit extrinsic pairs before renormalizing;
    /// `0.0` disables flooring. Info posteriors are never floored.
    pub floor: f64,
}

impl Default for BcjrOptions {
    fn default() -> Self {
        BcjrOptions { max_log: false, floor: DEFAULT_PROB_FLOOR }
    }
}

/// Decoder output: coded-bit extrinsics and info-bit posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct BcjrOutput {
    pub coded_extrinsic: BitProbabilityStream,
    pub info_posterior: BitProbabilityStream,
}

/// Exact MAP decoding with default options ([`BcjrOptions`]).
///
/// # Errors
/// See [`bcjr_decode_with`].
pub fn bcjr_decode(priors: &BitProbabilityStream, code: &ConvCode) -> Result<BcjrOutput> {
    bcjr_decode_with(priors, code, &BcjrOptions::default())
}

/// Forward-backward MAP decoding of one unterminated frame.
///
/// `priors` holds one pair per coded bit in encoder order. The forward
/// recursion starts in the zero state (where the encoder starts); the
/// backward recursion starts uniform. Info-bit priors are uniform — all
/// soft information about the data enters through the coded-bit pairs.
///
/// The returned extrinsic for coded bit `i` excludes that bit's own prior,
/// so `extrinsic ⊙ prior`, renormalized, is the coded-bit posterior.
///
/// # Errors
/// [`Error::LengthMismatch`] when the stream length is not a positive
/// multiple of the generator count.
pub fn bcjr_decode_with(
    priors: &BitProbabilityStream,
    code: &ConvCode,
    opts: &BcjrOptions,
) -> Result<BcjrOutput> {
    let n_out = code.outputs();
    let len = priors.len();
    if len == 0 || len % n_out != 0 {
        return Err(Error::LengthMismatch(format!(
            "coded length {len} is not a positive multiple of {n_out} outputs"
        )));
    }
    let steps = len / n_out;
    let states = code.states();
    let combine: fn(f64, f64) -> f64 =
        if opts.max_log { f64::max } else { log_sum_exp2 };

    // Transition tables: next state and packed outputs per (state, input).
    let mut next = vec![[0usize; 2]; states];
    let mut outs = vec![[0u32; 2]; states];
    for s in 0..states {
        for b in 0..2 {
            let (ns, o) = code.transition(s as u32, b as u32);
            next[s][b] = ns as usize;
            outs[s][b] = o;
        }
    }

    // Log priors per coded bit; ln(0) = −inf flows through the recursions
    // as "impossible" without special cases.
    let lp: Vec<[f64; 2]> = priors.pairs.iter().map(|p| [p[0].ln(), p[1].ln()]).collect();
    let branch_lp = |t: usize, out: u32| -> f64 {
        let mut acc = 0.0;
        for j in 0..n_out {
            acc += lp[t * n_out + j][((out >> j) & 1) as usize];
        }
        acc
    };

    // Forward metrics, normalized per step to keep magnitudes bounded.
    let neg_inf = f64::NEG_INFINITY;
    let mut alpha = vec![neg_inf; (steps + 1) * states];
    alpha[0] = 0.0; // encoder starts in state 0
    for t in 0..steps {
        let (cur, nxt) = alpha[t * states..].split_at_mut(states);
        for v in nxt[..states].iter_mut() {
            *v = neg_inf;
        }
        for s in 0..states {
            if cur[s] == neg_inf {
                continue;
            }
            for b in 0..2 {
                let m = cur[s] + branch_lp(t, outs[s][b]);
                let tgt = &mut nxt[next[s][b]];
                *tgt = combine(*tgt, m);
            }
        }
        let max = nxt[..states].iter().copied().fold(neg_inf, f64::max);
        if max > neg_inf {
            for v in nxt[..states].iter_mut() {
                *v -= max;
            }
        }
    }

    // Backward metrics from a uniform end state, plus the per-bit outputs,
    // computed step by step so only one β column is alive at a time.
    let mut beta = vec![0.0f64; states];
    let mut info_pairs = vec![[0.0f64; 2]; steps];
    let mut coded_pairs = vec![[0.0f64; 2]; len];
    for t in (0..steps).rev() {
        let a = &alpha[t * states..(t + 1) * states];
        let mut info_l = [neg_inf; 2];
        // Extrinsic accumulators per output position and bit value.
        let mut ext_l = vec![[neg_inf; 2]; n_out];
        let mut beta_new = vec![neg_inf; states];
        for s in 0..states {
            for b in 0..2 {
                let out = outs[s][b];
                let g = branch_lp(t, out);
                let m_fwd = a[s];
                let m_bwd = beta[next[s][b]];
                // β recursion uses the full branch metric.
                beta_new[s] = combine(beta_new[s], g + m_bwd);
                if m_fwd == neg_inf {
                    continue;
                }
                let full = m_fwd + g + m_bwd;
                info_l[b] = combine(info_l[b], full);
                // Extrinsic: divide this bit's own prior out of the branch.
                for (j, e) in ext_l.iter_mut().enumerate() {
                    let bit = ((out >> j) & 1) as usize;
                    let excl = full - lp[t * n_out + j][bit];
                    e[bit] = combine(e[bit], excl);
                }
            }
        }
        let max = beta_new.iter().copied().fold(neg_inf, f64::max);
        if max > neg_inf {
            for v in &mut beta_new {
                *v -= max;
            }
        }
        beta.copy_from_slice(&beta_new);

        info_pairs[t] = normalize_log_pair(info_l);
        for j in 0..n_out {
            coded_pairs[t * n_out + j] = normalize_log_pair(ext_l[j]);
        }
    }

    let mut coded_extrinsic = BitProbabilityStream { pairs: coded_pairs };
    if opts.floor > 0.0 {
        coded_extrinsic.floor_and_normalize(opts.floor);
    }
    Ok(BcjrOutput { coded_extrinsic, info_posterior: BitProbabilityStream { pairs: info_pairs } })
}

/// Exponentiates a log-domain pair into a normalized probability pair.
fn normalize_log_pair(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    if m == f64::NEG_INFINITY {
        // No mass on either value (can only happen with hard-zero priors on
        // contradictory patterns); fall back to uniform.
        return [0.5, 0.5];
    }
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let total = e[0] + e[1];
    [e[0] / total, e[1] / total]
}

/// Hard bit decisions from a posterior stream; exact ties go to 0.
pub fn hard_decide(posterior: &BitProbabilityStream) -> Vec<u8> {
    posterior.pairs.iter().map(|p| u8::from(p[1] > p[0])).collect()
}
