//! Transmitter and channel model: constellations, antipodal random spreading,
//! noise calibration, encoding/interleaving/mapping, and channel simulation.
//!
//! Conventions used throughout the crate:
//!
//! * All `K` users are symbol-synchronous and share one `L`-chip window per
//!   channel use. The received vector is `r = S·d + z` with `S` the `L×K`
//!   spreading matrix and `d` the users' symbol vector.
//! * Noise is circular complex Gaussian with variance `σ²` per real
//!   dimension, so the total noise energy per complex dimension is
//!   `N₀ = 2σ²` and `p(r|d) ∝ exp(−‖r − S·d‖²/N₀)`.
//! * The operating point in dB relates to `σ²` through
//!   `Eb/N0 = P / (2σ²·R·log₂Q)` for symbol power `P`, code rate `R` and
//!   alphabet size `Q`.
//! * Symbol labels are natural binary, most significant bit first. For BPSK
//!   bit 0 maps to `+√P` and bit 1 to `−√P`.
//!
//! When the constellation and the spreading are both real, the imaginary
//! part of `r` carries no information about `d` — it only adds a constant to
//! every sequence metric — so receivers may discard it
//! ([`Observation::discard_imaginary`]) and work on the real part with the
//! same `N₀ = 2σ²` convention. The likelihood keeps the identical form
//! `exp(−‖r − S·d‖²/N₀)` in both paths.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::fec::{ConvCode, Interleaver};
use crate::{Error, Result};

/// A memoryless symbol alphabet with its bit labeling.
///
/// Invariants enforced at construction: the size is a power of two (at least
/// 2), symbols are pairwise distinct, the alphabet has zero mean, and the
/// average energy (`power`) is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    symbols: Vec<Complex64>,
    power: f64,
    bits_per_symbol: usize,
}

impl Constellation {
    /// Builds a constellation from explicit symbol values.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] unless the alphabet size is a power of two
    /// of at least 2; [`Error::DegenerateConstellation`] for repeated symbols,
    /// a nonzero mean, or zero average power.
    pub fn new(symbols: Vec<Complex64>) -> Result<Self> {
        let q = symbols.len();
        if q < 2 || !q.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "alphabet size must be a power of two >= 2, got {q}"
            )));
        }
        let power = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / q as f64;
        if power <= 0.0 || !power.is_finite() {
            return Err(Error::DegenerateConstellation(format!(
                "average symbol energy must be positive and finite, got {power}"
            )));
        }
        let scale = power.sqrt().max(1.0);
        let mean = symbols.iter().sum::<Complex64>() / q as f64;
        if mean.norm() > 1e-9 * scale {
            return Err(Error::DegenerateConstellation(format!(
                "alphabet mean must be zero, got {mean}"
            )));
        }
        for i in 0..q {
            for j in (i + 1)..q {
                if (symbols[i] - symbols[j]).norm() <= 1e-9 * scale {
                    return Err(Error::DegenerateConstellation(format!(
                        "symbols {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Constellation { symbols, power, bits_per_symbol: q.trailing_zeros() as usize })
    }

    /// Antipodal binary alphabet `{+√P, −√P}`; bit 0 is the positive symbol.
    pub fn bpsk(power: f64) -> Self {
        let a = power.sqrt();
        Constellation::new(vec![Complex64::new(a, 0.0), Complex64::new(-a, 0.0)])
            .expect("BPSK alphabet is always valid for positive power")
    }

    /// Square 16-point QAM with average energy `power`, Gray-free natural
    /// labeling (the two high bits select the in-phase level).
    pub fn qam16(power: f64) -> Self {
        let unit = (power / 10.0).sqrt();
        let levels = [-3.0, -1.0, 1.0, 3.0];
        let mut symbols = Vec::with_capacity(16);
        for &re in &levels {
            for &im in &levels {
                symbols.push(Complex64::new(re * unit, im * unit));
            }
        }
        Constellation::new(symbols).expect("16-QAM alphabet is always valid for positive power")
    }

    /// Number of symbols `Q`.
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// The symbol values, indexed by label.
    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    /// Average symbol energy `P`.
    pub fn power(&self) -> f64 {
        self.power
    }

    /// `log₂ Q`.
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// True when every symbol has zero imaginary part, which enables the
    /// real receiver path.
    pub fn is_real(&self) -> bool {
        self.symbols.iter().all(|s| s.im == 0.0)
    }

    /// Maps `log₂ Q` bits (MSB first) to a symbol index.
    pub fn index_for_bits(&self, bits: &[u8]) -> usize {
        assert_eq!(bits.len(), self.bits_per_symbol, "wrong number of label bits");
        bits.iter().fold(0usize, |acc, &b| {
            debug_assert!(b <= 1);
            (acc << 1) | b as usize
        })
    }

    /// Inverse of [`Constellation::index_for_bits`].
    pub fn bits_for_index(&self, index: usize) -> Vec<u8> {
        assert!(index < self.size());
        (0..self.bits_per_symbol)
            .map(|j| ((index >> (self.bits_per_symbol - 1 - j)) & 1) as u8)
            .collect()
    }
}

/// Converts independent per-bit probability pairs (one `[p0, p1]` pair per
/// label bit, MSB first) into a normalized symbol distribution.
pub fn symbol_column_from_bit_pairs(pairs: &[[f64; 2]], constellation: &Constellation) -> Vec<f64> {
    assert_eq!(pairs.len(), constellation.bits_per_symbol(), "one pair per label bit");
    let b = pairs.len();
    let q = constellation.size();
    let mut col = vec![0.0; q];
    for (idx, slot) in col.iter_mut().enumerate() {
        let mut p = 1.0;
        for (j, pair) in pairs.iter().enumerate() {
            let bit = (idx >> (b - 1 - j)) & 1;
            p *= pair[bit];
        }
        *slot = p;
    }
    let total: f64 = col.iter().sum();
    assert!(total > 0.0, "bit pairs assign zero mass to every symbol");
    for v in &mut col {
        *v /= total;
    }
    col
}

/// Marginalizes a symbol distribution back into per-bit probability pairs
/// (MSB first). Inverse of [`symbol_column_from_bit_pairs`] for independent
/// bit inputs.
pub fn bit_pairs_from_symbol_column(col: &[f64], constellation: &Constellation) -> Vec<[f64; 2]> {
    assert_eq!(col.len(), constellation.size(), "one probability per symbol");
    let b = constellation.bits_per_symbol();
    let mut pairs = vec![[0.0f64; 2]; b];
    for (idx, &p) in col.iter().enumerate() {
        for (j, pair) in pairs.iter_mut().enumerate() {
            let bit = (idx >> (b - 1 - j)) & 1;
            pair[bit] += p;
        }
    }
    for pair in &mut pairs {
        let total = pair[0] + pair[1];
        assert!(total > 0.0, "symbol column has zero total mass");
        pair[0] /= total;
        pair[1] /= total;
    }
    pairs
}

/// The `L×K` spreading matrix: one unit-norm column of `±1/√L` chips per
/// user, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingMatrix {
    l: usize,
    k: usize,
    chips: Vec<f64>,
}

impl SpreadingMatrix {
    /// Builds a spreading matrix from per-user columns.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] when any entry differs from `±1/√L`;
    /// [`Error::LengthMismatch`] for ragged columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::InvalidParameter("spreading needs at least one user".into()));
        }
        let l = columns[0].len();
        if l == 0 {
            return Err(Error::InvalidParameter("spreading needs at least one chip".into()));
        }
        let amp = 1.0 / (l as f64).sqrt();
        let mut chips = Vec::with_capacity(l * k);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != l {
                return Err(Error::LengthMismatch(format!(
                    "column {j} has {} chips, expected {l}",
                    col.len()
                )));
            }
            for &c in col {
                if (c.abs() - amp).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "chip {c} in column {j} is not ±1/√{l}"
                    )));
                }
                chips.push(c);
            }
        }
        Ok(SpreadingMatrix { l, k, chips })
    }

    /// Number of chips per channel use `L`.
    pub fn gain(&self) -> usize {
        self.l
    }

    /// Number of users `K`.
    pub fn users(&self) -> usize {
        self.k
    }

    /// User `j`'s chips as a contiguous slice of length `L`.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        debug_assert!(j < self.k);
        &self.chips[j * self.l..(j + 1) * self.l]
    }
}

/// Draws an `L×K` spreading matrix with independent equiprobable `±1/√L`
/// chips from the given stream.
pub fn draw_spreading(l: usize, k: usize, rng: &mut impl Rng) -> SpreadingMatrix {
    assert!(l > 0 && k > 0, "spreading shape must be nonzero");
    let amp = 1.0 / (l as f64).sqrt();
    let chips = (0..l * k).map(|_| if rng.random::<bool>() { amp } else { -amp }).collect();
    SpreadingMatrix { l, k, chips }
}

/// Channel noise level: `σ²` per real dimension and `N₀ = 2σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma2: f64,
    n0: f64,
}

impl NoiseSpec {
    /// Builds the description from the per-real-dimension variance.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] unless `σ²` is positive and finite.
    pub fn from_sigma2(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive and finite, got {sigma2}"
            )));
        }
        Ok(NoiseSpec { sigma2, n0: 2.0 * sigma2 })
    }

    /// Noise variance per real dimension.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Total noise energy per complex dimension, `N₀ = 2σ²`.
    pub fn n0(&self) -> f64 {
        self.n0
    }
}

/// Translates an `Eb/N0` operating point in dB into the noise level, using
/// `Eb/N0 = P / (2σ²·R·log₂Q)`.
///
/// # Errors
/// [`Error::InvalidParameter`] for `rate ∉ (0, 1]`, nonpositive `power`, or
/// an alphabet size that is not a power of two of at least 2.
pub fn ebn0_to_noise(ebn0_db: f64, rate: f64, q: usize, power: f64) -> Result<NoiseSpec> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidParameter(format!("code rate must be in (0, 1], got {rate}")));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::InvalidParameter(format!("symbol power must be positive, got {power}")));
    }
    if q < 2 || !q.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "alphabet size must be a power of two >= 2, got {q}"
        )));
    }
    if !ebn0_db.is_finite() {
        return Err(Error::InvalidParameter(format!("Eb/N0 must be finite, got {ebn0_db} dB")));
    }
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    let bits = (q as f64).log2();
    NoiseSpec::from_sigma2(power / (2.0 * ebn0 * rate * bits))
}

/// One frame of modulated traffic: the symbol index chosen by each user at
/// each channel use, plus the raw (pre-interleaving) coded bits that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    n: usize,
    k: usize,
    /// Row-major `N×K` symbol indices.
    indices: Vec<u8>,
    /// Encoder output per user, before interleaving.
    coded_bits: Vec<Vec<u8>>,
}

impl SymbolFrame {
    /// Number of channel uses `N`.
    pub fn uses(&self) -> usize {
        self.n
    }

    /// Number of users `K`.
    pub fn users(&self) -> usize {
        self.k
    }

    /// All users' symbol indices at channel use `n`.
    #[inline]
    pub fn row(&self, n: usize) -> &[u8] {
        debug_assert!(n < self.n);
        &self.indices[n * self.k..(n + 1) * self.k]
    }

    /// User `k`'s raw coded bits (pre-interleaving).
    pub fn coded_bits(&self, k: usize) -> &[u8] {
        &self.coded_bits[k]
    }
}

/// Encodes, interleaves and maps every user's information bits onto one
/// symbol frame. Frames are unterminated: `I` info bits become exactly
/// `I/R` coded bits and `I/(R·log₂Q)` channel uses.
///
/// # Errors
/// [`Error::LengthMismatch`] when users disagree on frame length, an
/// interleaver does not match the coded length, or the coded length is not
/// divisible by `log₂Q`; [`Error::InvalidParameter`] for empty input or
/// non-binary "bits".
pub fn encode_and_modulate(
    info_bits: &[Vec<u8>],
    code: &ConvCode,
    interleavers: &[Interleaver],
    constellation: &Constellation,
) -> Result<SymbolFrame> {
    let k = info_bits.len();
    if k == 0 {
        return Err(Error::InvalidParameter("at least one user required".into()));
    }
    if interleavers.len() != k {
        return Err(Error::LengthMismatch(format!(
            "{} interleavers for {k} users",
            interleavers.len()
        )));
    }
    let i_len = info_bits[0].len();
    if i_len == 0 {
        return Err(Error::InvalidParameter("frames must carry at least one info bit".into()));
    }
    let b = constellation.bits_per_symbol();
    let coded_len = i_len * code.outputs();
    if coded_len % b != 0 {
        return Err(Error::LengthMismatch(format!(
            "coded length {coded_len} is not divisible by {b} bits per symbol"
        )));
    }
    let n = coded_len / b;

    let mut indices = vec![0u8; n * k];
    let mut coded_all = Vec::with_capacity(k);
    for (user, bits) in info_bits.iter().enumerate() {
        if bits.len() != i_len {
            return Err(Error::LengthMismatch(format!(
                "user {user} has {} info bits, expected {i_len}",
                bits.len()
            )));
        }
        if bits.iter().any(|&x| x > 1) {
            return Err(Error::InvalidParameter(format!("user {user} info bits must be 0/1")));
        }
        let coded = code.encode(bits);
        let sent = interleavers[user].interleave_bits(&coded)?;
        for (use_n, chunk) in sent.chunks_exact(b).enumerate() {
            indices[use_n * k + user] = constellation.index_for_bits(chunk) as u8;
        }
        coded_all.push(coded);
    }
    Ok(SymbolFrame { n, k, indices, coded_bits: coded_all })
}

/// One received chip vector `r = S·d + z` of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub r: Vec<Complex64>,
}

impl Observation {
    /// Zeroes the imaginary part. For a real constellation and real
    /// spreading this changes every sequence metric by the same constant
    /// and therefore no posterior, while halving receiver arithmetic.
    pub fn discard_imaginary(&mut self) {
        for v in &mut self.r {
            v.im = 0.0;
        }
    }
}

/// Simulates one channel use: `r = S·d + z` with independent zero-mean
/// Gaussian real and imaginary noise parts of variance `σ²` each. Draws
/// `2L` Gaussians in a fixed order (real then imaginary per chip).
pub fn simulate_channel_use(
    s: &SpreadingMatrix,
    symbol_row: &[u8],
    constellation: &Constellation,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Observation {
    assert_eq!(symbol_row.len(), s.users(), "one symbol per user");
    let sigma = noise.sigma2().sqrt();
    let syms = constellation.symbols();
    let mut r = vec![Complex64::new(0.0, 0.0); s.gain()];
    for (j, &idx) in symbol_row.iter().enumerate() {
        let d = syms[idx as usize];
        for (rl, &chip) in r.iter_mut().zip(s.column(j)) {
            *rl += d * chip;
        }
    }
    for rl in &mut r {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *rl += Complex64::new(re * sigma, im * sigma);
    }
    Observation { r }
}

/// Simulates a whole frame over a spreading matrix held constant for all of
/// its channel uses.
///
/// # Errors
/// [`Error::DimensionMismatch`] when the spreading and frame disagree on the
/// user count.
pub fn simulate_channel(
    s: &SpreadingMatrix,
    frame: &SymbolFrame,
    constellation: &Constellation,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<Vec<Observation>> {
    if s.users() != frame.users() {
        return Err(Error::DimensionMismatch(format!(
            "spreading has {} users, frame has {}",
            s.users(),
            frame.users()
        )));
    }
    Ok((0..frame.uses())
        .map(|n| simulate_channel_use(s, frame.row(n), constellation, noise, rng))
        .collect())
}
