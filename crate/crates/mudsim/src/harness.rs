//! Iterative-receiver loop, Monte-Carlo driver, and report emission.
//!
//! A run simulates frames of an overloaded direct-sequence system: every
//! user convolutionally encodes its information bits, interleaves them with
//! a user-specific permutation, maps them onto BPSK symbols, and transmits
//! through a shared short-code channel. The receiver couples an inner
//! multiuser detector with one outer decoder per user. Each iteration the
//! detector consumes interleaved coded-bit priors and produces extrinsic
//! symbol probabilities for every channel use; those are deinterleaved,
//! decoded, and the decoders' coded extrinsics come back — reinterleaved —
//! as the next iteration's priors. Hard decisions on the decoders' info-bit
//! posteriors are scored after every iteration, so a [`BerReport`] carries
//! one row per iteration.
//!
//! Frames are the unit of parallelism. Every frame derives its own random
//! streams from the master seed, so reports are byte-identical for a fixed
//! config regardless of worker count or scheduling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lmmse_detect, soft_pic_detect};
use crate::fec::{
    bcjr_decode_with, hard_decide, BcjrOptions, BitProbabilityStream, ConvCode, Interleaver,
};
use crate::gram::{matched_filter, GramTransform};
use crate::marginal::{extrinsic_from_posterior, list_to_posteriors, ProbabilityMatrix};
use crate::model::{
    bit_pairs_from_symbol_column, draw_spreading, ebn0_to_noise, encode_and_modulate,
    simulate_channel_use, symbol_column_from_bit_pairs, Constellation, NoiseSpec, SpreadingMatrix,
};
use crate::oracle::brute_force_symbol_app;
use crate::rng::{derive_stream, StreamRole};
use crate::search::{t_search_with_stats, SearchParams};
use crate::{Error, Result};

/// Generator polynomials (octal 5 and 7) of the rate-1/2 convolutional code
/// every harness run protects its users with.
pub const CODE_GENERATORS: [u32; 2] = [0o5, 0o7];

/// Constraint length of the harness code.
pub const CODE_CONSTRAINT_LENGTH: u32 = 3;

/// Margin added when choosing the diagonal-loading constant; with BPSK this
/// yields ρ = K, the smallest integer value that keeps the loaded Gram
/// matrix positive-definite for every spreading draw.
pub const RHO_MARGIN: f64 = 1.0;

/// The inner multiuser detector a run plugs into the iteration loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Breadth-first list detection over the rank-restored triangular
    /// factorization, with threshold and survivor-bound pruning.
    Talg,
    /// Soft-input parallel interference cancellation.
    Pic,
    /// Soft-input LMMSE filtering with per-user interference cancellation.
    Lmmse,
    /// Exact marginalization over all `2^K` sequences; feasible only for
    /// small user counts.
    Exhaustive,
}

impl DetectorKind {
    /// The flag-style name (`talg`, `pic`, `lmmse`, `exhaustive`).
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Talg => "talg",
            DetectorKind::Pic => "pic",
            DetectorKind::Lmmse => "lmmse",
            DetectorKind::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "talg" => Ok(DetectorKind::Talg),
            "pic" => Ok(DetectorKind::Pic),
            "lmmse" => Ok(DetectorKind::Lmmse),
            "exhaustive" => Ok(DetectorKind::Exhaustive),
            other => Err(Error::InvalidParameter(format!(
                "unknown detector '{other}' (expected talg, pic, lmmse, or exhaustive)"
            ))),
        }
    }
}

/// How often the spreading matrix is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadingCadence {
    /// One draw per frame, held constant over all of its channel uses, so
    /// one Gram factorization per frame is amortized over the whole frame.
    PerFrame,
    /// A fresh draw every channel use (long-code operation); every use pays
    /// its own factorization.
    PerSymbol,
}

impl fmt::Display for SpreadingCadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpreadingCadence::PerFrame => "per-frame",
            SpreadingCadence::PerSymbol => "per-symbol",
        })
    }
}

impl FromStr for SpreadingCadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-frame" => Ok(SpreadingCadence::PerFrame),
            "per-symbol" => Ok(SpreadingCadence::PerSymbol),
            other => Err(Error::InvalidParameter(format!(
                "unknown spreading cadence '{other}' (expected per-frame or per-symbol)"
            ))),
        }
    }
}

/// Output encodings for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidParameter(format!(
                "unknown report format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// Complete description of one Monte-Carlo run.
///
/// The physical layer is fixed by the harness: BPSK with unit power, the
/// rate-1/2 code in [`CODE_GENERATORS`], and one user-specific random
/// interleaver per user derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Active users K.
    pub users: usize,
    /// Spreading gain L: chips (observation dimensions) per channel use.
    pub gain: usize,
    /// Per-bit SNR in dB; converted to noise via the code rate.
    pub ebn0_db: f64,
    /// Detector/decoder exchanges per frame.
    pub iterations: usize,
    /// Inner detector.
    pub detector: DetectorKind,
    /// List-search threshold in units of N₀ (used by `talg` only).
    pub t_threshold: f64,
    /// Survivor cap per search level (`talg` only).
    pub p_max: usize,
    /// Survivor floor per search level (`talg` only).
    pub p_min: usize,
    /// Frames to simulate.
    pub frames: usize,
    /// Information bits per user per frame.
    pub info_bits_per_frame: usize,
    /// Master seed; all random streams derive from it.
    pub seed: u64,
    /// Probability floor applied to exchanged distributions.
    pub floor: f64,
    /// Spreading redraw cadence.
    pub spreading: SpreadingCadence,
    /// Where [`emit_report`] writes the report; `None` means stdout.
    pub output: Option<String>,
}

impl SimConfig {
    /// The benchmark operating point: L=8, 5 dB, five iterations of the
    /// list detector with T=16·N₀, p_max=512, 500 info bits per frame, 100
    /// frames, and the survivor floor from [`SimConfig::default_p_min`].
    ///
    /// Spreading is redrawn per symbol. Holding one draw per frame leaves
    /// roughly three frames in five with a duplicated (or negated) column
    /// pair at K=16, pinning a pairwise symbol ambiguity onto the same two
    /// users for every channel use of the frame; the outer code then needs
    /// several extra iterations to break it. Redrawing per use scatters
    /// those collisions across users and positions, where single-frame
    /// interleaving resolves them — the regime the benchmark targets.
    pub fn benchmark(users: usize) -> Self {
        SimConfig {
            users,
            gain: 8,
            ebn0_db: 5.0,
            iterations: 5,
            detector: DetectorKind::Talg,
            t_threshold: 16.0,
            p_max: 512,
            p_min: Self::default_p_min(users),
            frames: 100,
            info_bits_per_frame: 500,
            seed: 42,
            floor: crate::marginal::DEFAULT_PROB_FLOOR,
            spreading: SpreadingCadence::PerSymbol,
            output: None,
        }
    }

    /// Survivor floor schedule for the benchmark: heavier overloads need a
    /// larger floor to keep early iterations from locking onto confident
    /// but wrong priors.
    pub fn default_p_min(users: usize) -> usize {
        match users {
            0..=16 => 32,
            17 | 18 => 64,
            _ => 128,
        }
    }

    /// # Errors
    /// [`Error::InvalidParameter`] when any count is zero, the SNR or floor
    /// is out of range, the search bounds are inconsistent, or exhaustive
    /// detection is requested for more than 20 users.
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::InvalidParameter("at least one user required".into()));
        }
        if self.gain == 0 {
            return Err(Error::InvalidParameter("spreading gain must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("at least one iteration required".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidParameter("at least one frame required".into()));
        }
        if self.info_bits_per_frame == 0 {
            return Err(Error::InvalidParameter(
                "at least one information bit per frame required".into(),
            ));
        }
        if !self.ebn0_db.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Eb/N0 must be finite, got {} dB",
                self.ebn0_db
            )));
        }
        if !(0.0..0.5).contains(&self.floor) {
            return Err(Error::InvalidParameter(format!(
                "probability floor must lie in [0, 0.5) for binary symbols, got {}",
                self.floor
            )));
        }
        if self.detector == DetectorKind::Talg {
            self.search_params().validate()?;
        }
        if self.detector == DetectorKind::Exhaustive && self.users > 20 {
            return Err(Error::InvalidParameter(format!(
                "exhaustive detection enumerates 2^K sequences; K = {} exceeds the K <= 20 limit",
                self.users
            )));
        }
        Ok(())
    }

    /// Noise level implied by `ebn0_db` under the harness code rate and
    /// unit-power BPSK.
    ///
    /// # Errors
    /// [`Error::InvalidParameter`] for a non-finite SNR.
    pub fn noise(&self) -> Result<NoiseSpec> {
        let rate = 1.0 / CODE_GENERATORS.len() as f64;
        ebn0_to_noise(self.ebn0_db, rate, 2, 1.0)
    }

    /// Channel uses per frame: one BPSK symbol per coded bit.
    pub fn uses_per_frame(&self) -> usize {
        self.info_bits_per_frame * CODE_GENERATORS.len()
    }

    /// Rough upper bound on total detector work for the run, in scored-node
    /// units, used by the CLI to keep long runs opt-in.
    pub fn work_estimate(&self) -> f64 {
        let uses = (self.frames * self.uses_per_frame()) as f64;
        let k = self.users as f64;
        let per_use = match self.detector {
            DetectorKind::Talg => k * self.p_max as f64 * 2.0,
            DetectorKind::Exhaustive => k * 2f64.powi(self.users as i32),
            DetectorKind::Pic | DetectorKind::Lmmse => k * k,
        };
        uses * self.iterations as f64 * per_use
    }

    fn search_params(&self) -> SearchParams {
        SearchParams {
            t_threshold: self.t_threshold,
            p_max: self.p_max,
            p_min: self.p_min,
            p_list: self.p_max,
            prior_floor: self.floor,
        }
    }
}

/// Per-iteration tallies from one simulated frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutcome {
    /// Wrong info-bit decisions, summed over users, per iteration.
    pub bit_errors: Vec<u64>,
    /// Detector work per iteration: children scored by the list search, or
    /// sequences enumerated by the exhaustive detector; zero for the
    /// cancellation baselines.
    pub node_expansions: Vec<u64>,
}

/// One report row: the receiver's state of knowledge after an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Information bits scored (frames · users · info bits per frame).
    pub bits: u64,
    /// Wrong hard decisions over those bits.
    pub bit_errors: u64,
    /// Exactly `bit_errors / bits`.
    pub ber: f64,
    /// Total detector work this iteration (see [`FrameOutcome`]).
    pub node_expansions: u64,
    /// `node_expansions` divided by the number of channel uses.
    pub avg_node_expansions: f64,
}

/// Aggregated result of a run: one row per iteration plus the exact config
/// that produced it. Serialization is deterministic — no timestamps, stable
/// field order — so equal configs yield byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    /// Crate version that produced the report.
    pub version: String,
    /// Echo of the config the run used.
    pub config: SimConfig,
    /// Per-iteration tallies, iteration 1 first.
    pub rows: Vec<IterationRow>,
}

impl BerReport {
    /// BER after the final iteration.
    pub fn final_ber(&self) -> f64 {
        self.rows.last().map_or(0.0, |row| row.ber)
    }

    /// Plot-ready CSV: a header plus one line per iteration.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("detector,K,L,ebn0_db,iteration,frames,bits,bit_errors,ber,avg_node_expansions\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.config.detector,
                self.config.users,
                self.config.gain,
                self.config.ebn0_db,
                row.iteration,
                self.config.frames,
                row.bits,
                row.bit_errors,
                row.ber,
                row.avg_node_expansions,
            ));
        }
        out
    }

    /// Pretty-printed JSON mirroring the CSV plus the config echo.
    ///
    /// # Errors
    /// [`Error::Json`] on serialization failure.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// `v[n]` for per-use sequences, or the single shared element.
fn pick<T>(v: &[T], n: usize) -> &T {
    if v.len() == 1 {
        &v[0]
    } else {
        &v[n]
    }
}

/// Simulates and decodes one frame.
///
/// The frame draws its information bits, spreading, and noise from streams
/// keyed by `frame_index`, while the per-user interleavers depend only on
/// the master seed (they are part of the receiver design, constant across
/// frames). Iteration 1 runs the detector with uniform priors; every
/// iteration thereafter uses the decoders' reinterleaved coded extrinsics.
///
/// # Errors
/// Invalid configs and propagated module failures; a frame never silently
/// drops.
pub fn run_frame(config: &SimConfig, frame_index: u64) -> Result<FrameOutcome> {
    config.validate()?;
    let constellation = Constellation::bpsk(1.0);
    let code = ConvCode::new(&CODE_GENERATORS, CODE_CONSTRAINT_LENGTH)?;
    let noise = config.noise()?;
    let n0 = noise.n0();
    let k = config.users;
    let q = constellation.size();
    let bits_per_symbol = constellation.bits_per_symbol();
    let coded_len = config.info_bits_per_frame * code.outputs();

    let interleavers: Vec<Interleaver> = (0..k)
        .map(|user| {
            let mut rng = derive_stream(config.seed, StreamRole::Interleaver, user as u64);
            Interleaver::random(coded_len, &mut rng)
        })
        .collect();

    let mut info_rng = derive_stream(config.seed, StreamRole::InfoBits, frame_index);
    let info_bits: Vec<Vec<u8>> = (0..k)
        .map(|_| {
            (0..config.info_bits_per_frame)
                .map(|_| u8::from(info_rng.random::<bool>()))
                .collect()
        })
        .collect();

    let frame = encode_and_modulate(&info_bits, &code, &interleavers, &constellation)?;
    let uses = frame.uses();

    let mut spread_rng = derive_stream(config.seed, StreamRole::Spreading, frame_index);
    let spreading: Vec<SpreadingMatrix> = match config.spreading {
        SpreadingCadence::PerFrame => vec![draw_spreading(config.gain, k, &mut spread_rng)],
        SpreadingCadence::PerSymbol => (0..uses)
            .map(|_| draw_spreading(config.gain, k, &mut spread_rng))
            .collect(),
    };

    let mut noise_rng = derive_stream(config.seed, StreamRole::Noise, frame_index);
    let mut observations: Vec<_> = (0..uses)
        .map(|n| {
            simulate_channel_use(pick(&spreading, n), frame.row(n), &constellation, &noise, &mut noise_rng)
        })
        .collect();
    if constellation.is_real() {
        for obs in &mut observations {
            obs.discard_imaginary();
        }
    }

    // The list detector works on the triangular factorization and the
    // matched-filter statistic, both functions of the spreading alone (and
    // the observation, for the latter) — computed once per frame, not per
    // iteration.
    let (transforms, matched): (Vec<GramTransform>, Vec<Vec<Complex64>>) =
        if config.detector == DetectorKind::Talg {
            let t = spreading
                .iter()
                .map(|s| GramTransform::new(s, &constellation, RHO_MARGIN))
                .collect::<Result<Vec<_>>>()?;
            let y = observations
                .iter()
                .enumerate()
                .map(|(n, obs)| matched_filter(&obs.r, pick(&spreading, n)))
                .collect::<Result<Vec<_>>>()?;
            (t, y)
        } else {
            (Vec::new(), Vec::new())
        };
    let params = config.search_params();

    let mut detector_priors: Vec<BitProbabilityStream> =
        vec![BitProbabilityStream::uniform(coded_len); k];
    let mut ext_pairs: Vec<Vec<[f64; 2]>> = vec![vec![[0.5, 0.5]; coded_len]; k];
    let mut bit_errors = Vec::with_capacity(config.iterations);
    let mut node_expansions = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        let mut expansions: u64 = 0;
        for n in 0..uses {
            let columns: Vec<Vec<f64>> = (0..k)
                .map(|user| {
                    let pairs: Vec<[f64; 2]> = (0..bits_per_symbol)
                        .map(|b| detector_priors[user].get(n * bits_per_symbol + b))
                        .collect();
                    symbol_column_from_bit_pairs(&pairs, &constellation)
                })
                .collect();
            let priors = ProbabilityMatrix::from_columns(&columns)?;

            let extrinsic = match config.detector {
                DetectorKind::Talg => {
                    let transform = pick(&transforms, n);
                    let (list, stats) =
                        t_search_with_stats(&matched[n], transform, &constellation, &priors, n0, &params)?;
                    expansions += stats.node_expansions;
                    // Unfloored posterior: flooring before the prior is
                    // divided out would flatten the extrinsic once the
                    // priors grow confident. The floor protects only the
                    // exchanged message, after the division.
                    let posterior = list_to_posteriors(&list, q, n0, 0.0);
                    extrinsic_from_posterior(&posterior, &priors, config.floor)
                }
                DetectorKind::Pic => soft_pic_detect(
                    &observations[n].r,
                    pick(&spreading, n),
                    &constellation,
                    &priors,
                    &noise,
                    config.floor,
                )?,
                DetectorKind::Lmmse => lmmse_detect(
                    &observations[n].r,
                    pick(&spreading, n),
                    &constellation,
                    &priors,
                    &noise,
                    config.floor,
                )?,
                DetectorKind::Exhaustive => {
                    let posterior = brute_force_symbol_app(
                        &observations[n].r,
                        pick(&spreading, n),
                        &constellation,
                        &priors,
                        n0,
                    )?;
                    expansions += (q as u64).pow(k as u32);
                    extrinsic_from_posterior(&posterior, &priors, config.floor)
                }
            };

            for user in 0..k {
                let pairs = bit_pairs_from_symbol_column(extrinsic.column(user), &constellation);
                for (b, pair) in pairs.iter().enumerate() {
                    ext_pairs[user][n * bits_per_symbol + b] = *pair;
                }
            }
        }

        let mut errors: u64 = 0;
        let opts = BcjrOptions { max_log: false, floor: config.floor };
        for user in 0..k {
            let stream = BitProbabilityStream::from_pairs(ext_pairs[user].clone())?;
            let deinterleaved = interleavers[user].deinterleave_probs(&stream)?;
            let decoded = bcjr_decode_with(&deinterleaved, &code, &opts)?;
            let hard = hard_decide(&decoded.info_posterior);
            errors += hard
                .iter()
                .zip(&info_bits[user])
                .filter(|(decided, sent)| decided != sent)
                .count() as u64;
            detector_priors[user] = interleavers[user].interleave_probs(&decoded.coded_extrinsic)?;
        }
        bit_errors.push(errors);
        node_expansions.push(expansions);
    }

    Ok(FrameOutcome { bit_errors, node_expansions })
}

/// Runs all frames (in parallel when a rayon pool offers workers) and
/// aggregates their tallies.
///
/// Frame streams are independent and the reduction is a plain integer sum
/// in frame order, so the report is identical for any worker count.
///
/// # Errors
/// Invalid configs and propagated frame failures.
pub fn run_simulation(config: &SimConfig) -> Result<BerReport> {
    config.validate()?;
    let outcomes: Vec<FrameOutcome> = (0..config.frames)
        .into_par_iter()
        .map(|f| run_frame(config, f as u64))
        .collect::<Result<Vec<_>>>()?;

    let iterations = config.iterations;
    let mut errors = vec![0u64; iterations];
    let mut expansions = vec![0u64; iterations];
    for outcome in &outcomes {
        for i in 0..iterations {
            errors[i] += outcome.bit_errors[i];
            expansions[i] += outcome.node_expansions[i];
        }
    }

    let bits = (config.frames * config.users * config.info_bits_per_frame) as u64;
    let total_uses = (config.frames * config.uses_per_frame()) as f64;
    let rows = (0..iterations)
        .map(|i| IterationRow {
            iteration: i + 1,
            bits,
            bit_errors: errors[i],
            ber: errors[i] as f64 / bits as f64,
            node_expansions: expansions[i],
            avg_node_expansions: expansions[i] as f64 / total_uses,
        })
        .collect();

    Ok(BerReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        rows,
    })
}

/// Writes `report` in `format` to `path`, or to stdout when `path` is
/// `None`.
///
/// # Errors
/// [`Error::Io`] on write failure, [`Error::Json`] on serialization
/// failure.
pub fn emit_report(report: &BerReport, format: ReportFormat, path: Option<&Path>) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json()?,
    };
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}
