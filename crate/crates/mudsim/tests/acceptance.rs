//! End-to-end acceptance checks: the transformation against exact
//! references, the search against exhaustive enumeration, and the full
//! receiver against its benchmark operating points. Each check prints one
//! PASS/FAIL line (run with `--nocapture` to see them all), so a full run
//! reads as a checklist. The long K=19 convergence point is `#[ignore]`d;
//! include it with `--ignored` when hours-scale runs are acceptable.

use std::sync::LazyLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPoolBuilder;

use mudsim::fec::{bcjr_decode_with, BcjrOptions, BitProbabilityStream, ConvCode};
use mudsim::gram::{gram_matrix, matched_filter, GramTransform};
use mudsim::harness::{run_simulation, BerReport, DetectorKind, SimConfig};
use mudsim::marginal::{list_to_posteriors, ProbabilityMatrix};
use mudsim::model::{
    draw_spreading, ebn0_to_noise, simulate_channel_use, Constellation, NoiseSpec, SpreadingMatrix,
};
use mudsim::oracle::{brute_force_map, brute_force_symbol_app};
use mudsim::search::{exhaustive_list, t_search, SearchParams};

fn check(criterion: u32, what: &str, pass: bool) {
    println!("criterion {criterion:02} {what}: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion:02} {what} failed");
}

fn benchmark_noise() -> NoiseSpec {
    ebn0_to_noise(5.0, 0.5, 2, 1.0).unwrap()
}

fn random_priors(k: usize, rng: &mut ChaCha8Rng) -> ProbabilityMatrix {
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let p0 = 0.02 + 0.96 * rng.random::<f64>();
            vec![p0, 1.0 - p0]
        })
        .collect();
    ProbabilityMatrix::from_columns(&columns).unwrap()
}

/// A random overloaded-channel observation: spreading, received vector, and
/// per-user symbol priors.
fn random_instance(
    k: usize,
    l: usize,
    constellation: &Constellation,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> (SpreadingMatrix, Vec<Complex64>, ProbabilityMatrix) {
    let s = draw_spreading(l, k, rng);
    let row: Vec<u8> = (0..k)
        .map(|_| rng.random_range(0..constellation.size()) as u8)
        .collect();
    let mut obs = simulate_channel_use(&s, &row, constellation, noise, rng);
    if constellation.is_real() {
        obs.discard_imaginary();
    }
    let priors = random_priors(k, rng);
    (s, obs.r, priors)
}

/// Single-user reference: the performance ceiling, simulated with the same
/// code and frame structure as every multiuser run.
static BOUND: LazyLock<BerReport> = LazyLock::new(|| {
    let mut config = SimConfig::benchmark(1);
    config.frames = 512;
    config.iterations = 2;
    run_simulation(&config).unwrap()
});

/// The full-overload benchmark run shared by the BER and complexity checks.
static K16: LazyLock<BerReport> = LazyLock::new(|| {
    let mut config = SimConfig::benchmark(16);
    config.frames = 32;
    run_simulation(&config).unwrap()
});

/// Single-user BER with a resolution guard: a zero-error simulation counts
/// as half an error so the ratio criteria stay meaningful.
fn bound_ber() -> f64 {
    let bits = BOUND.rows[0].bits as f64;
    BOUND.final_ber().max(0.5 / bits)
}

#[test]
fn criterion_01_transform_path_posteriors_match_the_exact_reference() {
    let constellation = Constellation::bpsk(1.0);
    let noise = benchmark_noise();
    let n0 = noise.n0();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let k = 2 + i % 9; // 2..=10
        let l = if i % 2 == 0 { 4 } else { 8 };
        let (s, r, priors) = random_instance(k, l, &constellation, &noise, &mut rng);

        let transform = GramTransform::new(&s, &constellation, 1.0).unwrap();
        let y = matched_filter(&r, &s).unwrap();
        let list = exhaustive_list(&y, &transform, &constellation, &priors, n0).unwrap();
        let posterior = list_to_posteriors(&list, constellation.size(), n0, 0.0);

        let reference = brute_force_symbol_app(&r, &s, &constellation, &priors, n0).unwrap();
        worst = worst.max(posterior.max_abs_diff(&reference));
    }
    check(1, "transform-path posteriors equal direct enumeration within 1e-9", worst < 1e-9);
}

#[test]
fn criterion_02_leaf_weights_and_orderings_are_invariant_to_the_loading_constant() {
    let constellation = Constellation::bpsk(1.0);
    let noise = benchmark_noise();
    let n0 = noise.n0();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let k = 6;
    let mut worst = 0.0f64;
    let mut orderings_identical = true;
    for _ in 0..100 {
        let (s, r, priors) = random_instance(k, 4, &constellation, &noise, &mut rng);
        let y = matched_filter(&r, &s).unwrap();
        let low = GramTransform::with_rho(gram_matrix(&s), k as f64).unwrap();
        let high = GramTransform::with_rho(gram_matrix(&s), (k + 5) as f64).unwrap();
        let list_low = exhaustive_list(&y, &low, &constellation, &priors, n0).unwrap();
        let list_high = exhaustive_list(&y, &high, &constellation, &priors, n0).unwrap();

        let order_low: Vec<&[u8]> = list_low.entries().iter().map(|e| e.symbols.as_slice()).collect();
        let order_high: Vec<&[u8]> = list_high.entries().iter().map(|e| e.symbols.as_slice()).collect();
        orderings_identical &= order_low == order_high;

        // Weight differences against the common best entry; agreement here
        // implies agreement of every pairwise difference.
        let best_low = list_low.entries()[0].weight;
        let best_high = list_high.entries()[0].weight;
        for (a, b) in list_low.entries().iter().zip(list_high.entries()) {
            worst = worst.max(((a.weight - best_low) - (b.weight - best_high)).abs());
        }
    }
    check(
        2,
        "pairwise leaf-weight differences agree within 1e-9 across admissible loadings",
        worst < 1e-9,
    );
    check(2, "returned sequence orderings are identical across admissible loadings", orderings_identical);
}

#[test]
fn criterion_03_factorization_succeeds_on_every_random_draw() {
    let constellation = Constellation::bpsk(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = 0usize;
    for i in 0..10_000 {
        let (l, k) = if i % 4 == 0 {
            // Four-fold overload: the Gram matrix is maximally rank-deficient.
            let l = [2, 4, 8][(i / 4) % 3];
            (l, 4 * l)
        } else {
            (2 + i % 7, 1 + i % 20)
        };
        let s = draw_spreading(l, k, &mut rng);
        if GramTransform::new(&s, &constellation, 1.0).is_err() {
            failures += 1;
        }
    }
    check(3, "loaded-Gram factorization never fails over 10^4 draws including K = 4L", failures == 0);
}

#[test]
fn criterion_04_decoder_posteriors_match_codeword_enumeration() {
    let code = ConvCode::new(&[0o5, 0o7], 3).unwrap();
    let opts = BcjrOptions { max_log: false, floor: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let info_len = 1 + t % 8;
        let pairs: Vec<[f64; 2]> = (0..info_len * code.outputs())
            .map(|_| {
                let p0 = 0.02 + 0.96 * rng.random::<f64>();
                [p0, 1.0 - p0]
            })
            .collect();
        let priors = BitProbabilityStream::from_pairs(pairs).unwrap();
        let decoded = bcjr_decode_with(&priors, &code, &opts).unwrap();
        let reference = brute_force_map(&priors, &code).unwrap();
        worst = worst.max(decoded.info_posterior.max_abs_diff(&reference));
    }
    check(4, "forward-backward info posteriors equal codeword enumeration within 1e-9", worst < 1e-9);
}

#[test]
fn criterion_05_thresholded_search_finds_the_exhaustive_argmin() {
    let constellation = Constellation::bpsk(1.0);
    let noise = benchmark_noise();
    let n0 = noise.n0();
    let params = SearchParams {
        t_threshold: 16.0,
        p_max: 256,
        p_min: 1,
        p_list: 256,
        prior_floor: 1e-7,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let k = 8;
    let priors = ProbabilityMatrix::uniform(constellation.size(), k);
    let mut hits = 0usize;
    let trials = 1000usize;
    for _ in 0..trials {
        let s = draw_spreading(8, k, &mut rng);
        let row: Vec<u8> = (0..k).map(|_| rng.random_range(0..2) as u8).collect();
        let mut obs = simulate_channel_use(&s, &row, &constellation, &noise, &mut rng);
        obs.discard_imaginary();
        let transform = GramTransform::new(&s, &constellation, 1.0).unwrap();
        let y = matched_filter(&obs.r, &s).unwrap();

        let pruned = t_search(&y, &transform, &constellation, &priors, n0, &params).unwrap();
        let full = exhaustive_list(&y, &transform, &constellation, &priors, n0).unwrap();
        if pruned.best().symbols == full.best().symbols {
            hits += 1;
        }
    }
    println!("criterion 05 detail: argmin recovered in {hits}/{trials} instances");
    check(5, "pruned search recovers the exhaustive argmin in at least 99% of instances", hits * 100 >= trials * 99);
}

#[test]
fn criterion_06_full_overload_tracks_the_single_user_bound_in_five_iterations() {
    let report = &*K16;
    let bits = report.rows[0].bits;
    let ber5 = report.rows[4].ber;
    let bound = bound_ber();
    println!(
        "criterion 06 detail: {} info bits, iteration-5 BER {ber5:.3e}, single-user bound {bound:.3e}",
        bits
    );
    check(6, "at least 2x10^5 information bits were scored", bits >= 200_000);
    check(
        6,
        "sixteen-user BER after five iterations is within 3x of the simulated single-user bound",
        ber5 <= 3.0 * bound,
    );
}

#[test]
#[ignore = "long convergence run; include with --ignored"]
fn criterion_07_nineteen_users_reach_the_bound_after_twenty_iterations() {
    let mut config = SimConfig::benchmark(19);
    config.frames = 20;
    config.iterations = 20;
    assert_eq!(config.p_min, 128);
    let report = run_simulation(&config).unwrap();
    let ber = report.final_ber();
    let bound = bound_ber();
    println!("criterion 07 detail: final BER {ber:.3e}, single-user bound {bound:.3e}");
    check(
        7,
        "nineteen-user BER after twenty iterations is within 3x of the single-user bound",
        ber <= 3.0 * bound,
    );
}

#[test]
fn criterion_08_cancellation_baselines_reproduce_the_load_ordering() {
    let bound = bound_ber();
    let run = |users: usize, detector: DetectorKind, frames: usize| {
        let mut config = SimConfig::benchmark(users);
        config.detector = detector;
        config.iterations = 20;
        config.frames = frames;
        run_simulation(&config).unwrap().final_ber()
    };

    let pic_9 = run(9, DetectorKind::Pic, 24);
    let lmmse_14 = run(14, DetectorKind::Lmmse, 16);
    let pic_14 = run(14, DetectorKind::Pic, 6);
    println!(
        "criterion 08 detail: PIC@9 {pic_9:.3e}, LMMSE@14 {lmmse_14:.3e}, PIC@14 {pic_14:.3e}, bound {bound:.3e}"
    );
    check(8, "interference cancellation carries nine users to within 3x of the bound", pic_9 <= 3.0 * bound);
    check(8, "LMMSE filtering carries fourteen users to within 3x of the bound", lmmse_14 <= 3.0 * bound);
    check(8, "interference cancellation visibly fails at fourteen users", pic_14 > 10.0 * bound);
}

#[test]
fn criterion_09_search_work_is_bounded_and_shrinks_as_priors_sharpen() {
    let report = &*K16;
    let per_use_cap = (16 * 512 * 2) as f64;
    let bounded = report.rows.iter().all(|row| row.avg_node_expansions <= per_use_cap);
    let first = report.rows[0].avg_node_expansions;
    let last = report.rows[4].avg_node_expansions;
    println!("criterion 09 detail: avg expansions per use {first:.1} (iteration 1) -> {last:.1} (iteration 5)");
    check(9, "node expansions never exceed K*p_max*Q per channel use", bounded);
    check(9, "average expansions at iteration 5 are below iteration 1", last < first);
}

#[test]
fn criterion_10_reports_are_byte_identical_for_any_worker_count() {
    let mut config = SimConfig::benchmark(8);
    config.frames = 6;
    config.info_bits_per_frame = 100;
    config.iterations = 2;

    let ambient = run_simulation(&config).unwrap();
    let repeat = run_simulation(&config).unwrap();
    let serial = ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_simulation(&config).unwrap());
    let wide = ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| run_simulation(&config).unwrap());

    let csv = ambient.to_csv();
    let json = ambient.to_json().unwrap();
    let all_equal = [&repeat, &serial, &wide]
        .iter()
        .all(|r| r.to_csv() == csv && r.to_json().unwrap() == json);
    check(10, "reports are byte-identical across repeats and worker counts", all_equal);
}
