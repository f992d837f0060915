//! Breadth-first list detection over the user tree.
//!
//! Users are laid out as levels of a tree of depth `K`; a node at depth `k`
//! is a partial symbol assignment for users `0..k`. The triangular structure
//! produced by [`crate::gram`] lets each level add a weight increment that
//! depends only on the symbols chosen so far:
//!
//! ```text
//! Δw(k, d) = Re{yₖ·dₖ} + |Σ_{j≤k} t_{kj}·d_j|² + uₖ·|dₖ|² − N₀·ln p(dₖ)
//! ```
//!
//! Along a full path the increments add up to `‖r − S·d‖² − N₀·ln p(d)`
//! up to the path-independent constant `‖r‖²`, so the candidate with the
//! smallest total weight is the (prior-weighted) maximum-likelihood vector,
//! and `exp(−w/N₀)` is proportional to its joint posterior probability.
//!
//! The search keeps a bounded frontier per level. All children of the
//! surviving nodes are scored; children within `T·N₀` of the best child
//! survive, subject to a hard cap `p_max` and a keep-alive minimum `p_min`
//! that protects list diversity when the threshold cuts too deep. Setting
//! `T = ∞` with `p_min = p_max = M` recovers a plain best-M (breadth-first)
//! search, and `T = ∞` with `p_max ≥ Qᴷ` enumerates everything.
//!
//! Ties are broken deterministically: candidates are ordered by weight and,
//! at equal weight, by generation order (parent first, then symbol index),
//! so a run is reproducible bit for bit.

use num_complex::Complex64;

use crate::gram::GramTransform;
use crate::marginal::ProbabilityMatrix;
use crate::model::Constellation;
use crate::oracle::DEFAULT_ENUMERATION_CAP;
use crate::{Error, Result};

/// Knobs of the list search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// Threshold window in units of `N₀`: children heavier than the best
    /// child by more than `t_threshold·N₀` are dropped. `f64::INFINITY`
    /// disables threshold pruning.
    pub t_threshold: f64,
    /// Hard cap on surviving nodes per level.
    pub p_max: usize,
    /// Minimum survivors per level (bounded by the number of children);
    /// keeps the list from collapsing when the threshold prunes hard.
    pub p_min: usize,
    /// Maximum number of leaves returned in the final list.
    pub p_list: usize,
    /// Floor applied to prior probabilities inside the metric; zero admits
    /// infinite weights for zero-prior symbols.
    pub prior_floor: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            t_threshold: 16.0,
            p_max: 512,
            p_min: 32,
            p_list: 512,
            prior_floor: crate::marginal::DEFAULT_PROB_FLOOR,
        }
    }
}

impl SearchParams {
    /// Parameters with the given threshold and survivor bounds; the list
    /// length defaults to `p_max` and the prior floor to the crate default.
    pub fn new(t_threshold: f64, p_max: usize, p_min: usize) -> Self {
        SearchParams { t_threshold, p_max, p_min, p_list: p_max, ..SearchParams::default() }
    }

    /// # Errors
    /// [`Error::InvalidParameter`] for a negative or NaN threshold, a zero
    /// or inverted survivor range, an empty list length, or a floor outside
    /// `[0, 1)`.
    pub fn validate(&self) -> Result<()> {
        if self.t_threshold.is_nan() || self.t_threshold < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "threshold must be non-negative, got {}",
                self.t_threshold
            )));
        }
        if self.p_max == 0 || self.p_min == 0 || self.p_min > self.p_max {
            return Err(Error::InvalidParameter(format!(
                "survivor bounds must satisfy 1 <= p_min <= p_max, got p_min={} p_max={}",
                self.p_min, self.p_max
            )));
        }
        if self.p_list == 0 {
            return Err(Error::InvalidParameter("list length must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prior_floor) {
            return Err(Error::InvalidParameter(format!(
                "prior floor must lie in [0, 1), got {}",
                self.prior_floor
            )));
        }
        Ok(())
    }
}

/// One candidate symbol vector with its accumulated weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ListEntry {
    /// Symbol index per user.
    pub symbols: Vec<u8>,
    /// Total path weight (smaller is more likely).
    pub weight: f64,
}

/// The leaves surviving a search, ordered by increasing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorList {
    entries: Vec<ListEntry>,
}

impl DetectorList {
    /// Wraps explicit entries (kept in the given order).
    pub fn from_entries(entries: Vec<ListEntry>) -> Self {
        DetectorList { entries }
    }

    pub fn entries(&self) -> &[ListEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The minimum-weight entry (first of them on ties).
    pub fn best(&self) -> &ListEntry {
        self.entries
            .iter()
            .min_by(|a, b| a.weight.total_cmp(&b.weight))
            .expect("list is non-empty")
    }
}

/// Work counters of one search call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Number of child nodes scored (frontier size × alphabet size, summed
    /// over levels).
    pub node_expansions: u64,
}

/// Per-level record of how the frontier evolved.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthTrace {
    pub parents: usize,
    pub children: usize,
    pub passed_threshold: usize,
    pub kept: usize,
    pub best_weight: f64,
    pub threshold: f64,
}

/// Level-by-level trace of one search call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub depths: Vec<DepthTrace>,
}

/// List detection; see the module documentation for the algorithm.
///
/// `y` is the matched-filter vector from [`crate::gram::matched_filter`],
/// one entry per user; `priors` holds one symbol distribution per user.
///
/// # Errors
/// [`Error::InvalidParameter`] for invalid `params` or non-positive `n0`;
/// [`Error::DimensionMismatch`] when `y`, the transform, and the priors
/// disagree on the number of users or the alphabet size.
pub fn t_search(
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    params: &SearchParams,
) -> Result<DetectorList> {
    Ok(t_search_with_stats(y, transform, constellation, priors, n0, params)?.0)
}

/// [`t_search`] plus its work counters.
pub fn t_search_with_stats(
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    params: &SearchParams,
) -> Result<(DetectorList, SearchStats)> {
    let (list, stats, _) = run_levels(y, transform, constellation, priors, n0, params, false)?;
    Ok((list, stats))
}

/// [`t_search`] plus counters and a per-level trace.
pub fn t_search_traced(
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    params: &SearchParams,
) -> Result<(DetectorList, SearchStats, SearchTrace)> {
    let (list, stats, trace) =
        run_levels(y, transform, constellation, priors, n0, params, true)?;
    Ok((list, stats, trace.unwrap_or_default()))
}

/// Scores every symbol vector — a search with pruning disabled. Priors
/// enter the weights unfloored, making the result directly comparable to an
/// enumeration oracle. Capped at [`DEFAULT_ENUMERATION_CAP`] leaves.
///
/// # Errors
/// [`Error::CapExceeded`] when `Qᴷ` exceeds the cap, plus the dimension
/// errors of [`t_search`].
pub fn exhaustive_list(
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
) -> Result<DetectorList> {
    exhaustive_list_with_cap(y, transform, constellation, priors, n0, DEFAULT_ENUMERATION_CAP)
}

/// [`exhaustive_list`] with an explicit leaf-count cap.
pub fn exhaustive_list_with_cap(
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    cap: u64,
) -> Result<DetectorList> {
    let leaves = (constellation.size() as u128)
        .checked_pow(transform.users() as u32)
        .unwrap_or(u128::MAX);
    if leaves > cap as u128 {
        return Err(Error::CapExceeded { required: leaves, cap });
    }
    let params = SearchParams {
        t_threshold: f64::INFINITY,
        p_max: leaves as usize,
        p_min: 1,
        p_list: leaves as usize,
        prior_floor: 0.0,
    };
    Ok(run_levels(y, transform, constellation, priors, n0, &params, false)?.0)
}

/// The weight a search assigns to a partial assignment of the first
/// `path.len()` users — the per-level increments of the module
/// documentation, summed. Intended as an independent check of the engine.
pub fn path_weight(
    path: &[u8],
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    prior_floor: f64,
) -> f64 {
    let syms = constellation.symbols();
    let t = transform.factor();
    let u = transform.diagonal_correction();
    let mut w = 0.0;
    for k in 0..path.len() {
        let d = syms[path[k] as usize];
        let td: Complex64 = (0..=k).map(|j| t.get(k, j) * syms[path[j] as usize]).sum();
        let p = priors.get(path[k] as usize, k).max(prior_floor);
        w += (y[k] * d).re + td.norm_sqr() + u[k] * d.norm_sqr() - n0 * p.ln();
    }
    w
}

/// `(weight, generation index)` order: the deterministic total order used
/// for every selection decision.
#[inline]
fn cand_order(weights: &[f64], a: u32, b: u32) -> std::cmp::Ordering {
    weights[a as usize].total_cmp(&weights[b as usize]).then(a.cmp(&b))
}

/// Keeps the `keep` smallest of `idx` under [`cand_order`], sorted.
fn select_best(mut idx: Vec<u32>, weights: &[f64], keep: usize) -> Vec<u32> {
    debug_assert!(keep >= 1 && keep <= idx.len());
    if keep < idx.len() {
        idx.select_nth_unstable_by(keep - 1, |&a, &b| cand_order(weights, a, b));
        idx.truncate(keep);
    }
    idx.sort_unstable_by(|&a, &b| cand_order(weights, a, b));
    idx
}

fn run_levels(
    y: &[Complex64],
    transform: &GramTransform,
    constellation: &Constellation,
    priors: &ProbabilityMatrix,
    n0: f64,
    params: &SearchParams,
    want_trace: bool,
) -> Result<(DetectorList, SearchStats, Option<SearchTrace>)> {
    params.validate()?;
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be positive and finite, got {n0}"
        )));
    }
    let k_users = transform.users();
    let q = constellation.size();
    if y.len() != k_users {
        return Err(Error::DimensionMismatch(format!(
            "matched filter has {} entries for {k_users} users",
            y.len()
        )));
    }
    if priors.users() != k_users || priors.size() != q {
        return Err(Error::DimensionMismatch(format!(
            "priors are {}x{}, expected {q}x{k_users}",
            priors.size(),
            priors.users()
        )));
    }

    let syms = constellation.symbols();
    let t = transform.factor();
    let u = transform.diagonal_correction();

    // Frontier: weights plus paths stored row-major, `depth` symbols each.
    let mut front_w: Vec<f64> = vec![0.0];
    let mut front_paths: Vec<u8> = Vec::new();
    let mut next_paths: Vec<u8> = Vec::new();
    let mut cand_w: Vec<f64> = Vec::new();
    let mut branch_const = vec![0.0f64; q];
    let mut expansions: u64 = 0;
    let mut trace = want_trace.then(SearchTrace::default);

    for depth in 0..k_users {
        let n_parents = front_w.len();
        let t_row = t.row(depth);
        let t_kk = t_row[depth];
        let prior_col = priors.column(depth);
        for (qi, bc) in branch_const.iter_mut().enumerate() {
            let d = syms[qi];
            let p = prior_col[qi].max(params.prior_floor);
            *bc = (y[depth] * d).re + u[depth] * d.norm_sqr() - n0 * p.ln();
        }

        // Score all children in generation order (parent-major).
        cand_w.clear();
        cand_w.reserve(n_parents * q);
        for p_idx in 0..n_parents {
            let path = &front_paths[p_idx * depth..(p_idx + 1) * depth];
            let base: Complex64 =
                path.iter().zip(t_row).map(|(&s, &tj)| tj * syms[s as usize]).sum();
            let w_parent = front_w[p_idx];
            for qi in 0..q {
                let v = base + t_kk * syms[qi];
                cand_w.push(w_parent + branch_const[qi] + v.norm_sqr());
            }
        }
        let n = cand_w.len();
        expansions += n as u64;

        // The threshold is anchored at the overall best child, before any cap.
        let w_best = cand_w.iter().copied().fold(f64::INFINITY, f64::min);
        let threshold = if params.t_threshold.is_finite() {
            w_best + params.t_threshold * n0
        } else {
            f64::INFINITY
        };
        let passing: Vec<u32> =
            (0..n as u32).filter(|&i| cand_w[i as usize] <= threshold).collect();
        let n_thresh = passing.len();
        let n_keep = n_thresh.max(params.p_min.min(n)).min(params.p_max);

        let kept: Vec<u32> = if n_thresh == n_keep {
            passing
        } else if n_thresh > n_keep {
            select_best(passing, &cand_w, n_keep)
        } else {
            select_best((0..n as u32).collect(), &cand_w, n_keep)
        };

        if let Some(tr) = trace.as_mut() {
            tr.depths.push(DepthTrace {
                parents: n_parents,
                children: n,
                passed_threshold: n_thresh,
                kept: kept.len(),
                best_weight: w_best,
                threshold,
            });
        }

        // Rebuild the frontier from the kept children.
        next_paths.clear();
        next_paths.reserve(kept.len() * (depth + 1));
        let mut next_w = Vec::with_capacity(kept.len());
        for &idx in &kept {
            let p_idx = idx as usize / q;
            let qi = (idx as usize % q) as u8;
            next_paths.extend_from_slice(&front_paths[p_idx * depth..(p_idx + 1) * depth]);
            next_paths.push(qi);
            next_w.push(cand_w[idx as usize]);
        }
        std::mem::swap(&mut front_paths, &mut next_paths);
        front_w = next_w;
    }

    // Final list: entries sorted by weight (stable, so generation order
    // breaks ties), truncated to the requested length.
    let mut entries: Vec<ListEntry> = front_w
        .iter()
        .enumerate()
        .map(|(i, &weight)| ListEntry {
            symbols: front_paths[i * k_users..(i + 1) * k_users].to_vec(),
            weight,
        })
        .collect();
    entries.sort_by(|a, b| a.weight.total_cmp(&b.weight));
    entries.truncate(params.p_list);

    Ok((DetectorList { entries }, SearchStats { node_expansions: expansions }, trace))
}
