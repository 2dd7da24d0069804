//! Spring-model ranking.
//!
//! Scores minimize
//!
//! ```text
//! H(s) = 1/2 sum_ij A_ij (s_i - s_j - 1)^2 + alpha/2 sum_i s_i^2
//! ```
//!
//! over a directed win matrix `A`. The minimizer solves a sparse symmetric
//! system (see [`solver`]). A logistic win model
//! `P(i beats j) = 1 / (1 + exp(-2 beta (s_i - s_j)))` links score gaps to
//! choice probabilities; [`fit_inverse_temperature`] estimates `beta` and
//! [`rescale`] maps scores so that a unit gap means a 75% win probability.

mod export;
mod levels;
mod matrix;
pub(crate) mod solver;

pub use export::{read_scores, write_scores, ScoresTable};
pub use levels::{field_comparisons, field_scores, global_scores, individual_scores, leave_one_out_field_scores};
pub use matrix::ComparisonMatrix;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::VenueId;
use solver::{norm_inf, solve_cg, solve_dense, SpringSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("comparison references venue {0} outside the item list")]
    UnknownItem(VenueId),
    #[error("cannot fit an empty comparison matrix")]
    EmptyMatrix,
    #[error("solver did not reach tolerance: residual {residual:e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },
    #[error("inverse temperature is not identifiable (estimate {0:e} below floor)")]
    DegenerateLikelihood(f64),
    #[error("likelihood increases without bound in beta (scores perfectly separate the outcomes)")]
    UnboundedLikelihood,
    #[error("no comparisons left for {0} after exclusion")]
    EmptyField(String),
    #[error("unknown respondent {0}")]
    UnknownRespondent(String),
}

/// Which linear solver backs a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Dense factorization below [`DENSE_CUTOFF`] items, CG above.
    #[default]
    Auto,
    Dense,
    ConjugateGradient,
}

pub const DENSE_CUTOFF: usize = 64;

/// Estimates below this are treated as unidentifiable.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub alpha: f64,
    /// Diagonal ridge used only when `alpha == 0`.
    pub epsilon: f64,
    pub solver_tolerance: f64,
    pub max_iterations: usize,
    pub solver: SolverKind,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            alpha: 0.0,
            epsilon: 1e-8,
            solver_tolerance: 1e-10,
            max_iterations: 10_000,
            solver: SolverKind::Auto,
        }
    }
}

impl RankConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        assert!(alpha >= 0.0 && alpha.is_finite(), "alpha must be non-negative");
        RankConfig { alpha, ..Default::default() }
    }

    /// Per-respondent rankings.
    pub fn individual() -> Self {
        Self::with_alpha(0.0)
    }

    /// Field and global consensus rankings.
    pub fn consensus() -> Self {
        Self::with_alpha(20.0)
    }

    /// Interim ranking used by the pair scheduler.
    pub fn quick() -> Self {
        RankConfig { solver_tolerance: 1e-6, ..Self::with_alpha(2.0) }
    }

    pub fn solver(mut self, kind: SolverKind) -> Self {
        self.solver = kind;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScores {
    pub items: Vec<VenueId>,
    pub raw_scores: Vec<f64>,
    pub inverse_temperature: Option<f64>,
    pub rescaled_scores: Option<Vec<f64>>,
    pub normalized_scores: Option<Vec<f64>>,
    pub config: RankConfig,
    /// `‖(L + alpha I) s - rhs‖∞` of the returned raw scores.
    pub residual: f64,
}

impl RankScores {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn raw(&self, id: &VenueId) -> Option<f64> {
        self.items.iter().position(|v| v == id).map(|i| self.raw_scores[i])
    }

    pub fn raw_map(&self) -> BTreeMap<VenueId, f64> {
        self.items.iter().cloned().zip(self.raw_scores.iter().copied()).collect()
    }

    /// Min-max normalized scores; taken from `normalized_scores` when set,
    /// otherwise computed from the raw scores (the two agree, since rescaling
    /// is a positive scaling).
    pub fn normalized(&self) -> Vec<f64> {
        self.normalized_scores.clone().unwrap_or_else(|| normalize_min_max(&self.raw_scores))
    }

    pub fn normalized_map(&self) -> BTreeMap<VenueId, f64> {
        self.items.iter().cloned().zip(self.normalized()).collect()
    }

    /// Items sorted best first; ties by id.
    pub fn ranked(&self) -> Vec<(VenueId, f64)> {
        let mut v: Vec<_> = self.items.iter().cloned().zip(self.raw_scores.iter().copied()).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    /// Top `k` items by score, ties by id.
    pub fn top(&self, k: usize) -> Vec<VenueId> {
        self.ranked().into_iter().take(k).map(|(v, _)| v).collect()
    }
}

/// Min-max onto [0, 1]. A single item maps to 1; so does a constant vector,
/// every item being tied for the top.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Vec::new();
    }
    if hi - lo <= 0.0 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Gradient of the spring energy at `scores`; zero at the optimum.
pub fn energy_gradient(matrix: &ComparisonMatrix, alpha: f64, scores: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = scores.iter().map(|s| alpha * s).collect();
    for (i, j, w) in matrix.entries() {
        let stretch = scores[i] - scores[j] - 1.0;
        g[i] += w * stretch;
        g[j] -= w * stretch;
    }
    g
}

/// Spring energy `H(s)`.
pub fn energy(matrix: &ComparisonMatrix, alpha: f64, scores: &[f64]) -> f64 {
    let springs: f64 = matrix
        .entries()
        .map(|(i, j, w)| w * (scores[i] - scores[j] - 1.0).powi(2))
        .sum();
    0.5 * springs + 0.5 * alpha * scores.iter().map(|s| s * s).sum::<f64>()
}

/// Fits raw scores. At `alpha = 0` the system is singular along constants on
/// each connected component: an `epsilon` ridge makes it solvable, a few
/// refinement steps against the unridged operator remove the ridge bias, and
/// scores are centered per component (hence globally).
pub fn fit_springrank(matrix: &ComparisonMatrix, config: &RankConfig) -> Result<RankScores, RankError> {
    if matrix.is_empty() {
        return Err(RankError::EmptyMatrix);
    }
    let sys = SpringSystem::from_matrix(matrix);
    let n = sys.len();
    let alpha = config.alpha;
    let ridge = if alpha > 0.0 { alpha } else { config.epsilon };
    let use_dense = match config.solver {
        SolverKind::Auto => n < DENSE_CUTOFF,
        SolverKind::Dense => true,
        SolverKind::ConjugateGradient => false,
    };
    let inner_tol = config.solver_tolerance * 1e-2;
    let mut iterations = 0;
    let mut inner = |b: &[f64]| -> Result<Vec<f64>, RankError> {
        let solve = if use_dense {
            solve_dense(&sys, ridge, b).ok_or(RankError::SolverDiverged { residual: f64::INFINITY, iterations: 0 })?
        } else {
            solve_cg(&sys, ridge, b, inner_tol, config.max_iterations.saturating_sub(iterations).max(1))
        };
        iterations += solve.iterations;
        Ok(solve.x)
    };

    let mut scores = inner(&sys.rhs)?;
    if alpha == 0.0 {
        center_components(&sys, &mut scores);
        for _ in 0..8 {
            let mut applied = vec![0.0; n];
            sys.apply(0.0, &scores, &mut applied);
            let r: Vec<f64> = sys.rhs.iter().zip(&applied).map(|(b, y)| b - y).collect();
            if norm_inf(&r) <= inner_tol {
                break;
            }
            let correction = inner(&r)?;
            for (s, c) in scores.iter_mut().zip(correction) {
                *s += c;
            }
            center_components(&sys, &mut scores);
        }
    }

    let residual = sys.residual(alpha, &scores, &sys.rhs);
    if !(residual <= config.solver_tolerance) {
        return Err(RankError::SolverDiverged { residual, iterations });
    }
    Ok(RankScores {
        items: matrix.items().to_vec(),
        raw_scores: scores,
        inverse_temperature: None,
        rescaled_scores: None,
        normalized_scores: None,
        config: *config,
        residual,
    })
}

fn center_components(sys: &SpringSystem, scores: &mut [f64]) {
    let labels = sys.components();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (&l, &s) in labels.iter().zip(scores.iter()) {
        sum[l] += s;
        count[l] += 1;
    }
    for (l, s) in labels.iter().zip(scores.iter_mut()) {
        *s -= sum[*l] / count[*l] as f64;
    }
}

/// Derivative of the win-model log-likelihood in beta.
fn log_likelihood_slope(pairs: &[(f64, f64)], beta: f64) -> f64 {
    pairs
        .iter()
        .map(|&(w, gap)| w * 2.0 * gap * logistic(-2.0 * beta * gap))
        .sum()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Model probability that an item with score gap `gap` wins.
pub fn win_probability(beta: f64, gap: f64) -> f64 {
    logistic(2.0 * beta * gap)
}

/// Maximum-likelihood inverse temperature of the logistic win model given
/// fixed scores. The log-likelihood is concave in beta, so its slope is
/// monotone and the root is bracketed then bisected to 1e-12.
pub fn fit_inverse_temperature(matrix: &ComparisonMatrix, scores: &RankScores) -> Result<f64, RankError> {
    let lookup: Vec<Option<usize>> = matrix
        .items()
        .iter()
        .map(|v| scores.items.iter().position(|s| s == v))
        .collect();
    let pairs: Vec<(f64, f64)> = matrix
        .entries()
        .filter_map(|(i, j, w)| {
            let (si, sj) = (lookup[i]?, lookup[j]?);
            Some((w, scores.raw_scores[si] - scores.raw_scores[sj]))
        })
        .collect();

    let scale: f64 = pairs.iter().map(|(w, g)| w * g.abs()).sum();
    let slope0 = log_likelihood_slope(&pairs, 0.0);
    if scale == 0.0 || slope0 <= 1e-12 * scale {
        return Err(RankError::DegenerateLikelihood(0.0));
    }
    // the slope turns negative only if some win goes against the score order
    if pairs.iter().all(|&(_, gap)| gap >= 0.0) {
        return Err(RankError::UnboundedLikelihood);
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    while log_likelihood_slope(&pairs, hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            return Err(RankError::UnboundedLikelihood);
        }
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if log_likelihood_slope(&pairs, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    if beta < BETA_FLOOR {
        return Err(RankError::DegenerateLikelihood(beta));
    }
    Ok(beta)
}

/// Multiplies raw scores by `2 beta / ln 3` so that a unit rescaled gap has
/// win probability exactly 3/4, then min-max normalizes.
pub fn rescale(scores: &RankScores, beta_hat: f64) -> RankScores {
    assert!(beta_hat > 0.0, "beta_hat must be positive");
    let factor = rescale_factor(beta_hat);
    let rescaled: Vec<f64> = scores.raw_scores.iter().map(|s| s * factor).collect();
    let normalized = normalize_min_max(&rescaled);
    RankScores {
        inverse_temperature: Some(beta_hat),
        rescaled_scores: Some(rescaled),
        normalized_scores: Some(normalized),
        ..scores.clone()
    }
}

pub fn rescale_factor(beta_hat: f64) -> f64 {
    2.0 * beta_hat / 3f64.ln()
}

/// Win probability at a rescaled gap, for rescaling with `beta_hat`.
pub fn rescaled_win_probability(beta_hat: f64, rescaled_gap: f64) -> f64 {
    win_probability(beta_hat, rescaled_gap / rescale_factor(beta_hat))
}

/// Fits beta and rescales; when beta is not identifiable the scores come back
/// with only `normalized_scores` filled in.
pub fn rescale_if_identifiable(matrix: &ComparisonMatrix, scores: RankScores) -> RankScores {
    match fit_inverse_temperature(matrix, &scores) {
        Ok(beta) => rescale(&scores, beta),
        Err(_) => {
            let normalized = normalize_min_max(&scores.raw_scores);
            RankScores { normalized_scores: Some(normalized), ..scores }
        }
    }
}

/// Competition ranks (1 = best, ties share the smaller rank, next rank skips)
/// over the `eligible` items that carry a score.
pub fn ordinal_ranks<K: Ord + Clone>(scores: &BTreeMap<K, f64>, eligible: &BTreeSet<K>) -> BTreeMap<K, usize> {
    let mut entries: Vec<(&K, f64)> = eligible.iter().filter_map(|k| scores.get(k).map(|&s| (k, s))).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = BTreeMap::new();
    let mut rank = 0;
    let mut prev: Option<f64> = None;
    for (pos, (k, s)) in entries.into_iter().enumerate() {
        if prev != Some(s) {
            rank = pos + 1;
            prev = Some(s);
        }
        out.insert(k.clone(), rank);
    }
    out
}
