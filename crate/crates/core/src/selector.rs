//! Which graph to train on next, and which samples within it.
//!
//! Each selection event scores every remaining candidate as
//!
//! ```text
//! J(G) = (1 - gamma_t) * z(uncertainty) + gamma_t * property_score
//! ```
//!
//! where both terms are z-normalized over the remaining pool only, so a
//! graph's score is relative to what is still on the table. gamma_t is
//! drawn from Beta(1, beta_t) with beta_t = c1 - c2^t, which starts the
//! run property-driven (gamma = 1 during warmup and at t = 0, when the
//! model's uncertainty means nothing) and drifts toward
//! uncertainty-driven picks as beta_t grows.

use serde::{Deserialize, Serialize};

use crate::properties::{property_score, z_normalize, GraphStats};
use crate::rng::Rng;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Asymptote of the beta schedule.
    pub c1: f64,
    /// Decay base of the beta schedule.
    pub c2: f64,
    /// Iterations during which gamma is pinned to 1.
    pub warmup: usize,
    /// Instances sampled per graph-uncertainty estimate.
    pub m_uncertain: usize,
    /// Training stops when every remaining graph sits below this.
    pub stop_uncertainty: f64,
    /// Per-sample filter: keep instances whose loss exceeds this.
    pub loss_threshold: f64,
    /// Switch graphs once the current one's uncertainty drops below this.
    pub graph_threshold: f64,
    /// Switch graphs after at most this many epochs regardless.
    pub max_epochs_per_graph: usize,
    /// Filter fallback: always keep at least this many samples.
    pub min_batch: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            c1: 3.0,
            c2: 0.995,
            warmup: 20,
            m_uncertain: 500,
            stop_uncertainty: 3.5,
            loss_threshold: 3.0,
            graph_threshold: 2.0,
            max_epochs_per_graph: 6,
            min_batch: 64,
        }
    }
}

/// How gamma is produced at selection events.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaPolicy {
    /// Warmup pins gamma to 1, afterwards Beta(1, beta_t) draws.
    Adaptive,
    /// Property-only selection.
    AlwaysOne,
    /// Uncertainty-only selection.
    AlwaysZero,
}

/// beta_t = c1 - c2^t; with the defaults this runs from 2 toward 3.
pub fn beta_schedule(t: usize, c1: f64, c2: f64) -> f64 {
    c1 - c2.powi(t as i32)
}

/// One gamma draw by inverse CDF: Beta(1, beta) has F(x) = 1-(1-x)^beta,
/// so gamma = 1 - u^(1/beta) for uniform u.
pub fn draw_gamma(t: usize, cfg: &SelectionConfig, policy: GammaPolicy, rng: &mut Rng) -> f64 {
    match policy {
        GammaPolicy::AlwaysOne => 1.0,
        GammaPolicy::AlwaysZero => 0.0,
        GammaPolicy::Adaptive => {
            if t < cfg.warmup.max(1) {
                return 1.0;
            }
            let beta = beta_schedule(t, cfg.c1, cfg.c2);
            1.0 - rng.next_f64().powf(1.0 / beta)
        }
    }
}

/// Mixing rule for one candidate given already z-normalized inputs.
pub fn score_graph(gamma: f64, z_uncertainty: f64, prop_score: f64) -> f64 {
    (1.0 - gamma) * z_uncertainty + gamma * prop_score
}

/// One remaining pool entry at a selection event.
#[derive(Clone, Debug)]
pub struct Candidate<'a> {
    pub index: usize,
    pub label: &'a str,
    pub stats: GraphStats,
    pub uncertainty: f64,
}

/// Scores every candidate (z-normalizing uncertainty and each property
/// over this list) and returns the `index` of the best; ties break
/// toward the lexicographically smallest label. A single candidate wins
/// outright.
pub fn select_graph(cands: &[Candidate], gamma: f64) -> usize {
    assert!(!cands.is_empty(), "selection from an empty pool");
    let zs = z_normalize(&cands.iter().map(|c| c.stats).collect::<Vec<_>>());
    let zu = stats::z_scores(&cands.iter().map(|c| c.uncertainty).collect::<Vec<_>>());
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, cand) in cands.iter().enumerate() {
        let s = score_graph(gamma, zu[i], property_score(&zs[i]));
        let better = s > best_score || (s == best_score && cand.label < cands[best].label);
        if i == 0 || better {
            best = i;
            best_score = s;
        }
    }
    cands[best].index
}

/// Indices of samples to train on: those with loss above the threshold,
/// or the top `min_batch` by loss when too few clear it (all of them if
/// the pool is smaller than `min_batch`). Order is stable.
pub fn filter_samples(losses: &[f64], loss_threshold: f64, min_batch: usize) -> Vec<usize> {
    let kept: Vec<usize> = (0..losses.len())
        .filter(|&i| losses[i] > loss_threshold)
        .collect();
    if kept.len() >= min_batch {
        return kept;
    }
    let take = min_batch.min(losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap().then(a.cmp(&b)));
    let mut top: Vec<usize> = order.into_iter().take(take).collect();
    top.sort_unstable();
    top
}

/// Leave the current graph once its uncertainty falls below the graph
/// threshold or the epoch budget on it is spent.
pub fn should_switch(graph_uncertainty: f64, epochs_on_graph: usize, cfg: &SelectionConfig) -> bool {
    graph_uncertainty < cfg.graph_threshold || epochs_on_graph >= cfg.max_epochs_per_graph
}

/// Nothing left worth training on: the pool is empty or every remaining
/// graph is already below the stop threshold.
pub fn pool_exhausted(remaining_uncertainty: &[f64], cfg: &SelectionConfig) -> bool {
    remaining_uncertainty.is_empty()
        || remaining_uncertainty.iter().all(|&u| u < cfg.stop_uncertainty)
}
