//! FLOPs-based cost accounting: per-option inference costs, the lambda
//! coefficient, per-episode FLOPs ledgers, and the summary metrics
//! (percentage of large-policy usage and total FLOPs reduction against an
//! always-large counterfactual).

use serde::{Deserialize, Serialize};

use crate::nn::flops_per_inference;
use crate::{Error, Real, Result};

/// Per-sub-policy inference costs and the cost coefficient.
///
/// Costs are actor FLOPs normalized by the smallest actor, so `costs[0] == 1`
/// by construction. The counterfactual "large only" ledger charges no master
/// FLOPs, matching a flat baseline that has no master policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub lambda: Real,
    /// Normalized per-inference cost per option, small first.
    pub costs: Vec<Real>,
    /// Raw actor FLOPs per option, small first.
    pub flops_per_actor_inference: Vec<u64>,
    pub flops_master_inference: u64,
}

/// Normalized costs for a small/large actor pair: `(1, flops_large / flops_small)`.
pub fn derive_costs(small_layer_sizes: [usize; 4], large_layer_sizes: [usize; 4]) -> (Real, Real) {
    let small = flops_per_inference(small_layer_sizes);
    let large = flops_per_inference(large_layer_sizes);
    (1.0, large as Real / small as Real)
}

impl CostModel {
    pub fn new(
        lambda: Real,
        actor_layer_sizes: &[[usize; 4]],
        master_layer_sizes: [usize; 4],
    ) -> Self {
        assert!(!actor_layer_sizes.is_empty());
        assert!(lambda >= 0.0, "lambda must be non-negative");
        let flops: Vec<u64> = actor_layer_sizes
            .iter()
            .map(|&ls| flops_per_inference(ls))
            .collect();
        let base = flops[0] as Real;
        Self {
            lambda,
            costs: flops.iter().map(|&f| f as Real / base).collect(),
            flops_per_actor_inference: flops,
            flops_master_inference: flops_per_inference(master_layer_sizes),
        }
    }

    /// Cost model for a flat baseline: one actor, no master, with the
    /// FLOPs-reduction counterfactual still referenced to `large_flops`.
    pub fn flat_baseline(actor_layer_sizes: [usize; 4], large_layer_sizes: [usize; 4]) -> Self {
        let actor = flops_per_inference(actor_layer_sizes);
        let large = flops_per_inference(large_layer_sizes);
        Self {
            lambda: 0.0,
            costs: vec![1.0, large as Real / actor as Real],
            flops_per_actor_inference: vec![actor, large],
            flops_master_inference: 0,
        }
    }

    pub fn cost_of(&self, option: usize) -> Real {
        self.costs[option]
    }

    /// Index of the most expensive option ("large").
    pub fn large_option(&self) -> usize {
        self.flops_per_actor_inference.len() - 1
    }
}

/// Total FLOPs spent in one episode: one actor inference per step plus one
/// master inference per `n_omega`-step segment (the master is amortized over
/// the segment it controls).
pub fn episode_flops(option_trace: &[usize], n_omega: usize, cost_model: &CostModel) -> u64 {
    let actor: u64 = option_trace
        .iter()
        .map(|&w| cost_model.flops_per_actor_inference[w])
        .sum();
    let decisions = option_trace.len().div_ceil(n_omega) as u64;
    actor + decisions * cost_model.flops_master_inference
}

/// Per-episode evaluation record with the derived cost metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Undiscounted raw environment return.
    pub score: Real,
    pub option_trace: Vec<usize>,
    pub total_flops_ours: u64,
    /// Counterfactual: every step served by the large actor, no master.
    pub total_flops_l_only: u64,
    pub pct_large: Real,
    pub flops_reduction: Real,
}

impl EpisodeMetrics {
    pub fn from_trace(
        score: Real,
        option_trace: Vec<usize>,
        n_omega: usize,
        cost_model: &CostModel,
    ) -> Self {
        let len = option_trace.len();
        let large = cost_model.large_option();
        let flops_large = *cost_model
            .flops_per_actor_inference
            .last()
            .expect("non-empty cost table");
        let total_flops_ours = episode_flops(&option_trace, n_omega, cost_model);
        let total_flops_l_only = len as u64 * flops_large;
        let (pct_large, flops_reduction) = if len == 0 {
            (0.0, 0.0)
        } else {
            let large_steps = option_trace.iter().filter(|&&w| w == large).count();
            (
                large_steps as Real / len as Real,
                1.0 - total_flops_ours as Real / total_flops_l_only as Real,
            )
        };
        Self {
            score,
            option_trace,
            total_flops_ours,
            total_flops_l_only,
            pct_large,
            flops_reduction,
        }
    }

    /// Average FLOPs per env step, master amortized over its segment.
    pub fn avg_flops_per_inference(&self) -> Real {
        if self.option_trace.is_empty() {
            0.0
        } else {
            self.total_flops_ours as Real / self.option_trace.len() as Real
        }
    }
}

/// Mean and sample standard deviation of the headline episode metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub score_mean: Real,
    pub score_std: Real,
    pub pct_large_mean: Real,
    pub pct_large_std: Real,
    pub flops_reduction_mean: Real,
    pub flops_reduction_std: Real,
    pub avg_flops_per_inf_mean: Real,
    pub avg_flops_per_inf_std: Real,
}

pub fn mean_and_sample_std(values: &[Real]) -> (Real, Real) {
    let n = values.len();
    assert!(n > 0);
    let mean = values.iter().sum::<Real>() / n as Real;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / (n - 1) as Real;
    (mean, var.sqrt())
}

pub fn summarize(metrics: &[EpisodeMetrics]) -> Result<MetricsSummary> {
    if metrics.is_empty() {
        return Err(Error::Config("cannot summarize an empty episode list".into()));
    }
    let collect = |f: fn(&EpisodeMetrics) -> Real| -> Vec<Real> { metrics.iter().map(f).collect() };
    let (score_mean, score_std) = mean_and_sample_std(&collect(|m| m.score));
    let (pct_large_mean, pct_large_std) = mean_and_sample_std(&collect(|m| m.pct_large));
    let (flops_reduction_mean, flops_reduction_std) =
        mean_and_sample_std(&collect(|m| m.flops_reduction));
    let (avg_flops_per_inf_mean, avg_flops_per_inf_std) =
        mean_and_sample_std(&collect(|m| m.avg_flops_per_inference()));
    Ok(MetricsSummary {
        episodes: metrics.len(),
        score_mean,
        score_std,
        pct_large_mean,
        pct_large_std,
        flops_reduction_mean,
        flops_reduction_std,
        avg_flops_per_inf_mean,
        avg_flops_per_inf_std,
    })
}
