//! Optimal prefetching over a slow-fading (constant gain) channel.
//!
//! With a constant gain the per-slot allocation is an even split in each
//! phase, and the prefetching vector solves a convex program over `[0, γ]^L`
//! whose KKT system gives `α = [γ - p^(-1/(m-1)) ((N-N_P)/N_P) α_Σ]^+`.
//! The active set is found by growing a prefix of the tasks sorted by
//! priority `δ = γ p^(1/(m-1))` until the number of positive entries
//! matches the set size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;

/// Entries at or below this are treated as zero when classifying the task set.
pub const POSITIVE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchPlan {
    /// Prefetched bits per task.
    pub alpha: Vec<f64>,
    /// Tasks with `alpha > 0`, in ascending index order.
    pub task_set: Vec<usize>,
    pub alpha_sigma: f64,
}

impl PrefetchPlan {
    /// The plan that prefetches nothing.
    pub fn empty(tasks: usize) -> Self {
        Self {
            alpha: vec![0.0; tasks],
            task_set: Vec::new(),
            alpha_sigma: 0.0,
        }
    }

    pub fn demand_bits(&self, scenario: &Scenario, task: usize) -> f64 {
        (scenario.sizes()[task] - self.alpha[task]).max(0.0)
    }
}

/// Prefetching priority `δ(ℓ) = γ(ℓ) p(ℓ)^(1/(m-1))`.
pub fn priority(scenario: &Scenario, task: usize) -> Result<f64> {
    if task >= scenario.num_tasks() {
        return Err(Error::Domain(format!(
            "task index {task} out of range for {} tasks",
            scenario.num_tasks()
        )));
    }
    Ok(scenario.sizes()[task] * scenario.order().root(scenario.probs()[task]))
}

/// Task indices by descending priority; ties keep ascending index order.
pub fn priority_order(scenario: &Scenario) -> Vec<usize> {
    let delta: Vec<f64> = (0..scenario.num_tasks())
        .map(|i| scenario.sizes()[i] * scenario.order().root(scenario.probs()[i]))
        .collect();
    let mut order: Vec<usize> = (0..scenario.num_tasks()).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    order
}

/// Optimal total prefetched bits for a given task set.
pub fn total_prefetched_bits(scenario: &Scenario, task_set: &[usize]) -> Result<f64> {
    if task_set.is_empty() {
        return Err(Error::Domain("task set must be nonempty".into()));
    }
    if scenario.demand_slots() == 0 {
        return Err(Error::Domain(
            "N = N_P leaves no demand phase; the optimum is full prefetching".into(),
        ));
    }
    if let Some(&bad) = task_set.iter().find(|&&t| t >= scenario.num_tasks()) {
        return Err(Error::Domain(format!("task index {bad} out of range")));
    }
    let ratio = scenario.demand_slots() as f64 / scenario.prefetch_slots() as f64;
    let size: f64 = task_set.iter().map(|&t| scenario.sizes()[t]).sum();
    let weight: f64 = task_set.iter().map(|&t| scenario.prob_weight(t)).sum();
    Ok(size / (1.0 + ratio * weight))
}

fn clamp_alpha(scenario: &Scenario, alpha_sigma: f64) -> Vec<f64> {
    let ratio = scenario.demand_slots() as f64 / scenario.prefetch_slots() as f64;
    (0..scenario.num_tasks())
        .map(|t| {
            let a = scenario.sizes()[t] - scenario.prob_weight(t) * ratio * alpha_sigma;
            if a > POSITIVE_EPS {
                a
            } else {
                0.0
            }
        })
        .collect()
}

/// Optimal prefetching vector and task set for slow fading.
pub fn optimal_prefetch_slow(scenario: &Scenario) -> PrefetchPlan {
    let tasks = scenario.num_tasks();
    if scenario.demand_slots() == 0 {
        return PrefetchPlan {
            alpha: scenario.sizes().to_vec(),
            task_set: (0..tasks).collect(),
            alpha_sigma: scenario.total_size(),
        };
    }
    let order = priority_order(scenario);
    let mut alpha = vec![0.0; tasks];
    for size in 1..=tasks {
        let sigma = total_prefetched_bits(scenario, &order[..size]).expect("valid prefix");
        alpha = clamp_alpha(scenario, sigma);
        let positive = alpha.iter().filter(|&&a| a > 0.0).count();
        if positive == size {
            break;
        }
    }
    let task_set: Vec<usize> = (0..tasks).filter(|&t| alpha[t] > 0.0).collect();
    let alpha_sigma = alpha.iter().sum();
    PrefetchPlan {
        alpha,
        task_set,
        alpha_sigma,
    }
}

/// Bits sent in each of the `N` slots when `realized` turns out to be the next task.
pub fn slot_allocation_slow(plan: &PrefetchPlan, scenario: &Scenario, realized: usize) -> Result<Vec<f64>> {
    if realized >= scenario.num_tasks() {
        return Err(Error::Domain(format!("task index {realized} out of range")));
    }
    let np = scenario.prefetch_slots();
    let nd = scenario.demand_slots();
    let mut slots = vec![plan.alpha_sigma / np as f64; np];
    if nd > 0 {
        let beta = plan.demand_bits(scenario, realized);
        slots.extend(std::iter::repeat_n(beta / nd as f64, nd));
    }
    Ok(slots)
}

/// Expected fetching energy of `plan` with constant gain `gain`.
pub fn expected_fetch_energy_slow(scenario: &Scenario, gain: f64, plan: &PrefetchPlan) -> Result<f64> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::Domain(format!("channel gain {gain} must be positive")));
    }
    Ok(scenario.lambda() / gain * objective_p3(scenario, &plan.alpha))
}

/// Prefetch-plus-expected-demand energy at unit gain and unit `λ`.
fn objective_p3(scenario: &Scenario, alpha: &[f64]) -> f64 {
    let order = scenario.order();
    let sigma: f64 = alpha.iter().sum();
    let prefetch = order.pow(sigma) / order.pow_m1(scenario.prefetch_slots() as f64);
    let nd = scenario.demand_slots();
    if nd == 0 {
        return prefetch;
    }
    let demand: f64 = scenario
        .probs()
        .iter()
        .zip(scenario.sizes())
        .zip(alpha)
        .map(|((p, g), a)| p * order.pow((g - a).max(0.0)))
        .sum();
    prefetch + demand / order.pow_m1(nd as f64)
}

/// Energy of demand-fetching everything with constant gain `gain`.
pub fn no_prefetch_energy_slow(scenario: &Scenario, gain: f64) -> Result<f64> {
    if scenario.demand_slots() == 0 {
        return Err(Error::Infeasible("no demand slots to fetch the task data in".into()));
    }
    expected_fetch_energy_slow(scenario, gain, &PrefetchPlan::empty(scenario.num_tasks()))
}

/// Closed-form slow-fading prefetching gain of the uniform scenario.
///
/// It lower-bounds [`prefetch_gain_slow`] whenever the probabilities or the
/// sizes are uniform. With both non-uniform the gain can fall below it.
pub fn gain_lower_bound(scenario: &Scenario) -> Result<f64> {
    let n = scenario.latency() as f64;
    let np = scenario.prefetch_slots() as f64;
    if scenario.demand_slots() == 0 {
        return Err(Error::UnboundedGain);
    }
    let m = scenario.m() as f64;
    let l = scenario.num_tasks() as f64;
    let base = (n - np * (1.0 - l.powf(-m / (m - 1.0)))) / (n - np);
    Ok(scenario.order().pow_m1(base))
}

/// Ratio of the no-prefetching energy to the optimal prefetching energy.
pub fn prefetch_gain_slow(scenario: &Scenario, gain: f64) -> Result<f64> {
    if scenario.demand_slots() == 0 {
        return Err(Error::UnboundedGain);
    }
    let plan = optimal_prefetch_slow(scenario);
    let with = expected_fetch_energy_slow(scenario, gain, &plan)?;
    let without = no_prefetch_energy_slow(scenario, gain)?;
    Ok(without / with)
}

/// Largest relative violation of the stationarity conditions over the task
/// set: `(α_Σ/N_P)^(m-1) = p (β/(N-N_P))^(m-1)`.
pub fn kkt_residual(scenario: &Scenario, plan: &PrefetchPlan) -> f64 {
    if scenario.demand_slots() == 0 {
        return 0.0;
    }
    let order = scenario.order();
    let lhs = order.pow_m1(plan.alpha_sigma / scenario.prefetch_slots() as f64);
    plan.task_set
        .iter()
        .map(|&t| {
            let beta = plan.demand_bits(scenario, t);
            let rhs = scenario.probs()[t] * order.pow_m1(beta / scenario.demand_slots() as f64);
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}
