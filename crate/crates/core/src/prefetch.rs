//! Threshold prefetching over fast fading.
//!
//! Conditioned on the prefetching-task set `S`, the optimal decision in
//! prefetch slot `n` is `s_n = [ρ_n - η_n p^(-1/(m-1))]^+` with a threshold
//! `η_n` that depends on the current gain and on the `ζ(S)` cost
//! coefficients. The set itself depends on future gains, so three ways of
//! picking it are provided: the two causal estimators (aggressive and
//! conservative) that re-estimate a set every slot, and a non-causal
//! benchmark that sees the whole gain sequence.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{simulate_demand_episode, DemandTrace, XiTable};
use crate::error::{Error, Result};
use crate::model::{slot_energy, ChannelModel, MonomialOrder, Scenario};
use crate::slow::{priority_order, POSITIVE_EPS};

/// Largest task count for which every subset gets a precomputed table.
pub const MAX_EXHAUSTIVE_TASKS: usize = 10;

/// Prefetching cost coefficients `ζ_j(S)` for one task set.
///
/// Indexed by remaining-slot count `j = N - n`, which runs from
/// `N - N_P + 1` (after the next-to-last prefetch slot) up to `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaTable {
    task_set: Vec<usize>,
    weight_sum: f64,
    first: usize,
    zeta: Vec<f64>,
    inv_roots: Vec<f64>,
    xi_link: f64,
    xi_link_inv_root: f64,
    channel: ChannelModel,
    order: MonomialOrder,
}

impl ZetaTable {
    pub fn task_set(&self) -> &[usize] {
        &self.task_set
    }

    /// `Σ_{ℓ∈S} p(ℓ)^(-1/(m-1))`
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Smallest valid index, `N - N_P + 1`.
    pub fn first_index(&self) -> usize {
        self.first
    }

    /// Largest valid index, `N`.
    pub fn last_index(&self) -> usize {
        self.first + self.zeta.len() - 1
    }

    pub fn get(&self, j: usize) -> f64 {
        self.zeta[j - self.first]
    }

    /// `(1/ζ_j)^(1/(m-1))`
    pub fn inv_root(&self, j: usize) -> f64 {
        self.inv_roots[j - self.first]
    }

    /// `ξ_{N-N_P}`, the demand coefficient the recursion starts from.
    pub fn xi_link(&self) -> f64 {
        self.xi_link
    }

    pub fn channel(&self) -> ChannelModel {
        self.channel
    }
}

/// Builds `ζ(S)` backward from the boundary term next to the demand phase.
///
/// `N = N_P` is accepted: the demand link is then the `ξ_0 = inf` sentinel
/// and the last prefetch slot flushes every remaining bit.
pub fn build_zeta_table(
    scenario: &Scenario,
    channel: ChannelModel,
    task_set: &[usize],
    xi: &XiTable,
) -> Result<ZetaTable> {
    if task_set.is_empty() {
        return Err(Error::Domain("task set must be nonempty".into()));
    }
    let mut set = task_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if let Some(&bad) = set.iter().find(|&&t| t >= scenario.num_tasks()) {
        return Err(Error::Domain(format!("task index {bad} out of range")));
    }
    let nd = scenario.demand_slots();
    if xi.horizon() < nd {
        return Err(Error::Domain(format!(
            "ξ table horizon {} shorter than N - N_P = {nd}",
            xi.horizon()
        )));
    }
    let order = scenario.order();
    let weight_sum: f64 = set.iter().map(|&t| scenario.prob_weight(t)).sum();
    let xi_link_inv_root = xi.inv_root(nd);
    let boundary = xi_link_inv_root * weight_sum;
    let np = scenario.prefetch_slots();
    let mut zeta = Vec::with_capacity(np);
    let mut inv_roots = Vec::with_capacity(np);
    for i in 0..np {
        let c = if i == 0 { boundary } else { inv_roots[i - 1] };
        let z = channel.expect(|g| order.inv_pow(order.root(g) + c))?;
        zeta.push(z);
        inv_roots.push(order.root(1.0 / z));
    }
    Ok(ZetaTable {
        task_set: set,
        weight_sum,
        first: nd + 1,
        zeta,
        inv_roots,
        xi_link: xi.get(nd),
        xi_link_inv_root,
        channel,
        order,
    })
}

/// `ζ(S)` built from the Jensen upper-bound recursion
/// `(1/ζ_j)^(1/(m-1)) = E[g]^(1/(m-1)) + (1/ζ_{j-1})^(1/(m-1))`.
///
/// With this table and every future gain equal to `E[g]`, the non-causal
/// final threshold telescopes to the aggressive estimate.
pub fn build_jensen_zeta_table(
    scenario: &Scenario,
    channel: ChannelModel,
    task_set: &[usize],
    xi: &XiTable,
) -> Result<ZetaTable> {
    let mut table = build_zeta_table(scenario, channel, task_set, xi)?;
    let order = scenario.order();
    let mean_root = order.root(channel.mean_gain());
    let mut c = table.xi_link_inv_root * table.weight_sum;
    for i in 0..table.zeta.len() {
        c += mean_root;
        table.inv_roots[i] = c;
        table.zeta[i] = order.inv_pow(c);
    }
    Ok(table)
}

/// Per-episode mutable state of the prefetcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    /// Current prefetch slot, 1-based.
    pub slot: usize,
    /// Remaining bits per task.
    pub rho: Vec<f64>,
    /// Task set used in the current slot.
    pub approx_set: Vec<usize>,
    pub threshold_history: Vec<f64>,
    /// Decision of the previous slot (zeros before the first slot).
    pub last_decision: Vec<f64>,
}

impl EpisodeState {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            slot: 1,
            rho: scenario.sizes().to_vec(),
            approx_set: Vec::new(),
            threshold_history: Vec::new(),
            last_decision: vec![0.0; scenario.num_tasks()],
        }
    }

    /// Applies a decision and moves to the next slot.
    pub fn advance(&mut self, eta: f64, decision: Vec<f64>) {
        for (r, s) in self.rho.iter_mut().zip(&decision) {
            *r = (*r - s).max(0.0);
        }
        self.threshold_history.push(eta);
        self.last_decision = decision;
        self.slot += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrefetchPolicyKind {
    Aggressive,
    Conservative,
    NonCausalOracle,
    NoPrefetch,
}

impl PrefetchPolicyKind {
    pub fn estimator(self) -> Option<Estimator> {
        match self {
            Self::Aggressive => Some(Estimator::Aggressive),
            Self::Conservative => Some(Estimator::Conservative),
            _ => None,
        }
    }
}

/// Causal estimate of the final threshold used to pick the task set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Future gains replaced by their mean (with the Jensen bound on `ζ`).
    Aggressive,
    /// Future gains replaced by zero.
    Conservative,
}

/// What the non-causal benchmark is allowed to know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Benchmark {
    /// Every prefetch-slot gain is known before the first slot, so the
    /// prefetch phase is a deterministic convex program. Lower-bounds the
    /// energy of every causal policy on each gain sequence.
    #[default]
    FullCsi,
    /// Causal thresholds with the `ζ` tables, but with the task set picked
    /// from the whole gain sequence and held fixed.
    KnownSet(OracleSearch),
}

/// How a [`Benchmark::KnownSet`] benchmark picks its task set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OracleSearch {
    /// Fixed point of the final-threshold cascade over priority prefixes.
    FixedPoint,
    /// Lowest-energy priority prefix.
    #[default]
    Prefixes,
    /// Lowest-energy subset over all `2^L - 1` sets; `L <= 10` only.
    Exhaustive,
}

fn sum_over(set: &[usize], values: &[f64]) -> f64 {
    set.iter().map(|&t| values[t]).sum()
}

fn exact_threshold(scenario: &Scenario, rho: &[f64], slot: usize, gain: f64, zeta: &ZetaTable) -> f64 {
    let order = scenario.order();
    let mass = sum_over(&zeta.task_set, rho);
    let gr = order.root(gain);
    if slot < scenario.prefetch_slots() {
        let c = zeta.inv_root(scenario.latency() - slot);
        mass * c / ((gr + c) * zeta.weight_sum)
    } else {
        let c = zeta.xi_link_inv_root;
        let denom = gr + c * zeta.weight_sum;
        if denom == 0.0 {
            0.0
        } else {
            mass * c / denom
        }
    }
}

/// Threshold `η_n` of the optimal decision for a known task set (the task
/// set of `zeta`). The last prefetch slot uses the demand coefficient.
pub fn threshold_eta(state: &EpisodeState, gain: f64, scenario: &Scenario, zeta: &ZetaTable, _xi: &XiTable) -> f64 {
    exact_threshold(scenario, &state.rho, state.slot, gain, zeta)
}

fn clamp_decision(scenario: &Scenario, rho: &[f64], eta: f64) -> (Vec<f64>, usize) {
    let order = scenario.order();
    let mut clamped = 0;
    let s = rho
        .iter()
        .zip(scenario.probs())
        .map(|(&r, &p)| {
            let raw = r - eta * order.prob_weight(p);
            if raw > r {
                clamped += 1;
                r
            } else if raw > POSITIVE_EPS {
                raw
            } else {
                0.0
            }
        })
        .collect();
    (s, clamped)
}

/// Per-task bits for the current slot, `[ρ - η p^(-1/(m-1))]^+`.
pub fn decision_vector(state: &EpisodeState, eta: f64, scenario: &Scenario) -> Vec<f64> {
    clamp_decision(scenario, &state.rho, eta).0
}

/// Final threshold `η_{N_P}` given the gains of slots `n..=N_P`
/// (`future_gains[0]` is the current slot).
pub fn noncausal_final_threshold(
    state: &EpisodeState,
    future_gains: &[f64],
    scenario: &Scenario,
    zeta: &ZetaTable,
    _xi: &XiTable,
) -> Result<f64> {
    let np = scenario.prefetch_slots();
    let n = state.slot;
    if n == 0 || n > np || future_gains.len() != np - n + 1 {
        return Err(Error::Domain(format!(
            "expected {} gains for slots {n}..={np}",
            (np + 1).saturating_sub(n)
        )));
    }
    let order = scenario.order();
    let c_xi = zeta.xi_link_inv_root;
    let last = order.root(future_gains[future_gains.len() - 1]);
    let denom = last + c_xi * zeta.weight_sum;
    let mass = sum_over(&zeta.task_set, &state.rho);
    let mut eta = if denom == 0.0 { 0.0 } else { mass * c_xi / denom };
    for (offset, &g) in future_gains[..future_gains.len() - 1].iter().enumerate() {
        let c = zeta.inv_root(scenario.latency() - (n + offset));
        eta *= c / (order.root(g) + c);
    }
    Ok(eta)
}

/// Total prefetched bits per task implied by a final threshold.
pub fn alpha_from_final_threshold(scenario: &Scenario, eta_final: f64) -> Vec<f64> {
    clamp_decision(scenario, scenario.sizes(), eta_final).0
}

/// Causal estimate of `η_{N_P}` from the current slot's state and gain.
///
/// In the last prefetch slot both estimators return the exact threshold.
pub fn estimate_threshold(
    state: &EpisodeState,
    gain: f64,
    scenario: &Scenario,
    zeta: &ZetaTable,
    _xi: &XiTable,
    estimator: Estimator,
) -> f64 {
    let n = state.slot;
    if n >= scenario.prefetch_slots() {
        return exact_threshold(scenario, &state.rho, n, gain, zeta);
    }
    let order = scenario.order();
    let mass = sum_over(&zeta.task_set, &state.rho);
    let gr = order.root(gain);
    let c = zeta.inv_root(scenario.latency() - n);
    match estimator {
        Estimator::Aggressive => mass * zeta.xi_link_inv_root / (gr + c),
        Estimator::Conservative => mass * c / ((gr + c) * zeta.weight_sum),
    }
}

/// Precomputed coefficient tables for one (scenario, channel) pair.
#[derive(Debug, Clone)]
pub struct PrefetchTables {
    channel: ChannelModel,
    priority: Vec<usize>,
    xi: XiTable,
    /// `prefixes[k - 1]` is the table for the first `k` tasks in priority order.
    prefixes: Vec<ZetaTable>,
    /// Indexed by task bitmask when exhaustive search is enabled.
    subsets: Vec<Option<ZetaTable>>,
    benchmark: Benchmark,
}

impl PrefetchTables {
    pub fn build(scenario: &Scenario, channel: ChannelModel) -> Result<Self> {
        Self::build_with(scenario, channel, Benchmark::default())
    }

    pub fn build_with(scenario: &Scenario, channel: ChannelModel, benchmark: Benchmark) -> Result<Self> {
        let xi = XiTable::build(channel, scenario.order(), scenario.demand_slots().max(1))?;
        let priority = priority_order(scenario);
        let prefixes = (1..=priority.len())
            .map(|k| build_zeta_table(scenario, channel, &priority[..k], &xi))
            .collect::<Result<Vec<_>>>()?;
        let mut subsets = Vec::new();
        if benchmark == Benchmark::KnownSet(OracleSearch::Exhaustive) {
            let l = scenario.num_tasks();
            if l > MAX_EXHAUSTIVE_TASKS {
                return Err(Error::InstanceTooLarge(format!(
                    "exhaustive task-set search needs L <= {MAX_EXHAUSTIVE_TASKS}, got {l}"
                )));
            }
            subsets.push(None);
            for mask in 1u32..(1 << l) {
                let set: Vec<usize> = (0..l).filter(|t| mask & (1 << t) != 0).collect();
                subsets.push(Some(build_zeta_table(scenario, channel, &set, &xi)?));
            }
        }
        Ok(Self {
            channel,
            priority,
            xi,
            prefixes,
            subsets,
            benchmark,
        })
    }

    pub fn channel(&self) -> ChannelModel {
        self.channel
    }

    pub fn xi(&self) -> &XiTable {
        &self.xi
    }

    /// Task indices by descending priority.
    pub fn priority(&self) -> &[usize] {
        &self.priority
    }

    /// Table for the `k` highest-priority tasks, `1 <= k <= L`.
    pub fn prefix(&self, k: usize) -> &ZetaTable {
        &self.prefixes[k - 1]
    }

    pub fn benchmark(&self) -> Benchmark {
        self.benchmark
    }

    /// Table for an arbitrary nonempty set; built on the fly if it is not cached.
    pub fn table_for(&self, scenario: &Scenario, set: &[usize]) -> Result<Cow<'_, ZetaTable>> {
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() {
            return Err(Error::Domain("task set must be nonempty".into()));
        }
        if !self.subsets.is_empty() {
            let mask: usize = sorted.iter().map(|t| 1usize << t).sum();
            if let Some(Some(t)) = self.subsets.get(mask) {
                return Ok(Cow::Borrowed(t));
            }
        }
        let k = sorted.len();
        if k <= self.prefixes.len() && self.prefixes[k - 1].task_set == sorted {
            return Ok(Cow::Borrowed(&self.prefixes[k - 1]));
        }
        build_zeta_table(scenario, self.channel, &sorted, &self.xi).map(Cow::Owned)
    }
}

/// Approximate task set for the current slot, grown in priority order from
/// the tasks that received bits in the previous slot.
pub fn approximate_task_set(
    state: &EpisodeState,
    gain: f64,
    estimator: Estimator,
    scenario: &Scenario,
    tables: &PrefetchTables,
) -> Result<Vec<usize>> {
    let l = scenario.num_tasks();
    let mut set: Vec<usize> = (0..l).filter(|&t| state.last_decision[t] > POSITIVE_EPS).collect();
    let mut cursor = 0;
    while set.len() < l {
        if !set.is_empty() {
            let zeta = tables.table_for(scenario, &set)?;
            let eta = estimate_threshold(state, gain, scenario, &zeta, &tables.xi, estimator);
            let alpha = alpha_from_final_threshold(scenario, eta);
            let positive = alpha.iter().filter(|&&a| a > 0.0).count();
            if positive == set.len() {
                break;
            }
        }
        while set.contains(&tables.priority[cursor]) {
            cursor += 1;
        }
        set.push(tables.priority[cursor]);
        set.sort_unstable();
    }
    Ok(set)
}

/// Expected total fetching energy of the threshold policy for a fixed task
/// set; the unprefetched tasks pay the demand coefficient `ξ_{N-N_P}`.
pub fn expected_total_energy_fast(scenario: &Scenario, set: &[usize], tables: &PrefetchTables) -> Result<f64> {
    let order = scenario.order();
    let lambda = scenario.lambda();
    let nd = scenario.demand_slots();
    let mut in_set = vec![false; scenario.num_tasks()];
    for &t in set {
        if t >= in_set.len() {
            return Err(Error::Domain(format!("task index {t} out of range")));
        }
        in_set[t] = true;
    }
    let mut leftover = 0.0;
    for (t, _) in in_set.iter().enumerate().filter(|(_, &inside)| !inside) {
        if nd == 0 {
            return Err(Error::Infeasible("unprefetched tasks with no demand slots".into()));
        }
        leftover += scenario.probs()[t] * order.pow(scenario.sizes()[t]);
    }
    let demand = if leftover > 0.0 {
        lambda * tables.xi.get(nd) * leftover
    } else {
        0.0
    };
    if set.is_empty() {
        return Ok(demand);
    }
    let zeta = tables.table_for(scenario, set)?;
    let mass = sum_over(zeta.task_set(), scenario.sizes());
    Ok(lambda * order.pow(mass) * zeta.get(scenario.latency()) + demand)
}

/// Full ledger of one fetching duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub policy: PrefetchPolicyKind,
    /// Gains of all `N` slots.
    pub gains: Vec<f64>,
    /// Per prefetch slot, bits sent for each task.
    pub decisions: Vec<Vec<f64>>,
    /// Threshold applied in each prefetch slot (empty without prefetching).
    pub thresholds: Vec<f64>,
    /// Task set used in each prefetch slot.
    pub task_sets: Vec<Vec<usize>>,
    /// Total prefetched bits per task.
    pub prefetched: Vec<f64>,
    pub realized_task: usize,
    pub prefetch_energy: f64,
    pub demand: DemandTrace,
    pub demand_energy: f64,
    /// `λ ξ_{N-N_P} Σ p β^m`: demand energy averaged over the task draw and
    /// the demand-phase gains.
    pub expected_demand_energy: f64,
    /// Number of decision entries clamped to the remaining bits.
    pub clamped: usize,
}

impl EpisodeTrace {
    /// Realised energy of the episode.
    pub fn total_energy(&self) -> f64 {
        self.prefetch_energy + self.demand_energy
    }

    /// Energy conditioned on the prefetch-phase gains only.
    pub fn conditional_energy(&self) -> f64 {
        self.prefetch_energy + self.expected_demand_energy
    }
}

struct PrefetchRun {
    rho: Vec<f64>,
    energy: f64,
    thresholds: Vec<f64>,
    decisions: Vec<Vec<f64>>,
    task_sets: Vec<Vec<usize>>,
    clamped: usize,
}

fn expected_leftover_energy(scenario: &Scenario, xi: &XiTable, rho: &[f64]) -> f64 {
    let nd = scenario.demand_slots();
    let order = scenario.order();
    let sum: f64 = rho.iter().zip(scenario.probs()).map(|(r, p)| p * order.pow(*r)).sum();
    if sum == 0.0 {
        0.0
    } else if nd == 0 {
        f64::INFINITY
    } else {
        scenario.lambda() * xi.get(nd) * sum
    }
}

fn run_fixed_set(scenario: &Scenario, zeta: &ZetaTable, gains: &[f64]) -> PrefetchRun {
    let mut state = EpisodeState::new(scenario);
    let mut run = PrefetchRun {
        rho: Vec::new(),
        energy: 0.0,
        thresholds: Vec::new(),
        decisions: Vec::new(),
        task_sets: Vec::new(),
        clamped: 0,
    };
    for &g in &gains[..scenario.prefetch_slots()] {
        let eta = exact_threshold(scenario, &state.rho, state.slot, g, zeta);
        let (s, clamped) = clamp_decision(scenario, &state.rho, eta);
        run.clamped += clamped;
        run.energy += slot_energy(scenario.lambda(), scenario.order(), s.iter().sum(), g);
        run.decisions.push(s.clone());
        run.task_sets.push(zeta.task_set.clone());
        state.advance(eta, s);
    }
    run.thresholds = state.threshold_history;
    run.rho = state.rho;
    run
}

fn run_estimated(
    scenario: &Scenario,
    tables: &PrefetchTables,
    estimator: Estimator,
    gains: &[f64],
) -> Result<PrefetchRun> {
    let mut state = EpisodeState::new(scenario);
    let mut run = PrefetchRun {
        rho: Vec::new(),
        energy: 0.0,
        thresholds: Vec::new(),
        decisions: Vec::new(),
        task_sets: Vec::new(),
        clamped: 0,
    };
    for &g in &gains[..scenario.prefetch_slots()] {
        let set = approximate_task_set(&state, g, estimator, scenario, tables)?;
        let zeta = tables.table_for(scenario, &set)?;
        let eta = exact_threshold(scenario, &state.rho, state.slot, g, &zeta);
        let (s, clamped) = clamp_decision(scenario, &state.rho, eta);
        run.clamped += clamped;
        run.energy += slot_energy(scenario.lambda(), scenario.order(), s.iter().sum(), g);
        run.decisions.push(s.clone());
        state.approx_set = set.clone();
        run.task_sets.push(set);
        state.advance(eta, s);
    }
    run.thresholds = state.threshold_history;
    run.rho = state.rho;
    Ok(run)
}

struct FullCsiPlan {
    alpha: Vec<f64>,
    alpha_sigma: f64,
    eta: f64,
    /// `Σ_n g_n^(1/(m-1))` over the prefetch slots.
    gain_sum: f64,
}

/// Optimal prefetched bits when all prefetch-slot gains are known: the
/// phase costs `λ α_Σ^m / (Σ g^(1/(m-1)))^(m-1)`, so the priority-prefix
/// growth of the slow-fading solution applies with that effective gain.
fn full_csi_plan(scenario: &Scenario, tables: &PrefetchTables, gains: &[f64]) -> FullCsiPlan {
    let order = scenario.order();
    let gain_sum: f64 = gains.iter().map(|&g| order.root(g)).sum();
    let nd = scenario.demand_slots();
    let c_xi = if nd == 0 { 0.0 } else { tables.xi.inv_root(nd) };
    let mut eta = 0.0;
    let mut weight = 0.0;
    let mut mass = 0.0;
    for (k, &t) in tables.priority.iter().enumerate() {
        weight += scenario.prob_weight(t);
        mass += scenario.sizes()[t];
        eta = mass * c_xi / (gain_sum + c_xi * weight);
        let positive = alpha_from_final_threshold(scenario, eta)
            .iter()
            .filter(|&&a| a > 0.0)
            .count();
        if positive == k + 1 {
            break;
        }
    }
    let alpha = alpha_from_final_threshold(scenario, eta);
    FullCsiPlan {
        alpha_sigma: alpha.iter().sum(),
        alpha,
        eta,
        gain_sum,
    }
}

/// Threshold `η` with `Σ_ℓ [γ(ℓ) - η p(ℓ)^(-1/(m-1))]^+ = total`.
fn level_for_total(scenario: &Scenario, priority: &[usize], total: f64) -> f64 {
    let mut weight = 0.0;
    let mut mass = 0.0;
    for (k, &t) in priority.iter().enumerate() {
        weight += scenario.prob_weight(t);
        mass += scenario.sizes()[t];
        let eta = (mass - total) / weight;
        let next = priority
            .get(k + 1)
            .map_or(0.0, |&u| scenario.sizes()[u] / scenario.prob_weight(u));
        if eta >= next {
            return eta.max(0.0);
        }
    }
    0.0
}

fn run_full_csi(scenario: &Scenario, tables: &PrefetchTables, gains: &[f64]) -> PrefetchRun {
    let np = scenario.prefetch_slots();
    let order = scenario.order();
    let plan = full_csi_plan(scenario, tables, &gains[..np]);
    let set: Vec<usize> = (0..scenario.num_tasks()).filter(|&t| plan.alpha[t] > 0.0).collect();
    let mut state = EpisodeState::new(scenario);
    let mut run = PrefetchRun {
        rho: Vec::new(),
        energy: 0.0,
        thresholds: Vec::new(),
        decisions: Vec::new(),
        task_sets: Vec::new(),
        clamped: 0,
    };
    let mut cumulative = 0.0;
    for (n, &g) in gains[..np].iter().enumerate() {
        cumulative += order.root(g);
        // bits sent up to slot n grow with the gain mass seen so far
        let eta = if n + 1 == np {
            plan.eta
        } else {
            level_for_total(
                scenario,
                &tables.priority,
                plan.alpha_sigma * cumulative / plan.gain_sum,
            )
        };
        let (s, clamped) = clamp_decision(scenario, &state.rho, eta);
        run.clamped += clamped;
        run.energy += slot_energy(scenario.lambda(), order, s.iter().sum(), g);
        run.decisions.push(s.clone());
        run.task_sets.push(set.clone());
        state.advance(eta, s);
    }
    run.thresholds = state.threshold_history;
    run.rho = state.rho;
    run
}

/// Task set picked by the non-causal benchmark for a known gain sequence.
pub fn noncausal_task_set(scenario: &Scenario, tables: &PrefetchTables, gains: &[f64]) -> Result<Vec<usize>> {
    let np = scenario.prefetch_slots();
    if gains.len() < np {
        return Err(Error::Domain(format!(
            "need {np} prefetch-slot gains, got {}",
            gains.len()
        )));
    }
    let l = scenario.num_tasks();
    let search = match tables.benchmark {
        Benchmark::FullCsi => {
            let plan = full_csi_plan(scenario, tables, &gains[..np]);
            return Ok((0..l).filter(|&t| plan.alpha[t] > 0.0).collect());
        }
        Benchmark::KnownSet(search) => search,
    };
    match search {
        OracleSearch::FixedPoint => {
            let state = EpisodeState::new(scenario);
            for k in 1..=l {
                let zeta = tables.prefix(k);
                let eta = noncausal_final_threshold(&state, &gains[..np], scenario, zeta, &tables.xi)?;
                let positive = alpha_from_final_threshold(scenario, eta)
                    .iter()
                    .filter(|&&a| a > 0.0)
                    .count();
                if positive == k {
                    return Ok(zeta.task_set.clone());
                }
            }
            Ok(tables.prefix(l).task_set.clone())
        }
        OracleSearch::Prefixes => {
            let best = (1..=l)
                .map(|k| {
                    let run = run_fixed_set(scenario, tables.prefix(k), gains);
                    (k, run.energy + expected_leftover_energy(scenario, &tables.xi, &run.rho))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one task");
            Ok(tables.prefix(best.0).task_set.clone())
        }
        OracleSearch::Exhaustive => {
            let best = tables
                .subsets
                .iter()
                .flatten()
                .map(|zeta| {
                    let run = run_fixed_set(scenario, zeta, gains);
                    (
                        zeta,
                        run.energy + expected_leftover_energy(scenario, &tables.xi, &run.rho),
                    )
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one task");
            Ok(best.0.task_set.clone())
        }
    }
}

/// Runs the threshold policy with a fixed task set on a known gain sequence.
pub fn run_fixed_set_episode(
    scenario: &Scenario,
    tables: &PrefetchTables,
    set: &[usize],
    gains: &[f64],
    realized: usize,
) -> Result<EpisodeTrace> {
    let zeta = tables.table_for(scenario, set)?;
    check_episode_inputs(scenario, gains, realized)?;
    let run = run_fixed_set(scenario, &zeta, gains);
    finish_episode(
        scenario,
        tables,
        PrefetchPolicyKind::NonCausalOracle,
        gains,
        realized,
        run,
    )
}

fn check_episode_inputs(scenario: &Scenario, gains: &[f64], realized: usize) -> Result<()> {
    if gains.len() != scenario.latency() {
        return Err(Error::Domain(format!(
            "expected {} slot gains, got {}",
            scenario.latency(),
            gains.len()
        )));
    }
    if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::Domain(format!("channel gain {g} must be positive")));
    }
    if realized >= scenario.num_tasks() {
        return Err(Error::Domain(format!("task index {realized} out of range")));
    }
    Ok(())
}

fn finish_episode(
    scenario: &Scenario,
    tables: &PrefetchTables,
    policy: PrefetchPolicyKind,
    gains: &[f64],
    realized: usize,
    run: PrefetchRun,
) -> Result<EpisodeTrace> {
    let np = scenario.prefetch_slots();
    let beta = run.rho[realized];
    let demand = simulate_demand_episode(beta, &gains[np..], &tables.xi, scenario.lambda())?;
    let expected_demand_energy = expected_leftover_energy(scenario, &tables.xi, &run.rho);
    if !expected_demand_energy.is_finite() {
        return Err(Error::Infeasible("bits left over with no demand slots".into()));
    }
    let prefetched = scenario.sizes().iter().zip(&run.rho).map(|(g, r)| g - r).collect();
    Ok(EpisodeTrace {
        policy,
        gains: gains.to_vec(),
        decisions: run.decisions,
        thresholds: run.thresholds,
        task_sets: run.task_sets,
        prefetched,
        realized_task: realized,
        prefetch_energy: run.energy,
        demand_energy: demand.total_energy(),
        demand,
        expected_demand_energy,
        clamped: run.clamped,
    })
}

/// Runs one episode on a given gain sequence (all `N` slots) and realised task.
///
/// Policies compared on the same `gains` and `realized` form paired samples.
pub fn run_prefetch_episode_with(
    scenario: &Scenario,
    tables: &PrefetchTables,
    policy: PrefetchPolicyKind,
    gains: &[f64],
    realized: usize,
) -> Result<EpisodeTrace> {
    check_episode_inputs(scenario, gains, realized)?;
    let run = match policy {
        PrefetchPolicyKind::NoPrefetch => {
            if scenario.demand_slots() == 0 {
                return Err(Error::Infeasible("no demand slots to fetch without prefetching".into()));
            }
            let np = scenario.prefetch_slots();
            PrefetchRun {
                rho: scenario.sizes().to_vec(),
                energy: 0.0,
                thresholds: Vec::new(),
                decisions: vec![vec![0.0; scenario.num_tasks()]; np],
                task_sets: vec![Vec::new(); np],
                clamped: 0,
            }
        }
        PrefetchPolicyKind::NonCausalOracle => match tables.benchmark {
            Benchmark::FullCsi => run_full_csi(scenario, tables, gains),
            Benchmark::KnownSet(_) => {
                let set = noncausal_task_set(scenario, tables, gains)?;
                let zeta = tables.table_for(scenario, &set)?;
                run_fixed_set(scenario, &zeta, gains)
            }
        },
        PrefetchPolicyKind::Aggressive => run_estimated(scenario, tables, Estimator::Aggressive, gains)?,
        PrefetchPolicyKind::Conservative => run_estimated(scenario, tables, Estimator::Conservative, gains)?,
    };
    finish_episode(scenario, tables, policy, gains, realized, run)
}

/// Draws `N` gains and the realised task, then runs one episode.
pub fn draw_episode_inputs<R: Rng + ?Sized>(
    scenario: &Scenario,
    channel: ChannelModel,
    rng: &mut R,
) -> (Vec<f64>, usize) {
    let gains = (0..scenario.latency()).map(|_| channel.sample(rng)).collect();
    let realized = scenario.task_from_uniform(rng.random::<f64>());
    (gains, realized)
}

pub fn run_prefetch_episode<R: Rng + ?Sized>(
    scenario: &Scenario,
    tables: &PrefetchTables,
    policy: PrefetchPolicyKind,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let (gains, realized) = draw_episode_inputs(scenario, tables.channel, rng);
    run_prefetch_episode_with(scenario, tables, policy, &gains, realized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym2(latency: usize, np: usize) -> Scenario {
        Scenario::new(2, latency, np, vec![0.5, 0.5], vec![4.0, 4.0]).unwrap()
    }

    fn gamma2() -> ChannelModel {
        ChannelModel::fast_gamma(2).unwrap()
    }

    #[test]
    fn slow_zeta_matches_hand_recursion() {
        // N = 3, N_P = 2, g = 1: ξ_1 = 1, ζ_2 = 1/(1 + 4), ζ_3 = 1/(1 + 5)
        let s = sym2(3, 2);
        let ch = ChannelModel::slow(1.0).unwrap();
        let xi = XiTable::build(ch, s.order(), 1).unwrap();
        let z = build_zeta_table(&s, ch, &[0, 1], &xi).unwrap();
        assert_eq!((z.first_index(), z.last_index()), (2, 3));
        assert!((z.get(2) - 0.2).abs() < 1e-15);
        assert!((z.get(3) - 1.0 / 6.0).abs() < 1e-15);
        // agrees with the slow closed form 64 ζ_3
        let t = PrefetchTables::build(&s, ch).unwrap();
        let e = expected_total_energy_fast(&s, &[0, 1], &t).unwrap();
        assert!((e - 64.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_certain_task_continues_xi_chain() {
        // p = 1 gives weight 1, so ζ_j follows the ξ recursion
        let s = Scenario::new(2, 6, 3, vec![1.0], vec![2.0]).unwrap();
        let ch = gamma2();
        let xi = XiTable::build(ch, s.order(), 6).unwrap();
        let z = build_zeta_table(&s, ch, &[0], &xi).unwrap();
        for j in 4..=6 {
            assert!((z.get(j) - xi.get(j)).abs() < 1e-9, "j={j}");
        }
    }

    #[test]
    fn zeta_strictly_decreasing() {
        let s = Scenario::new(3, 9, 5, vec![0.2, 0.3, 0.5], vec![3.0, 1.0, 2.0]).unwrap();
        let ch = ChannelModel::fast_gamma(3).unwrap();
        let t = PrefetchTables::build(&s, ch).unwrap();
        for k in 1..=3 {
            let z = t.prefix(k);
            for j in z.first_index()..z.last_index() {
                assert!(z.get(j + 1) < z.get(j));
                assert!(z.get(j) > 0.0 && z.get(j).is_finite());
            }
        }
    }

    #[test]
    fn last_slot_threshold_example() {
        let s = sym2(2, 1);
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let state = EpisodeState::new(&s);
        let eta = threshold_eta(&state, 1.0, &s, t.prefix(2), t.xi());
        assert!((eta - 4.0 / 3.0).abs() < 1e-12);
        let d = decision_vector(&state, eta, &s);
        assert!((d[0] - 4.0 / 3.0).abs() < 1e-12 && (d[1] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_limits() {
        let s = Scenario::new(2, 5, 3, vec![0.3, 0.7], vec![5.0, 2.0]).unwrap();
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let mut state = EpisodeState::new(&s);
        assert!(threshold_eta(&state, 1e12, &s, t.prefix(2), t.xi()) < 1e-9);
        state.slot = 3;
        let lim = threshold_eta(&state, 1e-300, &s, t.prefix(2), t.xi());
        let expect = 7.0 / (1.0 / 0.3 + 1.0 / 0.7);
        assert!((lim - expect).abs() < 1e-9);
    }

    #[test]
    fn decision_vector_clamps() {
        let s = sym2(2, 1);
        let state = EpisodeState::new(&s);
        assert_eq!(decision_vector(&state, 0.0, &s), vec![4.0, 4.0]);
        assert_eq!(decision_vector(&state, 2.0, &s), vec![0.0, 0.0]);
        assert_eq!(decision_vector(&state, 5.0, &s), vec![0.0, 0.0]);
    }

    #[test]
    fn alpha_from_threshold_examples() {
        let s = Scenario::new(2, 2, 1, vec![0.9, 0.1], vec![4.0, 4.0]).unwrap();
        assert_eq!(alpha_from_final_threshold(&s, 0.0), vec![4.0, 4.0]);
        assert_eq!(alpha_from_final_threshold(&s, 1e9), vec![0.0, 0.0]);
        let a = alpha_from_final_threshold(&s, 1.0);
        assert!((a[0] - (4.0 - 1.0 / 0.9)).abs() < 1e-12 && a[1] == 0.0);
    }

    #[test]
    fn final_threshold_cascade_special_cases() {
        let s = Scenario::new(2, 6, 3, vec![0.2, 0.3, 0.5], vec![3.0, 4.0, 2.0]).unwrap();
        let ch = gamma2();
        let t = PrefetchTables::build(&s, ch).unwrap();
        let z = t.prefix(3);
        let mut state = EpisodeState::new(&s);
        state.rho = vec![1.0, 2.5, 0.7];

        // empty product in the last slot
        state.slot = 3;
        let a = noncausal_final_threshold(&state, &[0.8], &s, z, t.xi()).unwrap();
        let b = threshold_eta(&state, 0.8, &s, z, t.xi());
        assert!((a - b).abs() < 1e-12);

        // future gains at zero reproduce the conservative estimate
        state.slot = 1;
        let a = noncausal_final_threshold(&state, &[0.6, 0.0, 0.0], &s, z, t.xi()).unwrap();
        let b = estimate_threshold(&state, 0.6, &s, z, t.xi(), Estimator::Conservative);
        assert!((a - b).abs() < 1e-12 * b.max(1.0));

        // mean future gains with the Jensen table reproduce the aggressive estimate
        let zj = build_jensen_zeta_table(&s, ch, &[0, 1, 2], t.xi()).unwrap();
        let a = noncausal_final_threshold(&state, &[0.6, 1.0, 1.0], &s, &zj, t.xi()).unwrap();
        let b = estimate_threshold(&state, 0.6, &s, &zj, t.xi(), Estimator::Aggressive);
        assert!((a - b).abs() < 1e-12 * b.max(1.0));

        assert!(noncausal_final_threshold(&state, &[0.6, 1.0], &s, z, t.xi()).is_err());
    }

    #[test]
    fn estimators_coincide_in_last_slot() {
        let s = Scenario::new(3, 7, 4, vec![0.6, 0.4], vec![3.0, 4.0]).unwrap();
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let mut state = EpisodeState::new(&s);
        state.slot = 4;
        let z = t.prefix(2);
        let exact = threshold_eta(&state, 0.9, &s, z, t.xi());
        for e in [Estimator::Aggressive, Estimator::Conservative] {
            assert_eq!(estimate_threshold(&state, 0.9, &s, z, t.xi(), e), exact);
        }
    }

    #[test]
    fn approximate_set_single_task() {
        let s = Scenario::new(2, 5, 3, vec![1.0], vec![6.0]).unwrap();
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let state = EpisodeState::new(&s);
        for e in [Estimator::Aggressive, Estimator::Conservative] {
            assert_eq!(approximate_task_set(&state, 1.0, e, &s, &t).unwrap(), vec![0]);
        }
    }

    #[test]
    fn negligible_task_admitted_last() {
        let s = Scenario::new(2, 5, 4, vec![0.6, 0.399_999, 0.000_001], vec![5.0, 5.0, 10.0]).unwrap();
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        assert_eq!(t.priority(), &[0, 1, 2]);
        let state = EpisodeState::new(&s);
        for e in [Estimator::Aggressive, Estimator::Conservative] {
            let set = approximate_task_set(&state, 1.0, e, &s, &t).unwrap();
            assert!(!set.contains(&2), "{set:?}");
        }
    }

    #[test]
    fn expected_energy_special_cases() {
        let s = Scenario::new(2, 5, 3, vec![0.3, 0.7], vec![5.0, 2.0]).unwrap();
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let none = expected_total_energy_fast(&s, &[], &t).unwrap();
        let want = t.xi().get(2) * (0.3 * 25.0 + 0.7 * 4.0);
        assert!((none - want).abs() < 1e-12);

        let one = Scenario::new(3, 4, 2, vec![1.0], vec![3.0]).unwrap();
        let t1 = PrefetchTables::build(&one, gamma2()).unwrap();
        let e = expected_total_energy_fast(&one, &[0], &t1).unwrap();
        assert!((e - 27.0 * t1.prefix(1).get(4)).abs() < 1e-12);
    }

    #[test]
    fn episodes_conserve_bits() {
        let s = Scenario::new(3, 7, 4, vec![0.1, 0.2, 0.3, 0.4], vec![2.0, 6.0, 3.0, 1.0]).unwrap();
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for policy in [
            PrefetchPolicyKind::Aggressive,
            PrefetchPolicyKind::Conservative,
            PrefetchPolicyKind::NonCausalOracle,
            PrefetchPolicyKind::NoPrefetch,
        ] {
            for _ in 0..200 {
                let tr = run_prefetch_episode(&s, &t, policy, &mut rng).unwrap();
                let l = tr.realized_task;
                let pre: f64 = tr.decisions.iter().map(|d| d[l]).sum();
                assert!((pre + tr.demand.total_bits() - s.sizes()[l]).abs() < 1e-9);
                for task in 0..4 {
                    let sent: f64 = tr.decisions.iter().map(|d| d[task]).sum();
                    assert!((sent - tr.prefetched[task]).abs() < 1e-9);
                }
                assert_eq!(tr.clamped, 0);
            }
        }
    }

    #[test]
    fn no_prefetch_requires_demand_slots() {
        let s = sym2(3, 3);
        let t = PrefetchTables::build(&s, gamma2()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(run_prefetch_episode(&s, &t, PrefetchPolicyKind::NoPrefetch, &mut rng).is_err());
        // full prefetching flushes everything in the last prefetch slot
        let tr = run_prefetch_episode(&s, &t, PrefetchPolicyKind::NonCausalOracle, &mut rng).unwrap();
        assert!(tr.prefetched.iter().zip(s.sizes()).all(|(a, g)| (a - g).abs() < 1e-12));
        assert_eq!(tr.expected_demand_energy, 0.0);
    }

    #[test]
    fn full_csi_reduces_to_slow_optimum() {
        let s = Scenario::new(3, 7, 4, vec![0.1, 0.2, 0.3, 0.4], vec![2.0, 6.0, 3.0, 1.0]).unwrap();
        let ch = ChannelModel::slow(1.5).unwrap();
        let t = PrefetchTables::build(&s, ch).unwrap();
        let tr = run_prefetch_episode_with(&s, &t, PrefetchPolicyKind::NonCausalOracle, &[1.5; 7], 2).unwrap();
        let plan = crate::slow::optimal_prefetch_slow(&s);
        let want = crate::slow::expected_fetch_energy_slow(&s, 1.5, &plan).unwrap();
        assert!((tr.conditional_energy() - want).abs() < 1e-9 * want);
        for (a, b) in tr.prefetched.iter().zip(&plan.alpha) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn full_csi_lower_bounds_every_policy_pathwise() {
        let s = Scenario::new(2, 6, 4, vec![0.15, 0.25, 0.6], vec![5.0, 2.0, 7.0]).unwrap();
        let ch = gamma2();
        let t = PrefetchTables::build(&s, ch).unwrap();
        let known = PrefetchTables::build_with(&s, ch, Benchmark::KnownSet(OracleSearch::Prefixes)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let (g, r) = draw_episode_inputs(&s, ch, &mut rng);
            let best = run_prefetch_episode_with(&s, &t, PrefetchPolicyKind::NonCausalOracle, &g, r).unwrap();
            let e = best.conditional_energy();
            // phase energy equals the closed form with the effective gain
            let gsum: f64 = g[..4].iter().sum();
            let sigma: f64 = best.prefetched.iter().sum();
            assert!((best.prefetch_energy - sigma * sigma / gsum).abs() < 1e-9 * e);
            for kind in [
                PrefetchPolicyKind::Aggressive,
                PrefetchPolicyKind::Conservative,
                PrefetchPolicyKind::NoPrefetch,
            ] {
                let other = run_prefetch_episode_with(&s, &t, kind, &g, r).unwrap();
                assert!(e <= other.conditional_energy() + 1e-9, "{kind:?}");
            }
            let fixed = run_prefetch_episode_with(&s, &known, PrefetchPolicyKind::NonCausalOracle, &g, r).unwrap();
            assert!(e <= fixed.conditional_energy() + 1e-9);
            assert!(best.thresholds.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn known_set_searches_agree_on_small_instance() {
        let s = Scenario::new(2, 5, 3, vec![0.5, 0.3, 0.2], vec![3.0, 4.0, 2.0]).unwrap();
        let ch = gamma2();
        let pre = PrefetchTables::build_with(&s, ch, Benchmark::KnownSet(OracleSearch::Prefixes)).unwrap();
        let all = PrefetchTables::build_with(&s, ch, Benchmark::KnownSet(OracleSearch::Exhaustive)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worse = 0;
        for _ in 0..200 {
            let (g, r) = draw_episode_inputs(&s, ch, &mut rng);
            let a = run_prefetch_episode_with(&s, &pre, PrefetchPolicyKind::NonCausalOracle, &g, r).unwrap();
            let b = run_prefetch_episode_with(&s, &all, PrefetchPolicyKind::NonCausalOracle, &g, r).unwrap();
            assert!(b.conditional_energy() <= a.conditional_energy() + 1e-9);
            if b.conditional_energy() < a.conditional_energy() - 1e-9 {
                worse += 1;
            }
        }
        assert_eq!(worse, 0);
    }

    #[test]
    fn exhaustive_search_needs_small_instances() {
        let s = Scenario::uniform(2, 5, 4, 11, 20.0).unwrap();
        let ch = ChannelModel::slow(1.0).unwrap();
        assert!(matches!(
            PrefetchTables::build_with(&s, ch, Benchmark::KnownSet(OracleSearch::Exhaustive)),
            Err(Error::InstanceTooLarge(_))
        ));
    }
}
