//! Brute-force reference solvers.
//!
//! Nothing in here goes through the closed forms of the policy modules
//! (except the non-causal benchmark wrapper, which is a policy run by
//! definition), so the policies can be checked against these numbers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{regularized_gamma_p, ChannelModel, Scenario};
use crate::prefetch::{run_prefetch_episode, PrefetchPolicyKind, PrefetchTables};
use crate::stats::{MeanAccumulator, MeanEstimate};

/// Tolerance on the relative projected-gradient residual of [`slow_oracle`].
pub const ORACLE_RESIDUAL_TOL: f64 = 1e-5;

const GRID_BUDGET: f64 = 2e5;
const GOLDEN_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub argmin: Vec<f64>,
    pub objective: f64,
    /// Grid points per coordinate used before refinement.
    pub grid_resolution: usize,
    pub residual: f64,
}

struct SlowObjective {
    lambda: f64,
    m: i32,
    probs: Vec<f64>,
    sizes: Vec<f64>,
    pre_scale: f64,
    dem_scale: f64,
}

impl SlowObjective {
    fn new(s: &Scenario) -> Self {
        let m = s.m() as i32;
        let nd = s.demand_slots() as f64;
        Self {
            lambda: s.lambda(),
            m,
            probs: s.probs().to_vec(),
            sizes: s.sizes().to_vec(),
            pre_scale: 1.0 / (s.prefetch_slots() as f64).powi(m - 1),
            dem_scale: 1.0 / nd.powi(m - 1),
        }
    }

    fn eval(&self, a: &[f64]) -> f64 {
        let total: f64 = a.iter().sum();
        let demand: f64 = (self.probs.iter().zip(&self.sizes).zip(a))
            .map(|((p, g), x)| p * (g - x).max(0.0).powi(self.m))
            .sum();
        self.lambda * (total.powi(self.m) * self.pre_scale + demand * self.dem_scale)
    }

    fn gradient(&self, a: &[f64]) -> Vec<f64> {
        let total: f64 = a.iter().sum();
        let m = self.m as f64;
        let common = m * total.powi(self.m - 1) * self.pre_scale;
        (0..a.len())
            .map(|i| {
                let rest = (self.sizes[i] - a[i]).max(0.0);
                self.lambda * (common - m * self.probs[i] * rest.powi(self.m - 1) * self.dem_scale)
            })
            .collect()
    }

    /// Largest projected-gradient component relative to the gradient scale.
    fn residual(&self, a: &[f64]) -> f64 {
        let grad = self.gradient(a);
        let total: f64 = self.sizes.iter().sum();
        let scale = self.lambda * self.m as f64 * total.powi(self.m - 1) * self.pre_scale.max(self.dem_scale);
        let slack = 1e-7;
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                if a[i] <= slack {
                    (-g).max(0.0)
                } else if a[i] >= self.sizes[i] - slack {
                    g.max(0.0)
                } else {
                    g.abs()
                }
            })
            .fold(0.0, f64::max)
            / scale
    }
}

fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the endpoints can beat the interior at an active bound
    let mut best = (f(mid), mid);
    for x in [lo, hi] {
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Minimizes the slow-fading prefetch-plus-demand energy (at unit gain) over
/// the box `[0, γ]` by grid search and coordinate descent.
///
/// The full grid is used when `L <= 5`; larger instances start coordinate
/// descent from the box centre.
pub fn slow_oracle(s: &Scenario, resolution: usize) -> OracleResult {
    let l = s.num_tasks();
    if s.demand_slots() == 0 {
        let argmin = s.sizes().to_vec();
        let total: f64 = argmin.iter().sum();
        let m = s.m() as i32;
        let objective = s.lambda() * total.powi(m) / (s.prefetch_slots() as f64).powi(m - 1);
        return OracleResult {
            argmin,
            objective,
            grid_resolution: 0,
            residual: 0.0,
        };
    }
    let obj = SlowObjective::new(s);
    let mut best: Vec<f64> = s.sizes().iter().map(|g| 0.5 * g).collect();
    let mut points = 0;
    if l <= 5 {
        points = (resolution + 1)
            .min(GRID_BUDGET.powf(1.0 / l as f64).floor() as usize)
            .max(2);
        let mut idx = vec![0usize; l];
        let mut a = vec![0.0; l];
        let mut best_val = f64::INFINITY;
        loop {
            for i in 0..l {
                a[i] = s.sizes()[i] * idx[i] as f64 / (points - 1) as f64;
            }
            let v = obj.eval(&a);
            if v < best_val {
                best_val = v;
                best.copy_from_slice(&a);
            }
            let mut carry = 0;
            while carry < l {
                idx[carry] += 1;
                if idx[carry] < points {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == l {
                break;
            }
        }
    }
    let mut current = obj.eval(&best);
    for _ in 0..MAX_SWEEPS {
        let mut moved = 0.0f64;
        for i in 0..l {
            let old = best[i];
            let mut trial = best.clone();
            let x = golden_section(
                |x| {
                    trial[i] = x;
                    obj.eval(&trial)
                },
                0.0,
                s.sizes()[i],
                GOLDEN_TOL,
            );
            let mut cand = best.clone();
            cand[i] = x;
            let v = obj.eval(&cand);
            if v <= current {
                best = cand;
                current = v;
                moved = moved.max((x - old).abs());
            }
        }
        if moved < 1e-11 {
            break;
        }
    }
    OracleResult {
        residual: obj.residual(&best),
        argmin: best,
        objective: current,
        grid_resolution: points,
    }
}

/// Equal-probability quantization of the gain distribution.
///
/// Each bin is represented by `1/E[1/g | bin]`, which keeps `E[1/g]` (and so
/// the energy of any fixed bit schedule) exact.
pub fn quantize_gains(channel: ChannelModel, bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match channel {
        ChannelModel::Slow { gain } => Ok((vec![gain], vec![1.0])),
        ChannelModel::FastGamma { shape } => {
            if bins == 0 {
                return Err(Error::Domain("need at least one gain bin".into()));
            }
            let k = shape as f64;
            let cdf = |x: f64| regularized_gamma_p(shape, k * x);
            let quantile = |q: f64| {
                let mut hi = 1.0;
                while cdf(hi) < q {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            };
            let edges: Vec<f64> = (1..bins).map(|i| quantile(i as f64 / bins as f64)).collect();
            // E[1/g; g < x] = k/(k-1) P(k-1, kx)
            let partial = |x: f64| k / (k - 1.0) * regularized_gamma_p(shape - 1, k * x);
            let prob = 1.0 / bins as f64;
            let levels = (0..bins)
                .map(|b| {
                    let lo = if b == 0 { 0.0 } else { partial(edges[b - 1]) };
                    let hi = if b + 1 == bins {
                        k / (k - 1.0)
                    } else {
                        partial(edges[b])
                    };
                    prob / (hi - lo)
                })
                .collect();
            Ok((levels, vec![prob; bins]))
        }
    }
}

/// Discretization of [`p5_backward_induction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct P5Grid {
    /// Points per task in the prefetch phase, `2..=41`.
    pub bit_points: usize,
    pub gain_bins: usize,
    /// Demand-phase grid is this many times finer than the prefetch grid.
    pub demand_refine: usize,
    /// Force every prefetch decision to zero.
    pub no_prefetch: bool,
}

impl Default for P5Grid {
    fn default() -> Self {
        Self {
            bit_points: 41,
            gain_bins: 16,
            demand_refine: 8,
            no_prefetch: false,
        }
    }
}

pub const MAX_P5_TASKS: usize = 2;
pub const MAX_P5_BIT_POINTS: usize = 41;
pub const MAX_P5_GAIN_BINS: usize = 64;
pub const MAX_P5_DEMAND_REFINE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P5Solution {
    /// Expected total energy from the initial state.
    pub value: f64,
    pub grid: P5Grid,
    pub gain_levels: Vec<f64>,
    pub gain_probs: Vec<f64>,
    /// `stage_values[n]` is the cost-to-go entering prefetch slot `n + 1`
    /// over the flattened bit grid; the last entry is the demand-phase cost.
    pub stage_values: Vec<Vec<f64>>,
    sizes: Vec<f64>,
    lambda: f64,
    m: i32,
}

impl P5Solution {
    fn index_of(&self, rho_idx: &[usize]) -> usize {
        rho_idx.iter().rev().fold(0, |acc, &i| acc * self.grid.bit_points + i)
    }

    /// Greedy remaining-bit grid index after prefetch slot `slot` (1-based)
    /// from state `rho_idx` when the gain falls in bin `gain_bin`.
    pub fn greedy_next(&self, slot: usize, rho_idx: &[usize], gain_bin: usize) -> Vec<usize> {
        let g = self.gain_levels[gain_bin];
        let next = &self.stage_values[slot];
        let step: Vec<f64> = self
            .sizes
            .iter()
            .map(|s| s / (self.grid.bit_points - 1) as f64)
            .collect();
        let mut best = (f64::INFINITY, rho_idx.to_vec());
        for_each_below(rho_idx, &mut |to: &[usize]| {
            let bits: f64 = (0..to.len()).map(|t| (rho_idx[t] - to[t]) as f64 * step[t]).sum();
            let v = self.lambda * bits.powi(self.m) / g + next[self.index_of(to)];
            if v < best.0 {
                best = (v, to.to_vec());
            }
        });
        best.1
    }
}

fn for_each_below(top: &[usize], f: &mut dyn FnMut(&[usize])) {
    let mut idx = vec![0usize; top.len()];
    loop {
        f(&idx);
        let mut carry = 0;
        while carry < top.len() {
            idx[carry] += 1;
            if idx[carry] <= top[carry] {
                break;
            }
            idx[carry] = 0;
            carry += 1;
        }
        if carry == top.len() {
            return;
        }
    }
}

/// Demand-phase cost-to-go on `points` evenly spaced bit levels in `[0, size]`.
fn demand_grid_values(
    lambda: f64,
    m: i32,
    levels: &[f64],
    probs: &[f64],
    slots: usize,
    size: f64,
    points: usize,
) -> Vec<f64> {
    let h = size / (points - 1) as f64;
    let mut w: Vec<f64> = (0..points).map(|i| if i == 0 { 0.0 } else { f64::INFINITY }).collect();
    for _ in 0..slots {
        let next: Vec<f64> = (0..points)
            .map(|i| {
                levels
                    .iter()
                    .zip(probs)
                    .map(|(&g, &p)| {
                        let best = (0..=i)
                            .map(|j| lambda * ((i - j) as f64 * h).powi(m) / g + w[j])
                            .fold(f64::INFINITY, f64::min);
                        p * best
                    })
                    .sum()
            })
            .collect();
        w = next;
    }
    w
}

/// Backward induction for the causal fetching problem on a tiny instance.
///
/// States are the remaining bits per task on a uniform grid; the gain is
/// quantized into equal-probability bins. The demand phase gets its own,
/// finer one-dimensional grid.
pub fn p5_backward_induction(s: &Scenario, channel: ChannelModel, grid: P5Grid) -> Result<P5Solution> {
    let l = s.num_tasks();
    if l > MAX_P5_TASKS {
        return Err(Error::InstanceTooLarge(format!(
            "backward induction supports L <= {MAX_P5_TASKS} (got {l}); use the non-causal benchmark for larger instances"
        )));
    }
    if !(2..=MAX_P5_BIT_POINTS).contains(&grid.bit_points) {
        return Err(Error::InstanceTooLarge(format!(
            "bit grid must have 2..={MAX_P5_BIT_POINTS} points per task (got {})",
            grid.bit_points
        )));
    }
    if grid.gain_bins == 0 || grid.gain_bins > MAX_P5_GAIN_BINS {
        return Err(Error::InstanceTooLarge(format!(
            "gain quantization must use 1..={MAX_P5_GAIN_BINS} bins (got {})",
            grid.gain_bins
        )));
    }
    if grid.demand_refine == 0 || grid.demand_refine > MAX_P5_DEMAND_REFINE {
        return Err(Error::InstanceTooLarge(format!(
            "demand refinement must be 1..={MAX_P5_DEMAND_REFINE} (got {})",
            grid.demand_refine
        )));
    }
    let (levels, probs) = quantize_gains(channel, grid.gain_bins)?;
    let m = s.m() as i32;
    let lambda = s.lambda();
    let g_pts = grid.bit_points;
    let nd = s.demand_slots();
    let sizes = s.sizes().to_vec();
    let step: Vec<f64> = sizes.iter().map(|v| v / (g_pts - 1) as f64).collect();

    let demand_pts = (g_pts - 1) * grid.demand_refine + 1;
    let demand: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&size| demand_grid_values(lambda, m, &levels, &probs, nd, size, demand_pts))
        .collect();

    let n_states = g_pts.pow(l as u32);
    let unflatten = |mut k: usize| -> Vec<usize> {
        (0..l)
            .map(|_| {
                let i = k % g_pts;
                k /= g_pts;
                i
            })
            .collect()
    };
    let flatten = |idx: &[usize]| idx.iter().rev().fold(0, |acc, &i| acc * g_pts + i);

    let terminal: Vec<f64> = (0..n_states)
        .map(|k| {
            let idx = unflatten(k);
            (0..l)
                .map(|t| {
                    let w = demand[t][idx[t] * grid.demand_refine];
                    if w == 0.0 {
                        0.0
                    } else {
                        s.probs()[t] * w
                    }
                })
                .sum()
        })
        .collect();

    let np = s.prefetch_slots();
    let mut stages = vec![terminal];
    for _ in 0..np {
        let next = stages.last().expect("terminal stage");
        let current: Vec<f64> = (0..n_states)
            .map(|k| {
                let idx = unflatten(k);
                if grid.no_prefetch {
                    return next[k];
                }
                let mut moves: Vec<(f64, f64)> = Vec::new();
                for_each_below(&idx, &mut |to: &[usize]| {
                    let bits: f64 = (0..l).map(|t| (idx[t] - to[t]) as f64 * step[t]).sum();
                    moves.push((lambda * bits.powi(m), next[flatten(to)]));
                });
                levels
                    .iter()
                    .zip(&probs)
                    .map(|(&g, &p)| p * moves.iter().map(|(c, v)| c / g + v).fold(f64::INFINITY, f64::min))
                    .sum()
            })
            .collect();
        stages.push(current);
    }
    stages.reverse();
    let value = stages[0][n_states - 1];
    if !value.is_finite() {
        return Err(Error::Infeasible(
            "no schedule delivers every bit within the latency".into(),
        ));
    }
    Ok(P5Solution {
        value,
        grid,
        gain_levels: levels,
        gain_probs: probs,
        stage_values: stages,
        sizes,
        lambda,
        m,
    })
}

/// Mean energy of the non-causal benchmark over `trials` drawn gain
/// sequences. Each sample is the prefetch energy plus the expected demand
/// energy given the prefetched bits.
pub fn noncausal_benchmark_energy<R: Rng + ?Sized>(
    s: &Scenario,
    tables: &PrefetchTables,
    trials: usize,
    rng: &mut R,
) -> Result<MeanEstimate> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let mut acc = MeanAccumulator::new();
    for _ in 0..trials {
        let trace = run_prefetch_episode(s, tables, PrefetchPolicyKind::NonCausalOracle, rng)?;
        acc.push(trace.conditional_energy());
    }
    Ok(acc.estimate())
}
