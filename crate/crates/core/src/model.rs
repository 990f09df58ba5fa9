//! Offloading scenario, channel models and the monomial energy model.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Tolerance for probability and size normalisation checks.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Absolute tolerance used for every expectation over the gain distribution.
pub const EXPECTATION_TOL: f64 = 1e-10;

/// Monomial order `m` of the energy model, with the fractional powers the
/// recursions need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialOrder(u32);

impl MonomialOrder {
    pub const MIN: u32 = 2;
    pub const MAX: u32 = 5;

    pub fn new(m: u32) -> Result<Self> {
        if !(Self::MIN..=Self::MAX).contains(&m) {
            return Err(Error::InvalidScenario(format!(
                "monomial order must lie in {}..={}, got {m}",
                Self::MIN,
                Self::MAX
            )));
        }
        Ok(Self(m))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// `x^m`
    #[inline]
    pub fn pow(self, x: f64) -> f64 {
        x.powi(self.0 as i32)
    }

    /// `x^(1/(m-1))`
    #[inline]
    pub fn root(self, x: f64) -> f64 {
        match self.0 {
            2 => x,
            3 => x.sqrt(),
            4 => x.cbrt(),
            m => x.powf(1.0 / (m - 1) as f64),
        }
    }

    /// `x^(-(m-1))`
    #[inline]
    pub fn inv_pow(self, x: f64) -> f64 {
        1.0 / x.powi(self.0 as i32 - 1)
    }

    /// `x^(m-1)`
    #[inline]
    pub fn pow_m1(self, x: f64) -> f64 {
        x.powi(self.0 as i32 - 1)
    }

    /// `p^(-1/(m-1))`, the weight a task carries in every threshold rule.
    #[inline]
    pub fn prob_weight(self, p: f64) -> f64 {
        1.0 / self.root(p)
    }
}

/// One offloading instance: the candidate tasks for the next program stage
/// and the slot budget to fetch their data in.
///
/// Task indices are 0-based throughout the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    order: MonomialOrder,
    lambda: f64,
    latency: usize,
    prefetch_slots: usize,
    probs: Vec<f64>,
    sizes: Vec<f64>,
    total_size: f64,
}

impl Scenario {
    pub fn new(m: u32, latency: usize, prefetch_slots: usize, probs: Vec<f64>, sizes: Vec<f64>) -> Result<Self> {
        let order = MonomialOrder::new(m)?;
        if latency == 0 {
            return Err(Error::InvalidScenario("latency N must be at least 1".into()));
        }
        if prefetch_slots == 0 || prefetch_slots > latency {
            return Err(Error::InvalidScenario(format!(
                "prefetch slots must satisfy 1 <= N_P <= N, got N_P = {prefetch_slots}, N = {latency}"
            )));
        }
        if probs.is_empty() {
            return Err(Error::InvalidScenario("at least one candidate task is required".into()));
        }
        if probs.len() != sizes.len() {
            return Err(Error::InvalidScenario(format!(
                "{} probabilities but {} task-data sizes",
                probs.len(),
                sizes.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidScenario(format!("probability {p} is not positive")));
        }
        let psum: f64 = probs.iter().sum();
        if (psum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidScenario(format!("probabilities sum to {psum}, not 1")));
        }
        if let Some(g) = sizes.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidScenario(format!("task-data size {g} is not positive")));
        }
        let total_size = sizes.iter().sum();
        Ok(Self {
            order,
            lambda: 1.0,
            latency,
            prefetch_slots,
            probs,
            sizes,
            total_size,
        })
    }

    /// Replaces the energy coefficient (default 1).
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "energy coefficient {lambda} is not positive"
            )));
        }
        self.lambda = lambda;
        Ok(self)
    }

    /// Uniform probabilities and equal sizes `total / L`.
    pub fn uniform(m: u32, latency: usize, prefetch_slots: usize, tasks: usize, total: f64) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::InvalidScenario("at least one candidate task is required".into()));
        }
        let l = tasks as f64;
        Self::new(m, latency, prefetch_slots, vec![1.0 / l; tasks], vec![total / l; tasks])
    }

    pub fn order(&self) -> MonomialOrder {
        self.order
    }

    pub fn m(&self) -> u32 {
        self.order.get()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Latency budget `N` in slots.
    pub fn latency(&self) -> usize {
        self.latency
    }

    /// Prefetching duration `N_P` in slots.
    pub fn prefetch_slots(&self) -> usize {
        self.prefetch_slots
    }

    /// Demand-fetching duration `N - N_P`.
    pub fn demand_slots(&self) -> usize {
        self.latency - self.prefetch_slots
    }

    pub fn num_tasks(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    /// Sum of all task-data sizes.
    pub fn total_size(&self) -> f64 {
        self.total_size
    }

    pub fn prob_weight(&self, task: usize) -> f64 {
        self.order.prob_weight(self.probs[task])
    }

    /// Draws the realised task from the transition probabilities given a
    /// uniform variate in `[0, 1)`.
    pub fn task_from_uniform(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Fading model of the uplink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelModel {
    /// Constant gain over the whole fetching duration.
    Slow { gain: f64 },
    /// i.i.d. per-slot Gamma gains with integer shape `k`, rate `k` (unit mean).
    FastGamma { shape: u32 },
}

impl ChannelModel {
    pub fn slow(gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::Domain(format!("slow-fading gain {gain} is not positive")));
        }
        Ok(Self::Slow { gain })
    }

    pub fn fast_gamma(shape: u32) -> Result<Self> {
        if shape < 2 {
            return Err(Error::Domain(format!(
                "Gamma shape must be an integer >= 2, got {shape}"
            )));
        }
        Ok(Self::FastGamma { shape })
    }

    pub fn is_slow(&self) -> bool {
        matches!(self, Self::Slow { .. })
    }

    /// `E[g]`
    pub fn mean_gain(&self) -> f64 {
        match *self {
            Self::Slow { gain } => gain,
            Self::FastGamma { .. } => 1.0,
        }
    }

    /// `E[1/g]`, equal to `k/(k-1)` for the Gamma model.
    pub fn mean_inverse_gain(&self) -> f64 {
        match *self {
            Self::Slow { gain } => 1.0 / gain,
            Self::FastGamma { shape } => shape as f64 / (shape as f64 - 1.0),
        }
    }

    /// Gamma density `x^(k-1) e^(-kx) k^k / (k-1)!`; `None` for the slow model.
    pub fn density(&self, x: f64) -> Option<f64> {
        match *self {
            Self::Slow { .. } => None,
            Self::FastGamma { shape } => Some(gamma_density(shape, x)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Slow { gain } => gain,
            Self::FastGamma { shape } => {
                let k = shape as f64;
                Gamma::new(k, 1.0 / k).expect("valid shape").sample(rng)
            }
        }
    }

    /// `E_g[f(g)]`; exact for the slow model, adaptive quadrature otherwise.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        match *self {
            Self::Slow { gain } => Ok(f(gain)),
            Self::FastGamma { shape } => quadrature::integrate_half_line(
                |x| {
                    let d = gamma_density(shape, x);
                    if d == 0.0 {
                        0.0
                    } else {
                        f(x) * d
                    }
                },
                EXPECTATION_TOL,
            ),
        }
    }
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn gamma_density(shape: u32, x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return 0.0;
    }
    let k = shape as f64;
    (k * k.ln() + (k - 1.0) * x.ln() - k * x - ln_factorial(shape - 1)).exp()
}

/// Lower regularized incomplete gamma `P(n, x)` for integer `n >= 1`.
pub(crate) fn regularized_gamma_p(n: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x > (n as f64) + 1.0 {
        // upper tail via the finite Poisson sum
        let mut term = 1.0;
        let mut sum = 1.0;
        for i in 1..n {
            term *= x / i as f64;
            sum += term;
        }
        1.0 - ((-x).exp() * sum)
    } else {
        // lower series: e^-x sum_{i>=n} x^i / i!
        let mut term = (n as f64 * x.ln() - x - ln_factorial(n)).exp();
        let mut sum = term;
        let mut i = n as f64;
        loop {
            i += 1.0;
            term *= x / i;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum.min(1.0)
    }
}

/// Energy `λ b^m / g` to send `bits` in one slot with gain `gain`.
pub fn transmit_energy(bits: f64, gain: f64, scenario: &Scenario) -> Result<f64> {
    if !(bits.is_finite() && bits >= 0.0) {
        return Err(Error::Domain(format!(
            "bit count {bits} must be finite and nonnegative"
        )));
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::Domain(format!("channel gain {gain} must be positive")));
    }
    Ok(slot_energy(scenario.lambda, scenario.order, bits, gain))
}

#[inline]
pub(crate) fn slot_energy(lambda: f64, order: MonomialOrder, bits: f64, gain: f64) -> f64 {
    if bits == 0.0 {
        0.0
    } else {
        lambda * order.pow(bits) / gain
    }
}

/// Decibels `10 log10(E)`.
pub fn to_db(energy: f64) -> Result<f64> {
    if energy.is_nan() || energy <= 0.0 {
        return Err(Error::Domain(format!("cannot express {energy} in dB")));
    }
    Ok(10.0 * energy.log10())
}

/// Split of every task's data into prefetched and demand-fetched parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchSplit {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FetchSplit {
    pub fn from_alpha(scenario: &Scenario, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != scenario.num_tasks() {
            return Err(Error::Domain("prefetch vector length differs from task count".into()));
        }
        let mut beta = Vec::with_capacity(alpha.len());
        for (a, g) in alpha.iter().zip(scenario.sizes()) {
            if !(*a >= 0.0 && *a <= *g + NORMALIZATION_TOL) {
                return Err(Error::Domain(format!("prefetched bits {a} outside [0, {g}]")));
            }
            beta.push((g - a).max(0.0));
        }
        Ok(Self { alpha, beta })
    }
}
