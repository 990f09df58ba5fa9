use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{episode_rng, generate_scenario, scenario_rng};
use crate::demand::XiTable;
use crate::error::{Error, Result};
use crate::model::{to_db, ChannelModel, Scenario};
use crate::prefetch::{draw_episode_inputs, run_prefetch_episode_with, PrefetchPolicyKind, PrefetchTables};
use crate::slow::{expected_fetch_energy_slow, no_prefetch_energy_slow, optimal_prefetch_slow};
use crate::stats::{MeanAccumulator, MeanEstimate, NeumaierSum};

/// Swept scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    /// Total task-data size `Γ`.
    Gamma,
    /// Number of candidate tasks.
    Tasks,
    /// Latency in slots.
    Latency,
    /// Prefetching slots.
    PrefetchSlots,
    /// Gamma shape of the fast-fading gain.
    Shape,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::Tasks => "L",
            Self::Latency => "N",
            Self::PrefetchSlots => "Np",
            Self::Shape => "k",
        }
    }

    fn is_integer(self) -> bool {
        self != Self::Gamma
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" | "Gamma" => Ok(Self::Gamma),
            "L" | "l" => Ok(Self::Tasks),
            "N" | "n" => Ok(Self::Latency),
            "Np" | "np" | "NP" => Ok(Self::PrefetchSlots),
            "k" | "K" => Ok(Self::Shape),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter `{s}` (expected gamma, L, N, Np or k)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyTag {
    SlowOpt,
    NoPrefetch,
    Aggressive,
    Conservative,
    NonCausal,
}

impl PolicyTag {
    pub const ALL: [PolicyTag; 5] = [
        PolicyTag::SlowOpt,
        PolicyTag::NoPrefetch,
        PolicyTag::Aggressive,
        PolicyTag::Conservative,
        PolicyTag::NonCausal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SlowOpt => "slow-opt",
            Self::NoPrefetch => "no-prefetch",
            Self::Aggressive => "aggressive",
            Self::Conservative => "conservative",
            Self::NonCausal => "noncausal",
        }
    }

    fn episode_kind(self) -> Option<PrefetchPolicyKind> {
        match self {
            Self::Aggressive => Some(PrefetchPolicyKind::Aggressive),
            Self::Conservative => Some(PrefetchPolicyKind::Conservative),
            Self::NonCausal => Some(PrefetchPolicyKind::NonCausalOracle),
            Self::SlowOpt | Self::NoPrefetch => None,
        }
    }
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    Slow,
    Fast,
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow" => Ok(Self::Slow),
            "fast" => Ok(Self::Fast),
            _ => Err(Error::Config(format!("unknown channel `{s}` (expected slow or fast)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub policies: Vec<PolicyTag>,
    pub channel: ChannelKind,
    pub m: u32,
    /// Gamma shape for fast fading.
    pub k: u32,
    pub slow_gain: f64,
    pub lambda: f64,
    pub total_size: f64,
    pub tasks: usize,
    pub latency: usize,
    pub prefetch_slots: usize,
    /// Episodes per scenario (fast fading only).
    pub trials: usize,
    /// Random scenarios per sweep point.
    pub scenarios: usize,
    pub seed: u64,
    /// Use equal probabilities and sizes instead of random scenarios.
    pub uniform: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            param: SweepParam::Gamma,
            values: vec![20.0],
            policies: vec![PolicyTag::SlowOpt, PolicyTag::NoPrefetch],
            channel: ChannelKind::Slow,
            m: 2,
            k: 2,
            slow_gain: 1.0,
            lambda: 1.0,
            total_size: 20.0,
            tasks: 4,
            latency: 5,
            prefetch_slots: 4,
            trials: 10_000,
            scenarios: 100,
            seed: 1,
            uniform: false,
        }
    }
}

fn parse_list<T: FromStr>(value: &str, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Config(format!("bad {what} `{v}`"))))
        .collect()
}

fn parse_one<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

/// Concrete parameters of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    total_size: f64,
    tasks: usize,
    latency: usize,
    prefetch_slots: usize,
    k: u32,
}

impl SweepConfig {
    /// Sets a field from its key in a config file or command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "param" => self.param = value.trim().parse()?,
            "values" => self.values = parse_list(value, "sweep value")?,
            "policies" => {
                self.policies = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "channel" => self.channel = value.trim().parse()?,
            "m" => self.m = parse_one(value, key)?,
            "k" => self.k = parse_one(value, key)?,
            "slow-g" => self.slow_gain = parse_one(value, key)?,
            "lambda" => self.lambda = parse_one(value, key)?,
            "gamma" => self.total_size = parse_one(value, key)?,
            "L" => self.tasks = parse_one(value, key)?,
            "N" => self.latency = parse_one(value, key)?,
            "Np" => self.prefetch_slots = parse_one(value, key)?,
            "trials" => self.trials = parse_one(value, key)?,
            "scenarios" => self.scenarios = parse_one(value, key)?,
            "seed" => self.seed = parse_one(value, key)?,
            "uniform" => self.uniform = parse_one(value, key)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn point(&self, value: f64) -> Point {
        let mut p = Point {
            total_size: self.total_size,
            tasks: self.tasks,
            latency: self.latency,
            prefetch_slots: self.prefetch_slots,
            k: self.k,
        };
        match self.param {
            SweepParam::Gamma => p.total_size = value,
            SweepParam::Tasks => p.tasks = value as usize,
            SweepParam::Latency => p.latency = value as usize,
            SweepParam::PrefetchSlots => p.prefetch_slots = value as usize,
            SweepParam::Shape => p.k = value as u32,
        }
        p
    }

    fn channel_at(&self, point: &Point) -> Result<ChannelModel> {
        match self.channel {
            ChannelKind::Slow => ChannelModel::slow(self.slow_gain),
            ChannelKind::Fast => ChannelModel::fast_gamma(point.k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.values.is_empty() {
            return cfg("no sweep values".into());
        }
        if self.policies.is_empty() {
            return cfg("no policies selected".into());
        }
        if self.trials == 0 || self.scenarios == 0 {
            return cfg("trials and scenarios must be at least 1".into());
        }
        if self.channel == ChannelKind::Fast && self.policies.contains(&PolicyTag::SlowOpt) {
            return cfg("slow-opt needs the slow channel".into());
        }
        if self.param == SweepParam::Shape && self.channel == ChannelKind::Slow {
            return cfg("a k sweep needs the fast channel".into());
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return cfg(format!("lambda {} is not positive", self.lambda));
        }
        for &v in &self.values {
            if !(v.is_finite() && v > 0.0) || (self.param.is_integer() && v.fract() != 0.0) {
                return cfg(format!("invalid {} value {v}", self.param));
            }
            let p = self.point(v);
            if p.latency <= p.prefetch_slots {
                return cfg(format!(
                    "need N > N_P for the prefetching gain, got N = {}, N_P = {}",
                    p.latency, p.prefetch_slots
                ));
            }
            if p.total_size <= 0.0 || p.tasks == 0 {
                return cfg(format!("invalid point {p:?}"));
            }
            self.channel_at(&p).map_err(|e| Error::Config(e.to_string()))?;
            Scenario::uniform(self.m, p.latency, p.prefetch_slots, p.tasks, p.total_size)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn scenario(&self, point: &Point, index: u64) -> Result<Scenario> {
        let s = if self.uniform {
            Scenario::uniform(
                self.m,
                point.latency,
                point.prefetch_slots,
                point.tasks,
                point.total_size,
            )?
        } else {
            let mut rng = scenario_rng(self.seed, index);
            generate_scenario(
                &mut rng,
                point.tasks,
                point.total_size,
                self.m,
                point.latency,
                point.prefetch_slots,
            )?
        };
        s.with_lambda(self.lambda)
    }
}

/// One output line: a policy's statistics at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub param_value: f64,
    pub policy: PolicyTag,
    pub mean_energy: f64,
    pub mean_energy_db: f64,
    pub stderr: f64,
    pub gain: f64,
    pub gain_db: f64,
    pub trials: u64,
}

/// Per-scenario results at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEstimates {
    pub scenario: Scenario,
    /// Exact expected energy without prefetching.
    pub no_prefetch: f64,
    /// One estimate per policy in configuration order.
    pub policies: Vec<MeanEstimate>,
}

fn no_prefetch_energy(s: &Scenario, channel: ChannelModel) -> Result<f64> {
    match channel {
        ChannelModel::Slow { gain } => no_prefetch_energy_slow(s, gain),
        ChannelModel::FastGamma { .. } => {
            // the task is only known after the prefetch slots
            let nd = s.demand_slots();
            let xi = XiTable::build(channel, s.order(), nd)?;
            let order = s.order();
            let sum: NeumaierSum = s
                .probs()
                .iter()
                .zip(s.sizes())
                .map(|(p, g)| p * order.pow(*g))
                .collect();
            Ok(s.lambda() * xi.get(nd) * sum.value())
        }
    }
}

fn exact(value: f64) -> MeanEstimate {
    MeanEstimate {
        mean: value,
        stderr: 0.0,
        count: 1,
    }
}

fn evaluate_scenario(
    s: &Scenario,
    channel: ChannelModel,
    policies: &[PolicyTag],
    trials: usize,
    seed: u64,
    index: u64,
) -> Result<ScenarioEstimates> {
    let no_prefetch = no_prefetch_energy(s, channel)?;
    let needs_tables = policies.iter().any(|p| p.episode_kind().is_some());
    let tables = if needs_tables {
        Some(PrefetchTables::build(s, channel)?)
    } else {
        None
    };
    let mut out: Vec<Option<MeanEstimate>> = vec![None; policies.len()];
    for (i, p) in policies.iter().enumerate() {
        match p {
            PolicyTag::NoPrefetch => out[i] = Some(exact(no_prefetch)),
            PolicyTag::SlowOpt => {
                let gain = match channel {
                    ChannelModel::Slow { gain } => gain,
                    ChannelModel::FastGamma { .. } => {
                        return Err(Error::Config("slow-opt needs the slow channel".into()))
                    }
                };
                let plan = optimal_prefetch_slow(s);
                out[i] = Some(exact(expected_fetch_energy_slow(s, gain, &plan)?));
            }
            _ => {}
        }
    }
    let episodic: Vec<(usize, PrefetchPolicyKind)> = policies
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.episode_kind().map(|k| (i, k)))
        .collect();
    if let Some(tables) = &tables {
        if channel.is_slow() {
            // constant gains: one episode gives the expectation
            let gains = vec![channel.mean_gain(); s.latency()];
            for &(i, kind) in &episodic {
                let tr = run_prefetch_episode_with(s, tables, kind, &gains, 0)?;
                out[i] = Some(exact(tr.conditional_energy()));
            }
        } else {
            let mut accs = vec![MeanAccumulator::new(); episodic.len()];
            let mut rng = episode_rng(seed, index);
            for _ in 0..trials {
                let (gains, realized) = draw_episode_inputs(s, channel, &mut rng);
                for (acc, &(_, kind)) in accs.iter_mut().zip(&episodic) {
                    let tr = run_prefetch_episode_with(s, tables, kind, &gains, realized)?;
                    acc.push(tr.conditional_energy());
                }
            }
            for (acc, &(i, _)) in accs.iter().zip(&episodic) {
                out[i] = Some(acc.estimate());
            }
        }
    }
    Ok(ScenarioEstimates {
        scenario: s.clone(),
        no_prefetch,
        policies: out.into_iter().map(|e| e.expect("every policy evaluated")).collect(),
    })
}

fn point_estimates_with(cfg: &SweepConfig, value: f64, channel_kind: ChannelKind) -> Result<Vec<ScenarioEstimates>> {
    let point = cfg.point(value);
    let channel = match channel_kind {
        ChannelKind::Slow => ChannelModel::slow(cfg.slow_gain)?,
        ChannelKind::Fast => ChannelModel::fast_gamma(point.k)?,
    };
    let count = if cfg.uniform { 1 } else { cfg.scenarios };
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = cfg.scenario(&point, i)?;
            evaluate_scenario(&s, channel, &cfg.policies, cfg.trials, cfg.seed, i)
        })
        .collect()
}

/// Per-scenario estimates at one sweep value, in scenario order. Every
/// policy sees the same scenarios and the same gain and task draws.
pub fn sweep_point_estimates(cfg: &SweepConfig, value: f64) -> Result<Vec<ScenarioEstimates>> {
    cfg.validate()?;
    point_estimates_with(cfg, value, cfg.channel)
}

fn aggregate(cfg: &SweepConfig, value: f64, estimates: &[ScenarioEstimates]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(cfg.policies.len());
    for (i, &policy) in cfg.policies.iter().enumerate() {
        let means: MeanAccumulator = estimates.iter().map(|e| e.policies[i].mean).collect();
        let gains: NeumaierSum = estimates.iter().map(|e| e.no_prefetch / e.policies[i].mean).collect();
        let gain = gains.value() / estimates.len() as f64;
        let stderr = if estimates.len() > 1 {
            means.stderr()
        } else {
            estimates[0].policies[i].stderr
        };
        let trials = estimates.iter().map(|e| e.policies[i].count).sum();
        let mean = means.mean();
        rows.push(SweepRow {
            param: cfg.param,
            param_value: value,
            policy,
            mean_energy: mean,
            mean_energy_db: to_db(mean)?,
            stderr,
            gain,
            gain_db: to_db(gain)?,
            trials,
        });
    }
    Ok(rows)
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.param_value.total_cmp(&b.param_value).then(a.policy.cmp(&b.policy)));
}

/// Runs every policy at every sweep value. Rows are sorted by value, then policy.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &v in &cfg.values {
        let est = point_estimates_with(cfg, v, cfg.channel)?;
        rows.extend(aggregate(cfg, v, &est)?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Fast-fading rows over a sweep of the Gamma shape `k`, plus a `slow-opt`
/// row at every `k` holding the slow-fading reference on the same scenarios.
pub fn gain_vs_shape(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.param != SweepParam::Shape {
        return Err(Error::Config("gain_vs_shape needs a k sweep".into()));
    }
    if cfg.values.iter().any(|&k| k < 2.0) {
        return Err(Error::Config("k values must be integers >= 2".into()));
    }
    let mut rows = run_sweep(cfg)?;
    let reference = SweepConfig {
        channel: ChannelKind::Slow,
        policies: vec![PolicyTag::SlowOpt],
        ..cfg.clone()
    };
    let first = cfg.values[0];
    let est = point_estimates_with(&reference, first, ChannelKind::Slow)?;
    let slow = aggregate(&reference, first, &est)?.remove(0);
    for &k in &cfg.values {
        rows.push(SweepRow {
            param_value: k,
            ..slow.clone()
        });
    }
    sort_rows(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slow::gain_lower_bound;

    fn slow_cfg() -> SweepConfig {
        SweepConfig {
            scenarios: 20,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn tags_round_trip() {
        for p in PolicyTag::ALL {
            assert_eq!(p.as_str().parse::<PolicyTag>().unwrap(), p);
        }
        for p in [
            SweepParam::Gamma,
            SweepParam::Tasks,
            SweepParam::Latency,
            SweepParam::PrefetchSlots,
            SweepParam::Shape,
        ] {
            assert_eq!(p.as_str().parse::<SweepParam>().unwrap(), p);
        }
        assert!("fastest".parse::<PolicyTag>().is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = slow_cfg();
        c.set("param", "Np").unwrap();
        c.set("values", "2,5").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = slow_cfg();
        c.set("param", "L").unwrap();
        c.set("values", "2.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = slow_cfg();
        c.set("channel", "fast").unwrap();
        assert!(c.validate().is_err());
        let mut c = slow_cfg();
        c.trials = 0;
        assert!(c.validate().is_err());
        assert!(slow_cfg().set("colour", "red").is_err());
        assert!(slow_cfg().set("m", "two").is_err());
    }

    #[test]
    fn uniform_slow_gain_equals_bound() {
        let mut c = slow_cfg();
        c.uniform = true;
        c.param = SweepParam::Tasks;
        c.values = vec![1.0, 2.0, 3.0, 6.0];
        let rows = run_sweep(&c).unwrap();
        for r in rows.iter().filter(|r| r.policy == PolicyTag::SlowOpt) {
            let s = Scenario::uniform(2, 5, 4, r.param_value as usize, 20.0).unwrap();
            assert!((r.gain - gain_lower_bound(&s).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_sorted_and_db_consistent() {
        let mut c = slow_cfg();
        c.values = vec![40.0, 5.0, 10.0];
        let rows = run_sweep(&c).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.windows(2).all(|w| w[0].param_value <= w[1].param_value));
        assert_eq!(rows[0].policy, PolicyTag::SlowOpt);
        for r in &rows {
            assert!((r.mean_energy_db - 10.0 * r.mean_energy.log10()).abs() < 1e-12);
            assert!((r.gain_db - 10.0 * r.gain.log10()).abs() < 1e-12);
        }
        let np = rows.iter().find(|r| r.policy == PolicyTag::NoPrefetch).unwrap();
        assert_eq!(np.gain, 1.0);
    }

    #[test]
    fn fast_sweep_is_deterministic() {
        let c = SweepConfig {
            channel: ChannelKind::Fast,
            policies: vec![PolicyTag::NoPrefetch, PolicyTag::Conservative, PolicyTag::NonCausal],
            trials: 50,
            scenarios: 4,
            ..SweepConfig::default()
        };
        let a = run_sweep(&c).unwrap();
        let b = run_sweep(&c).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.gain >= 1.0));
    }

    #[test]
    fn shape_sweep_adds_reference_rows() {
        let c = SweepConfig {
            param: SweepParam::Shape,
            values: vec![2.0, 8.0],
            channel: ChannelKind::Fast,
            policies: vec![PolicyTag::NonCausal],
            trials: 20,
            scenarios: 3,
            ..SweepConfig::default()
        };
        let rows = gain_vs_shape(&c).unwrap();
        assert_eq!(rows.len(), 4);
        let slow: Vec<_> = rows.iter().filter(|r| r.policy == PolicyTag::SlowOpt).collect();
        assert_eq!(slow.len(), 2);
        assert_eq!(slow[0].gain, slow[1].gain);
    }
}
