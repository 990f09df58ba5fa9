//! Live prefetching for mobile computation offloading.
//!
//! While the current task runs in the edge cloud, the mobile uploads part
//! of the input data of each likely next task (prefetching); once the next
//! task is known, the rest is sent under the remaining latency budget
//! (demand-fetching). Transmitting `b` bits in a slot with channel gain `g`
//! costs `λ b^m / g`. This crate computes energy-optimal and near-optimal
//! schedules for slow fading (one gain for the whole duration) and for
//! i.i.d. Gamma fast fading, plus brute-force oracles and a sweep harness.
//!
//! ```
//! use livefetch::harness::episode_rng;
//! use livefetch::{optimal_prefetch_slow, prefetch_gain_slow, run_prefetch_episode};
//! use livefetch::{ChannelModel, PrefetchPolicyKind, PrefetchTables, Scenario};
//!
//! let s = Scenario::new(2, 5, 4, vec![0.4, 0.3, 0.2, 0.1], vec![5.0, 5.0, 5.0, 5.0])?;
//! let plan = optimal_prefetch_slow(&s);
//! assert!(prefetch_gain_slow(&s, 1.0)? > 1.0);
//! assert!(plan.alpha_sigma > 0.0);
//!
//! let tables = PrefetchTables::build(&s, ChannelModel::fast_gamma(2)?)?;
//! let mut rng = episode_rng(1, 0);
//! let trace = run_prefetch_episode(&s, &tables, PrefetchPolicyKind::Conservative, &mut rng)?;
//! assert_eq!(trace.thresholds.len(), 4);
//! # Ok::<(), livefetch::Error>(())
//! ```

pub mod demand;
pub mod error;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod prefetch;
pub mod quadrature;
pub mod slow;
pub mod stats;

pub use demand::{
    demand_bits, demand_energy_bounds, expected_demand_energy, simulate_demand_episode, DemandTrace, XiTable,
};
pub use error::{Error, Result};
pub use model::{to_db, transmit_energy, ChannelModel, FetchSplit, MonomialOrder, Scenario};
pub use prefetch::{
    alpha_from_final_threshold, approximate_task_set, build_zeta_table, decision_vector, estimate_threshold,
    expected_total_energy_fast, noncausal_final_threshold, run_prefetch_episode, run_prefetch_episode_with,
    threshold_eta, Benchmark, EpisodeState, EpisodeTrace, Estimator, OracleSearch, PrefetchPolicyKind, PrefetchTables,
    ZetaTable,
};
pub use slow::{
    expected_fetch_energy_slow, gain_lower_bound, optimal_prefetch_slow, prefetch_gain_slow, priority,
    slot_allocation_slow, total_prefetched_bits, PrefetchPlan,
};
