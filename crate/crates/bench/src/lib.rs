//! Shared fixtures for the benchmarks.

use livefetch::harness::{generate_scenario, scenario_rng};
use livefetch::{ChannelModel, PrefetchTables, Scenario};

/// Random scenario with total size 20 and the given shape.
pub fn fixture(tasks: usize, latency: usize, prefetch_slots: usize) -> Scenario {
    let mut rng = scenario_rng(1, 0);
    generate_scenario(&mut rng, tasks, 20.0, 2, latency, prefetch_slots).expect("valid fixture")
}

/// Fast-fading tables for [`fixture`] under Gamma shape `k`.
pub fn fast_tables(scenario: &Scenario, k: u32) -> PrefetchTables {
    let channel = ChannelModel::fast_gamma(k).expect("valid shape");
    PrefetchTables::build(scenario, channel).expect("tables build")
}
