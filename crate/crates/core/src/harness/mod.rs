//! Scenario generation, Monte-Carlo sweeps and CSV output.

pub mod config;
pub mod figures;
pub mod output;
pub mod scenario;
pub mod sweep;

pub use config::{parse_key_values, read_key_values};
pub use figures::{figure_specs, FigureSpec};
pub use output::{emit_csv, read_csv, write_csv, CSV_HEADER};
pub use scenario::{episode_rng, generate_scenario, scenario_rng};
pub use sweep::{
    gain_vs_shape, run_sweep, sweep_point_estimates, ChannelKind, PolicyTag, ScenarioEstimates, SweepConfig,
    SweepParam, SweepRow,
};
