use super::sweep::{gain_vs_shape, run_sweep, ChannelKind, PolicyTag, SweepConfig, SweepParam, SweepRow};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct FigureSpec {
    pub name: &'static str,
    pub config: SweepConfig,
}

impl FigureSpec {
    pub fn run(&self) -> Result<Vec<SweepRow>> {
        if self.config.param == SweepParam::Shape {
            gain_vs_shape(&self.config)
        } else {
            run_sweep(&self.config)
        }
    }
}

const PANELS: [(SweepParam, &[f64]); 4] = [
    (SweepParam::Gamma, &[5.0, 10.0, 20.0, 40.0, 80.0]),
    (SweepParam::Tasks, &[2.0, 3.0, 4.0, 5.0, 6.0, 8.0]),
    (SweepParam::Latency, &[5.0, 6.0, 7.0, 8.0, 10.0]),
    (SweepParam::PrefetchSlots, &[1.0, 2.0, 4.0, 6.0, 8.0, 9.0]),
];

/// Four slow-fading panels, the same four sweeps over fast fading, and the
/// Gamma-shape sweep, built on `base`. Names are `<channel>-<parameter>`.
///
/// Every panel fixes `Γ = 20`, `N = 5`, `N_P = 4`, `L = 4` except for the
/// swept value; the `N_P` panels use `N = 10`.
pub fn figure_specs(base: &SweepConfig) -> Vec<FigureSpec> {
    let names = [
        ["slow-gamma", "slow-tasks", "slow-latency", "slow-prefetch"],
        ["fast-gamma", "fast-tasks", "fast-latency", "fast-prefetch"],
    ];
    let mut specs = Vec::new();
    for (row, channel) in [ChannelKind::Slow, ChannelKind::Fast].into_iter().enumerate() {
        let policies = match channel {
            ChannelKind::Slow => vec![PolicyTag::SlowOpt, PolicyTag::NoPrefetch],
            ChannelKind::Fast => vec![
                PolicyTag::NoPrefetch,
                PolicyTag::Aggressive,
                PolicyTag::Conservative,
                PolicyTag::NonCausal,
            ],
        };
        for (col, (param, values)) in PANELS.iter().enumerate() {
            let latency = if *param == SweepParam::PrefetchSlots { 10 } else { 5 };
            specs.push(FigureSpec {
                name: names[row][col],
                config: SweepConfig {
                    param: *param,
                    values: values.to_vec(),
                    policies: policies.clone(),
                    channel,
                    total_size: 20.0,
                    tasks: 4,
                    latency,
                    prefetch_slots: 4,
                    ..base.clone()
                },
            });
        }
    }
    specs.push(FigureSpec {
        name: "fast-shape",
        config: SweepConfig {
            param: SweepParam::Shape,
            values: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            policies: vec![PolicyTag::Aggressive, PolicyTag::Conservative, PolicyTag::NonCausal],
            channel: ChannelKind::Fast,
            total_size: 20.0,
            tasks: 4,
            latency: 5,
            prefetch_slots: 4,
            ..base.clone()
        },
    });
    specs
}
