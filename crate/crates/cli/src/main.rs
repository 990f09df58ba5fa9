use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use livefetch::harness::{self, emit_csv, figure_specs, read_key_values, write_csv, SweepConfig};
use livefetch::prefetch::draw_episode_inputs;
use livefetch::{
    optimal_prefetch_slow, run_prefetch_episode_with, ChannelModel, Error, PrefetchPolicyKind, PrefetchTables, Scenario,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "livefetch", version, about = "Energy-efficient live prefetching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one parameter and write a CSV of mean energies and gains.
    Sweep(SweepArgs),
    /// Solve one scenario and print the plan or an episode trace as JSON.
    Single(SingleArgs),
    /// Write every figure panel as a CSV into a directory.
    Figures(FigureArgs),
}

#[derive(Args, Default)]
struct Overrides {
    /// Flat key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long = "slow-g")]
    slow_g: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// gamma, L, N, Np or k
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated sweep values
    #[arg(long)]
    values: Option<String>,
    /// Comma-separated subset of slow-opt,no-prefetch,aggressive,conservative,noncausal
    #[arg(long)]
    policies: Option<String>,
    /// slow or fast
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Energy coefficient of the transmit-energy model
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "L")]
    tasks: Option<usize>,
    #[arg(long = "N")]
    latency: Option<usize>,
    #[arg(long = "Np")]
    prefetch_slots: Option<usize>,
    /// Equal probabilities and sizes instead of random scenarios
    #[arg(long)]
    uniform: bool,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args)]
struct SingleArgs {
    #[arg(long, default_value = "slow")]
    channel: String,
    /// aggressive, conservative, noncausal or no-prefetch (fast channel)
    #[arg(long, default_value = "conservative")]
    policy: String,
    #[arg(long, default_value_t = 20.0)]
    gamma: f64,
    #[arg(long = "L", default_value_t = 4)]
    tasks: usize,
    #[arg(long = "N", default_value_t = 5)]
    latency: usize,
    #[arg(long = "Np", default_value_t = 4)]
    prefetch_slots: usize,
    #[arg(long, default_value_t = 2)]
    m: u32,
    #[arg(long, default_value_t = 2)]
    k: u32,
    #[arg(long = "slow-g", default_value_t = 1.0)]
    slow_g: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Explicit transition probabilities (overrides the random draw)
    #[arg(long, value_delimiter = ',')]
    probs: Option<Vec<f64>>,
    /// Explicit task-data sizes (overrides the random draw)
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<f64>>,
}

#[derive(Args)]
struct FigureArgs {
    #[arg(long = "out-dir", default_value = "figures")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: Overrides,
}

fn apply_overrides(cfg: &mut SweepConfig, o: &Overrides) -> Result<(), Error> {
    if let Some(path) = &o.config {
        for (k, v) in read_key_values(path)? {
            if k != "out" {
                cfg.set(&k, &v)?;
            }
        }
    }
    let pairs = [
        ("trials", o.trials.map(|v| v.to_string())),
        ("scenarios", o.scenarios.map(|v| v.to_string())),
        ("seed", o.seed.map(|v| v.to_string())),
        ("m", o.m.map(|v| v.to_string())),
        ("k", o.k.map(|v| v.to_string())),
        ("slow-g", o.slow_g.map(|v| v.to_string())),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok(())
}

fn config_out(path: &Option<PathBuf>) -> Result<Option<PathBuf>, Error> {
    let Some(path) = path else { return Ok(None) };
    Ok(read_key_values(path)?
        .into_iter()
        .rev()
        .find(|(k, _)| k == "out")
        .map(|(_, v)| PathBuf::from(v)))
}

fn sweep(args: SweepArgs) -> Result<(), Error> {
    let mut cfg = SweepConfig::default();
    apply_overrides(&mut cfg, &args.common)?;
    let pairs = [
        ("param", args.param.clone()),
        ("values", args.values.clone()),
        ("policies", args.policies.clone()),
        ("channel", args.channel.clone()),
        ("gamma", args.gamma.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("L", args.tasks.map(|v| v.to_string())),
        ("N", args.latency.map(|v| v.to_string())),
        ("Np", args.prefetch_slots.map(|v| v.to_string())),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if args.uniform {
        cfg.uniform = true;
    }
    let rows = if cfg.param == harness::SweepParam::Shape {
        harness::gain_vs_shape(&cfg)?
    } else {
        harness::run_sweep(&cfg)?
    };
    match args.out.or(config_out(&args.common.config)?) {
        Some(path) => emit_csv(&rows, &path),
        None => write_csv(&rows, std::io::stdout().lock()).map_err(|source| Error::Csv {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn single(args: SingleArgs) -> Result<(), Error> {
    let mut rng = harness::scenario_rng(args.seed, 0);
    let scenario = match (args.probs, args.sizes) {
        (Some(p), Some(g)) => Scenario::new(args.m, args.latency, args.prefetch_slots, p, g)?,
        (None, None) => harness::generate_scenario(
            &mut rng,
            args.tasks,
            args.gamma,
            args.m,
            args.latency,
            args.prefetch_slots,
        )?,
        _ => return Err(Error::Config("--probs and --sizes must be given together".into())),
    };
    let report = match args.channel.as_str() {
        "slow" => {
            let channel = ChannelModel::slow(args.slow_g)?;
            let plan = optimal_prefetch_slow(&scenario);
            let energy = livefetch::expected_fetch_energy_slow(&scenario, args.slow_g, &plan)?;
            let gain = if scenario.demand_slots() > 0 {
                Some(livefetch::prefetch_gain_slow(&scenario, args.slow_g)?)
            } else {
                None
            };
            json!({ "scenario": scenario, "channel": channel, "plan": plan, "expected_energy": energy, "gain": gain })
        }
        "fast" => {
            let channel = ChannelModel::fast_gamma(args.k)?;
            let kind = match args.policy.as_str() {
                "aggressive" => PrefetchPolicyKind::Aggressive,
                "conservative" => PrefetchPolicyKind::Conservative,
                "noncausal" => PrefetchPolicyKind::NonCausalOracle,
                "no-prefetch" => PrefetchPolicyKind::NoPrefetch,
                other => return Err(Error::Config(format!("unknown policy `{other}`"))),
            };
            let tables = PrefetchTables::build(&scenario, channel)?;
            let mut ep = harness::episode_rng(args.seed, 0);
            let (gains, realized) = draw_episode_inputs(&scenario, channel, &mut ep);
            let trace = run_prefetch_episode_with(&scenario, &tables, kind, &gains, realized)?;
            json!({
                "scenario": scenario,
                "channel": channel,
                "trace": trace,
                "total_energy": trace.total_energy(),
                "conditional_energy": trace.conditional_energy(),
            })
        }
        other => return Err(Error::Config(format!("unknown channel `{other}`"))),
    };
    let mut out = std::io::stdout().lock();
    let stdout_err = |source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| stdout_err(e.into()))?;
    writeln!(out).map_err(stdout_err)
}

fn figures(args: FigureArgs) -> Result<(), Error> {
    let mut base = SweepConfig::default();
    apply_overrides(&mut base, &args.common)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    for spec in figure_specs(&base) {
        let rows = spec.run()?;
        let path = args.out_dir.join(format!("{}.csv", spec.name));
        emit_csv(&rows, &path)?;
        eprintln!("wrote {}", display(&path));
    }
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_numeric() => 3,
        Error::Io { .. } | Error::Csv { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Single(a) => single(a),
        Command::Figures(a) => figures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
