use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use otto_battery::analytic::{phase_portrait, GridAxis};
use otto_battery::config::{ExperimentConfig, Mode, Monitoring, SweepAxis};
use otto_battery::dynamics::{Integrator, PropagatorConfig};
use otto_battery::exec::{init_thread_pool, Execution};
use otto_battery::output::{emit, write_phase_portrait_csv, write_switching_csv, Format};
use otto_battery::runner::{run_sweep, TrajectoryOutput};
use otto_battery::switching::{simulate_switching, SwitchingParams};
use otto_battery::validation::quick_suite;

#[derive(Parser, Debug)]
#[command(name = "otto-battery", version, about = "Quantum Otto machine charging a quantum battery")]
struct Cli {
    /// Worker threads for data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single trajectory.
    Run(RunArgs),
    /// Run every point of a parameter grid (default: the T1 grid).
    Sweep(RunArgs),
    /// Classify the isolated machine on an (alpha, eta) grid.
    PhasePortrait(PortraitArgs),
    /// Periodically switched coupling to a static two-level system.
    Switching(SwitchingArgs),
    /// Run the oracle checks and print one line per check.
    Validate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Engine,
    Refrigerator,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MonitoringArg {
    Unmeasured,
    PerCycle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config is given.
    #[arg(long, value_enum, default_value = "engine")]
    preset: Preset,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long, value_enum)]
    monitoring: Option<MonitoringArg>,
    #[arg(long)]
    cycles: Option<usize>,
    /// Number of battery levels M (overrides the config).
    #[arg(long)]
    levels: Option<usize>,
    /// Include the per-level populations.
    #[arg(long)]
    populations: bool,
    /// Directory for cached work-stroke propagators.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PortraitArgs {
    /// Compression factor eps_h/eps_c.
    #[arg(long, default_value_t = 2.0)]
    x: f64,
    #[arg(long, default_value_t = 101)]
    alpha_points: usize,
    #[arg(long, default_value_t = 0.01)]
    eta_min: f64,
    #[arg(long, default_value_t = 1.99)]
    eta_max: f64,
    #[arg(long, default_value_t = 100)]
    eta_points: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SwitchingArgs {
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    coupling: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(args: &RunArgs, sweep: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let mode = match args.preset {
                Preset::Engine => Mode::EnginePreset,
                Preset::Refrigerator => Mode::RefrigeratorPreset,
            };
            ExperimentConfig::preset(mode, 1000)
        }
    };
    if let Some(m) = args.monitoring {
        cfg.monitoring = match m {
            MonitoringArg::Unmeasured => Monitoring::Unmeasured,
            MonitoringArg::PerCycle => Monitoring::PerCycle,
        };
    }
    if let Some(n) = args.cycles {
        cfg.cycles = n;
    }
    if let Some(m) = args.levels {
        cfg.machine.levels = Some(m);
    }
    if args.populations && !cfg.keep_populations() {
        cfg.outputs.push("populations".into());
    }
    if let Some(out) = &args.out {
        cfg.output_path = out.clone();
    }
    if args.cache_dir.is_some() {
        cfg.cache_dir = args.cache_dir.clone();
    }
    if sweep && cfg.sweep.is_empty() {
        cfg.sweep.push(SweepAxis::default_work_time());
    }
    if !sweep && !cfg.sweep.is_empty() {
        bail!("config defines sweep axes; use the `sweep` subcommand");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(outputs: &[TrajectoryOutput]) {
    for o in outputs {
        let point: Vec<String> = o.point.iter().map(|(a, v)| format!("{}={v:.6}", a.name())).collect();
        let last = o.records.last();
        println!(
            "{} {}: E_N={:.6} N*={} N#={} ({} steps, residual {:.1e}, {:.1}s)",
            if point.is_empty() { "run".to_string() } else { point.join(" ") },
            o.monitoring.as_str(),
            last.map_or(f64::NAN, |r| r.e_battery),
            o.n_star.map_or("none".into(), |n| n.to_string()),
            o.n_hash.map_or("none".into(), |n| n.to_string()),
            o.step_count,
            o.convergence_residual,
            o.wall_time_s
        );
    }
}

fn run(args: &RunArgs, sweep: bool, exec: Execution) -> Result<()> {
    let cfg = load_config(args, sweep)?;
    let outputs = run_sweep(&cfg, exec)?;
    report(&outputs);
    for path in emit(&outputs, args.format.into(), &cfg.output_path)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    println!("wrote {}", path.display());
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        init_thread_pool(n).map_err(anyhow::Error::msg)?;
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::Run(args) => run(args, false, exec),
        Command::Sweep(args) => run(args, true, exec),
        Command::PhasePortrait(a) => {
            let grid = phase_portrait(
                GridAxis::new(0.0, 1.0, a.alpha_points),
                GridAxis::new(a.eta_min, a.eta_max, a.eta_points),
                a.x,
                exec,
            )?;
            write_phase_portrait_csv(&grid, create(&a.out, "phase_portrait.csv")?)?;
            Ok(())
        }
        Command::Switching(a) => {
            let d = SwitchingParams::default();
            let p = SwitchingParams {
                periods: a.periods.unwrap_or(d.periods),
                levels: a.levels.unwrap_or(d.levels),
                coupling: a.coupling.unwrap_or(d.coupling),
                ..d
            };
            let series = simulate_switching(&p)?;
            write_switching_csv(&series, create(&a.out, "switching.csv")?)?;
            Ok(())
        }
        Command::Validate => {
            let cfg = PropagatorConfig {
                integrator: Integrator::default(),
                execution: exec,
            };
            let outcomes = quick_suite(&cfg)?;
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed > 0 {
                bail!("{failed} of {} checks failed", outcomes.len());
            }
            Ok(())
        }
    }
}
