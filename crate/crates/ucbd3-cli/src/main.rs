//! Command-line driver: seeded experiment runs, instance generation, bound
//! tables, and broadcast heatmaps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ucbd3_cli::config::{resolve_instance, CliError, ExperimentConfig, InstanceSource};
use ucbd3_cli::experiment::run_experiment;
use ucbd3_cli::output::{
    heatmap_from_dir, render_bounds, render_heatmap, write_experiment, OutputFormat,
};
use ucbd3_core::analysis::{bound_report, epsilon_nash_bounds};
use ucbd3_core::market::stable_match;

#[derive(Parser)]
#[command(
    name = "ucbd3",
    version,
    about = "Decentralized matching-bandit experiment runner"
)]
struct Cli {
    /// Override the experiment's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the run fan-out (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run { config: PathBuf },
    /// Generate an instance file.
    Gen {
        #[command(subcommand)]
        generator: Generator,
    },
    /// Print the regret bound table for an instance.
    Bounds {
        instance: PathBuf,
        /// 1-based rank; omit for all agents.
        #[arg(long)]
        agent: Option<usize>,
        #[arg(long)]
        horizon: u64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
    },
    /// Aggregate a run directory's broadcast log into phase x agent x arm
    /// counts.
    Heatmap {
        run_dir: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Generator {
    /// Optimally stable instance with one planted arm per agent.
    Osb {
        #[command(flatten)]
        shape: Shape,
        #[arg(long, default_value_t = 0.9)]
        opt_mean: f64,
        #[arg(long, default_value_t = 0.0)]
        sub_lo: f64,
        #[arg(long, default_value_t = 0.8)]
        sub_hi: f64,
    },
    /// Rows are random permutations of an equally spaced mean grid.
    Spaced {
        #[command(flatten)]
        shape: Shape,
    },
    /// Hard instance for the lower-bound check on one target rank.
    HardLb {
        #[command(flatten)]
        shape: Shape,
        /// 1-based rank the bound targets.
        #[arg(long)]
        target: usize,
        #[arg(long)]
        delta: f64,
    },
}

#[derive(Args)]
struct Shape {
    #[arg(long)]
    agents: usize,
    #[arg(long)]
    arms: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output instance file.
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Io(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let format: OutputFormat = cli.format.into();
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            let out = run_experiment(&cfg, cli.jobs)?;
            match &cfg.output_dir {
                Some(dir) => {
                    write_experiment(&out, dir, format)?;
                    eprintln!(
                        "wrote {} algorithm(s) x {} run(s) to {}",
                        out.algorithms.len(),
                        cfg.num_runs,
                        dir.display()
                    );
                }
                None => print!("{}", ucbd3_cli::output::render_metrics(&out, format)),
            }
            Ok(())
        }
        Command::Gen { generator } => {
            let (source, path) = match generator {
                Generator::Osb {
                    shape,
                    opt_mean,
                    sub_lo,
                    sub_hi,
                } => (
                    InstanceSource::Osb {
                        n_agents: shape.agents,
                        n_arms: shape.arms,
                        seed: shape.seed,
                        opt_mean,
                        sub_range: (sub_lo, sub_hi),
                    },
                    shape.output,
                ),
                Generator::Spaced { shape } => (
                    InstanceSource::Spaced {
                        n_agents: shape.agents,
                        n_arms: shape.arms,
                        seed: shape.seed,
                    },
                    shape.output,
                ),
                Generator::HardLb {
                    shape,
                    target,
                    delta,
                } => (
                    InstanceSource::HardLb {
                        target_rank: target,
                        n_agents: shape.agents,
                        n_arms: shape.arms,
                        delta,
                        seed: shape.seed,
                    },
                    shape.output,
                ),
            };
            let inst = resolve_instance(&source)?;
            let text = serde_json::to_string_pretty(&inst).expect("instance serializes");
            std::fs::write(&path, text)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            eprintln!(
                "wrote a {}x{} instance to {}",
                inst.n_agents(),
                inst.n_arms(),
                path.display()
            );
            Ok(())
        }
        Command::Bounds {
            instance,
            agent,
            horizon,
            alpha,
        } => {
            if alpha < 2.0 {
                return Err(CliError::Validation(format!(
                    "alpha {alpha} below the minimum of 2"
                )));
            }
            let text = std::fs::read_to_string(&instance)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", instance.display())))?;
            let inst: ucbd3_core::market::Instance = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("bad instance file: {e}")))?;
            if horizon < 2 {
                return Err(CliError::Validation("horizon must be at least 2".into()));
            }
            if let Some(agent) = agent {
                if agent == 0 || agent > inst.n_agents() {
                    return Err(CliError::Validation(format!(
                        "agent {agent} outside 1..={}",
                        inst.n_agents()
                    )));
                }
            }
            let report = bound_report(&inst, horizon, alpha);
            match format {
                OutputFormat::Json => {
                    let out = ucbd3_cli::experiment::ExperimentOutput {
                        instance: inst,
                        checkpoints: Vec::new(),
                        algorithms: Vec::new(),
                        bounds: report,
                        deviation: None,
                    };
                    println!("{}", render_bounds(&out));
                }
                OutputFormat::Csv => {
                    let sm = stable_match(&inst);
                    let uppers: Vec<f64> = report.per_agent.iter().map(|b| b.upper).collect();
                    let eps = epsilon_nash_bounds(&inst, &sm, &uppers);
                    println!("# gap {:.6}, stabilizing phase {}, upper-bound remainder scale {:.3e} (constants omitted)",
                        report.gap, report.stabilizing_phase, report.remainder_scale);
                    println!("agent,upper,lower,hard_closed_form,epsilon_nash");
                    for (idx, b) in report.per_agent.iter().enumerate() {
                        if agent.is_some_and(|a| a != idx + 1) {
                            continue;
                        }
                        let lower = b
                            .lower
                            .map_or_else(|| "not_osb".to_string(), |v| format!("{v:.6}"));
                        println!(
                            "{},{:.6},{},{:.6},{:.6}",
                            idx + 1,
                            b.upper,
                            lower,
                            b.hard_closed_form,
                            eps[idx]
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Heatmap { run_dir, output } => {
            let cells = heatmap_from_dir(&run_dir)?;
            let text = render_heatmap(&cells, format);
            match output {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}
