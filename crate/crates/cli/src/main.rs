use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use roadtrack::eval::{evaluate_trajectory, run, write_metrics, FilterKind, RunConfig, RunSummary};
use roadtrack::graph::write_edge_list;
use roadtrack::sim::{read_records, simulate_seeded, write_records};
use roadtrack::{Error, RoadGraph};

#[derive(Parser)]
#[command(
    name = "roadtrack",
    version,
    about = "Simulate vehicle trajectories and evaluate road-tracking particle filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a bidirectional grid road network as an edge list.
    GenerateGraph {
        #[arg(long, default_value_t = 20)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        cols: usize,
        #[arg(long, default_value_t = 200.0)]
        spacing: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Simulate one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output file; standard output when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one filter over a simulated trajectory and write per-step metrics.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV as written by `simulate`.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value = "PL")]
        filter: FilterKind,
        #[arg(long, default_value_t = 25)]
        particles: usize,
        /// Output file; standard output when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the configured experiment and write metrics, timings and a summary.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate over a list of particle counts and report mean log-RMSE per cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated particle counts.
        #[arg(long, value_delimiter = ',', required = true)]
        particles: Vec<usize>,
        /// Overrides the configured number of replicates.
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load_graph(cfg: &RunConfig) -> Result<RoadGraph, Error> {
    cfg.graph.load().map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("graph file: {io}")),
        other => other,
    })
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_summary(summary: &RunSummary) {
    println!(
        "{:<6} {:>9} {:>14} {:>10} {:>10}",
        "filter", "particles", "mean log-RMSE", "seconds", "cache hit"
    );
    for c in &summary.cells {
        let hit = c
            .cache_hit_rate
            .map(|h| format!("{:.3}", h))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<6} {:>9} {:>14.4} {:>10.2} {:>10}",
            c.filter, c.particles, c.mean_log_rmse, c.seconds, hit
        );
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenerateGraph {
            rows,
            cols,
            spacing,
            out,
        } => {
            let graph = RoadGraph::grid(rows, cols, spacing)?;
            write_edge_list(&graph, &out)?;
            info!("wrote {} edges to {}", graph.len(), out.display());
        }
        Command::Simulate { common, out } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let graph = load_graph(&cfg)?;
            let records = simulate_seeded(&graph, &cfg.sim_config(cfg.seed))?;
            write_records(&records, output(out.as_deref())?)?;
        }
        Command::Filter {
            common,
            trajectory,
            filter,
            particles,
            out,
        } => {
            let mut cfg = common.load()?;
            cfg.filters = vec![filter];
            cfg.particles = vec![particles];
            cfg.workers = 1;
            cfg.validate()?;
            let graph = load_graph(&cfg)?;
            let file = File::open(&trajectory)
                .with_context(|| format!("opening {}", trajectory.display()))?;
            let records = read_records(BufReader::new(file))?;
            if records.is_empty() {
                return Err(
                    Error::Config(format!("{} has no observations", trajectory.display())).into(),
                );
            }
            let cells = evaluate_trajectory(&graph, &cfg, cfg.seed, &records)?;
            write_metrics(&cells, output(out.as_deref())?)?;
        }
        Command::Evaluate { common, output } => {
            let mut cfg = common.load()?;
            if let Some(dir) = output {
                cfg.output = dir;
            }
            let summary = run(&cfg)?;
            info!("wrote results to {}", cfg.output.display());
            print_summary(&summary);
        }
        Command::Sweep {
            common,
            particles,
            replicates,
            output,
        } => {
            let mut cfg = common.load()?;
            cfg.particles = particles;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if let Some(dir) = output {
                cfg.output = dir;
            }
            let summary = run(&cfg)?;
            print_summary(&summary);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(e) if e.is_config() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
