use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voyager_core::attacks::AttackKind;
use voyager_core::config::AggregatorKind;
use voyager_core::topology::TopologyKind;
use voyager_sim::report::Report;
use voyager_sim::risk::{self, RiskArgs};
use voyager_sim::simulate::{simulate, SimulateArgs};
use voyager_sim::sweep::{read_rows, sweep, SweepGrid};
use voyager_sim::{config_stem, load_config, output_root, CliError, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "voyager-sim",
    version,
    about = "Decentralized federated learning simulator with topology-based moving target defense"
)]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write rounds.csv, traffic.csv, events.csv and manifest.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write initial and final edge lists and the mutation log.
        #[arg(long)]
        dump_graph: bool,
    },
    /// Print the malicious-neighbor distribution and per-node risk of a topology.
    Risk {
        #[arg(long, value_parser = parse_topology)]
        topology: TopologyKind,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        random_p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of scenarios derived from a base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Attack kind for every cell; defaults to the base config's.
        #[arg(long, value_parser = parse_attack)]
        attack: Option<AttackKind>,
        #[arg(long, value_delimiter = ',')]
        pnr: Vec<u32>,
        #[arg(long, value_delimiter = ',', value_parser = parse_aggregator)]
        aggregators: Vec<AggregatorKind>,
        #[arg(long, value_delimiter = ',', value_parser = parse_topology)]
        topologies: Vec<TopologyKind>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Summarize a sweep CSV as pivot tables.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_topology(s: &str) -> Result<TopologyKind, String> {
    s.parse()
}

fn parse_aggregator(s: &str) -> Result<AggregatorKind, String> {
    s.parse()
}

fn parse_attack(s: &str) -> Result<AttackKind, String> {
    match s {
        "none" => Ok(AttackKind::None),
        "label_flip" => Ok(AttackKind::LabelFlip),
        "model_poison" => Ok(AttackKind::ModelPoison),
        other => Err(format!("unknown attack '{other}'")),
    }
}

fn or_default<T: Clone>(list: Vec<T>, fallback: T) -> Vec<T> {
    if list.is_empty() {
        vec![fallback]
    } else {
        list
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            dump_graph,
        } => {
            let summary = simulate(&SimulateArgs {
                config: &config,
                out: out.as_deref(),
                seed,
                dump_graph,
            })?;
            println!("{}", summary.line());
        }
        Command::Risk {
            topology,
            nodes,
            alpha,
            random_p,
            seed,
            out,
        } => {
            let args = RiskArgs {
                topology,
                nodes,
                alpha,
                random_p,
                seed,
            };
            let profile = risk::profile(&args)?;
            print!("{}", risk::render_table(&args, &profile));
            let dir = out.unwrap_or_else(|| output_root().join("risk"));
            risk::write_csv(&args, &profile, &dir)?;
        }
        Command::Sweep {
            config,
            out,
            attack,
            pnr,
            aggregators,
            topologies,
            seeds,
        } => {
            let mut base = load_config(&config, None)?;
            if let Some(kind) = attack {
                base.attack.kind = kind;
            }
            let grid = SweepGrid {
                pnr: or_default(pnr, base.attack.pnr_percent),
                aggregators: or_default(aggregators, base.aggregator),
                topologies: or_default(topologies, base.topology),
                seeds: or_default(seeds, base.seed),
            };
            let dir = out
                .unwrap_or_else(|| output_root().join(format!("sweep-{}", config_stem(&config))));
            let result = sweep(&base, &grid, &dir, cli.workers)?;
            let failed = result.rows.iter().filter(|r| r.status != "ok").count();
            println!(
                "cells={} cached={} failed={} csv={}",
                result.rows.len(),
                result.skipped,
                failed,
                result.csv.display()
            );
        }
        Command::Report { input, out } => {
            let rows = read_rows(&input)?;
            let report = Report::build(&rows)?;
            print!("{}", report.render());
            let dir = out.unwrap_or_else(|| input.parent().map(PathBuf::from).unwrap_or_default());
            report.write_csv(&dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    log::debug!(
        "output root {} (override with {OUT_ENV})",
        output_root().display()
    );
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
