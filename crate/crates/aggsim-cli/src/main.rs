//! Command-line harness for the aggregation simulator.
//!
//! Exit codes: 0 success (including cap-hit runs), 1 I/O failure, 2 config
//! or input parse error, 3 infeasible dispatch or disconnected graph,
//! 4 schedule islanding without `--allow-islanding`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aggsim::dispatch::{solve_centralized, DispatchError};
use aggsim::grid::{
    parse_dataset, parse_topology, partition_grid, Grid, GridError, SuperAgent,
};
use aggsim::scenario::{load_scenario, ScenarioError};
use aggsim::sweep::{prepare, run_sweep, scenario_hash, SweepError, SweepOptions};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_ISLANDING: u8 = 4;

#[derive(Parser)]
#[command(name = "aggsim", about = "Multi-agent energy aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full granularity sweep for a scenario file.
    Simulate {
        scenario: PathBuf,
        /// Override the scenario's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Proceed even if an outage window islands the communication graph.
        #[arg(long)]
        allow_islanding: bool,
        /// Record every n-th iteration in trace files.
        #[arg(long, default_value_t = 1)]
        trace_every: u32,
    },
    /// Solve the centralized dispatch for a dataset and print it as JSON.
    Solve { dataset: PathBuf },
    /// Partition a feeder topology and print `node_id cluster_id` rows.
    Partition {
        feeder: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a scenario: schema, data files, and islanding per granularity.
    Validate {
        scenario: PathBuf,
        /// Report islanding without failing.
        #[arg(long)]
        allow_islanding: bool,
    },
}

fn main() -> ExitCode {
    match dispatch_command(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(err: SweepError) -> Self {
        let code = match &err {
            SweepError::Scenario(e) => scenario_code(e),
            SweepError::Grid(e) => grid_code(e),
            SweepError::Partition(_) => EXIT_CONFIG,
            SweepError::Dispatch(e) => dispatch_code(e),
            SweepError::Engine(_) => EXIT_CONFIG,
            SweepError::DisconnectedComm { .. } => EXIT_INFEASIBLE,
            SweepError::Islanding { .. } => EXIT_ISLANDING,
            SweepError::Io { .. } => EXIT_IO,
        };
        CliError::new(code, err)
    }
}

impl From<ScenarioError> for CliError {
    fn from(err: ScenarioError) -> Self {
        CliError::new(scenario_code(&err), err)
    }
}

impl From<GridError> for CliError {
    fn from(err: GridError) -> Self {
        CliError::new(grid_code(&err), err)
    }
}

fn scenario_code(err: &ScenarioError) -> u8 {
    match err {
        ScenarioError::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn grid_code(err: &GridError) -> u8 {
    match err {
        GridError::Disconnected => EXIT_INFEASIBLE,
        _ => EXIT_CONFIG,
    }
}

fn dispatch_code(err: &DispatchError) -> u8 {
    match err {
        DispatchError::Infeasible { .. } | DispatchError::NoUnits => EXIT_INFEASIBLE,
        DispatchError::MissingUnitOutput { .. } => EXIT_CONFIG,
    }
}

fn dispatch_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            scenario,
            output_dir,
            allow_islanding,
            trace_every,
        } => {
            let mut config = load_scenario(&scenario)?;
            if let Some(dir) = output_dir {
                config.output_dir = dir.to_string_lossy().into_owned();
            }
            let opts = SweepOptions {
                allow_islanding,
                trace_every,
            };
            let output = run_sweep(&config, &opts)?;
            print!("{}", aggsim::sweep::summary_csv(&output.summary, &config));
            for file in &output.files {
                eprintln!("wrote {}", file.display());
            }
            Ok(())
        }
        Command::Solve { dataset } => {
            let text = read_file(&dataset)?;
            let nodes = parse_dataset(&text)?;
            // each dataset row is its own agent: the oracle needs no edges
            let agents: Vec<SuperAgent> = nodes
                .iter()
                .enumerate()
                .map(|(id, node)| SuperAgent {
                    id,
                    members: vec![node.id],
                    load_watts: node.load_watts,
                    units: node.generator.into_iter().collect(),
                })
                .collect();
            let dispatch = solve_centralized(&agents)
                .map_err(|e| CliError::new(dispatch_code(&e), e))?;
            println!("{}", dispatch.to_json());
            Ok(())
        }
        Command::Partition { feeder, k, seed } => {
            let text = read_file(&feeder)?;
            let edges = parse_topology(&text)?;
            // node set inferred from edge endpoints; loads are irrelevant here
            let ids: std::collections::BTreeSet<_> =
                edges.iter().flat_map(|&(a, b)| [a, b]).collect();
            let nodes = ids.into_iter().map(|id| aggsim::grid::Node {
                id,
                load_watts: 0,
                generator: None,
            });
            let grid = Grid::new(nodes, edges)?;
            let partition = partition_grid(&grid, k, seed)
                .map_err(|e| CliError::new(EXIT_CONFIG, e))?;
            print!("{}", partition.export());
            Ok(())
        }
        Command::Validate {
            scenario,
            allow_islanding,
        } => {
            let config = load_scenario(&scenario)?;
            let hash = scenario_hash(&config)?;
            let prepared = prepare(&config)?;
            println!("scenario_hash: {hash}");
            let mut islanded = false;
            for p in &prepared {
                let report = &p.schedule_report;
                let agents_with_units =
                    p.agents.iter().filter(|a| !a.units.is_empty()).count();
                println!(
                    "k={}: agents={} comm_edges={} units_on={} resolved_outages={} vacuous={} unknown={}",
                    p.k,
                    p.agents.len(),
                    p.comm.edges().len(),
                    agents_with_units,
                    report.windows.len(),
                    report.vacuous.len(),
                    report.unknown.len(),
                );
                for w in &report.windows {
                    println!(
                        "  window [{}, {}): {} dead edge(s), {}",
                        w.start,
                        w.end,
                        w.dead_edges.len(),
                        if w.islanded { "ISLANDED" } else { "connected" }
                    );
                    islanded |= w.islanded;
                }
            }
            if islanded && !allow_islanding {
                return Err(CliError::new(EXIT_ISLANDING, "schedule islands the graph"));
            }
            Ok(())
        }
    }
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))
}
