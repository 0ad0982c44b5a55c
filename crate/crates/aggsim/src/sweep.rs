//! Granularity sweeps: for every configured cluster count, solve the
//! centralized reference, run the consensus protocol once without and once
//! with the disruption schedule, and write traces plus a summary table.
//!
//! Every output file embeds the scenario hash and the resolved parameters in
//! its metadata head, and the whole pipeline is deterministic, so re-running
//! a scenario reproduces the files byte for byte.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::consensus::{run, ConvergenceSpec, EngineError, Hyperparams};
use crate::dispatch::{solve_centralized, Dispatch, DispatchError};
use crate::disruption::{resolve_schedule, validate_schedule, ResolvedSchedule, ScheduleReport};
use crate::grid::{
    aggregate, build_test_feeder, derive_comm_graph, partition_grid_with, CommGraph, Grid, GridError,
    NodeId, PartitionError, SuperAgent,
};
use crate::metrics::affected_nodes_metric;
use crate::scenario::{fnv1a64, ScenarioConfig, ScenarioError};
use crate::trace::RunTrace;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("granularity {k}: communication graph is disconnected")]
    DisconnectedComm { k: usize },
    #[error("granularity {k}: schedule islanding in window [{start}, {end})")]
    Islanding { k: usize, start: u32, end: u32 },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Proceed even when an outage window disconnects the live graph.
    pub allow_islanding: bool,
    /// Record every n-th iteration in trace files (the final row is always
    /// written).
    pub trace_every: u32,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            allow_islanding: false,
            trace_every: 1,
        }
    }
}

/// Per-granularity summary record.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub iters_no_disruption: u32,
    pub iters_with_disruption: u32,
    pub avg_affected_nodes: f64,
    pub outcome_flags: OutcomeFlags,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeFlags {
    pub no_disruption: &'static str,
    pub with_disruption: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub scenario_hash: String,
    pub rows: Vec<SweepRow>,
}

/// Everything a sweep produced, with the traces still in memory for callers
/// that want to inspect them.
#[derive(Debug)]
pub struct SweepOutput {
    pub summary: SweepSummary,
    pub runs: Vec<SweepRun>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug)]
pub struct SweepRun {
    pub k: usize,
    pub agents: Vec<SuperAgent>,
    pub reference: Dispatch,
    pub baseline: RunTrace,
    pub disrupted: RunTrace,
    pub schedule_report: ScheduleReport,
}

/// One granularity prepared for running: the clustered system plus the
/// schedule resolved against it.
pub struct PreparedGranularity {
    pub k: usize,
    pub partition: crate::grid::Partition,
    pub agents: Vec<SuperAgent>,
    pub comm: CommGraph,
    pub schedule: ResolvedSchedule,
    pub schedule_report: ScheduleReport,
    pub gains: Hyperparams,
    pub convergence: ConvergenceSpec,
}

/// Build the grid and cluster it at every configured granularity, resolving
/// and validating the disruption schedule per granularity. Shared by the
/// sweep and by schema-only validation.
pub fn prepare(config: &ScenarioConfig) -> Result<Vec<PreparedGranularity>, SweepError> {
    let topology = read(&config.feeder_path())?;
    let dataset = read(&config.dataset_path())?;
    let grid = build_test_feeder(&topology, &dataset)?;
    prepare_on(&grid, config)
}

/// Scheduled node pairs become separation constraints for the partitioner:
/// a disruption study needs its links to stay inter-agent at every
/// granularity, which balanced clustering would not give by chance.
fn prepare_on(grid: &Grid, config: &ScenarioConfig) -> Result<Vec<PreparedGranularity>, SweepError> {
    let mut prepared = Vec::new();
    for &k in &config.granularities {
        let separate = separation_pairs(grid, config, k);
        let partition = partition_grid_with(grid, k, config.seed, &separate)?;
        let agents = aggregate(grid, &partition);
        let comm = derive_comm_graph(grid, &agents, &partition);
        if !comm.is_connected() {
            return Err(SweepError::DisconnectedComm { k });
        }
        let resolution = resolve_schedule(&config.schedule(), &partition, &comm);
        let schedule_report = validate_schedule(&resolution, &comm);
        let gains = config.gains_for(k, &agents, &comm);
        Hyperparams::new(gains.alpha0, gains.beta0)?;
        let convergence = ConvergenceSpec::new(config.epsilon, config.max_iterations[&k])?;
        prepared.push(PreparedGranularity {
            k,
            partition,
            agents,
            comm,
            schedule: resolution.schedule,
            schedule_report,
            gains,
            convergence,
        });
    }
    Ok(prepared)
}

/// Scenario fingerprint: configuration plus the data files it references.
pub fn scenario_hash(config: &ScenarioConfig) -> Result<String, SweepError> {
    let topology = read(&config.feeder_path())?;
    let dataset = read(&config.dataset_path())?;
    let mut tagged = config.canonical_json();
    tagged.push_str(&format!(
        "|feeder:{:016x}|dataset:{:016x}",
        fnv1a64(topology.as_bytes()),
        fnv1a64(dataset.as_bytes())
    ));
    Ok(format!("{:016x}", fnv1a64(tagged.as_bytes())))
}

/// Run the full sweep and write traces and summaries under the output
/// directory.
pub fn run_sweep(config: &ScenarioConfig, opts: &SweepOptions) -> Result<SweepOutput, SweepError> {
    let hash = scenario_hash(config)?;
    let grid = build_test_feeder(&read(&config.feeder_path())?, &read(&config.dataset_path())?)?;
    let prepared = prepare_on(&grid, config)?;
    for p in &prepared {
        if p.schedule_report.any_islanding() && !opts.allow_islanding {
            let w = p
                .schedule_report
                .windows
                .iter()
                .find(|w| w.islanded)
                .expect("islanding window present");
            return Err(SweepError::Islanding {
                k: p.k,
                start: w.start,
                end: w.end,
            });
        }
    }

    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(|source| SweepError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut files = Vec::new();
    for p in prepared {
        let reference = solve_centralized(&p.agents)?;
        let hyper = Hyperparams::new(p.gains.alpha0, p.gains.beta0)?;
        let empty = ResolvedSchedule::default();
        let baseline = run(
            &p.agents,
            &p.comm,
            &hyper,
            &p.convergence,
            &empty,
            &reference,
            config.lambda0,
        );
        let disrupted = run(
            &p.agents,
            &p.comm,
            &hyper,
            &p.convergence,
            &p.schedule,
            &reference,
            config.lambda0,
        );

        for (arm, trace) in [("no_disruption", &baseline), ("with_disruption", &disrupted)] {
            let path = out_dir.join(format!("trace_k{:03}_{arm}.csv", p.k));
            let metadata = trace_metadata(config, &hash, p.k, arm, &hyper, &p.convergence);
            let mut buf = Vec::new();
            trace
                .write_csv(&mut buf, &metadata, opts.trace_every)
                .expect("writing to memory cannot fail");
            write_file(&path, &buf)?;
            files.push(path);
        }

        rows.push(SweepRow {
            k: p.k,
            iters_no_disruption: baseline.iterations(),
            iters_with_disruption: disrupted.iterations(),
            avg_affected_nodes: affected_nodes_metric(&p.partition, &grid),
            outcome_flags: OutcomeFlags {
                no_disruption: baseline.outcome.flag(),
                with_disruption: disrupted.outcome.flag(),
            },
        });
        runs.push(SweepRun {
            k: p.k,
            agents: p.agents,
            reference,
            baseline,
            disrupted,
            schedule_report: p.schedule_report,
        });
    }

    let summary = SweepSummary {
        scenario_hash: hash,
        rows,
    };
    let csv_path = out_dir.join("summary.csv");
    write_file(&csv_path, summary_csv(&summary, config).as_bytes())?;
    files.push(csv_path);
    let json_path = out_dir.join("summary.json");
    write_file(&json_path, summary_json(&summary, config).as_bytes())?;
    files.push(json_path);

    Ok(SweepOutput {
        summary,
        runs,
        files,
    })
}

fn trace_metadata(
    config: &ScenarioConfig,
    hash: &str,
    k: usize,
    arm: &str,
    hyper: &Hyperparams,
    conv: &ConvergenceSpec,
) -> Vec<(String, String)> {
    vec![
        ("scenario_hash".to_string(), hash.to_string()),
        ("scenario".to_string(), config.canonical_json()),
        ("k".to_string(), k.to_string()),
        ("arm".to_string(), arm.to_string()),
        ("alpha0".to_string(), hyper.alpha0.to_string()),
        ("beta0".to_string(), hyper.beta0.to_string()),
        ("lambda0".to_string(), config.lambda0.to_string()),
        ("epsilon".to_string(), conv.epsilon.to_string()),
        ("max_iterations".to_string(), conv.max_iterations.to_string()),
        ("seed".to_string(), config.seed.to_string()),
    ]
}

/// Summary in CSV form: stable column order, scenario metadata in comment
/// lines.
pub fn summary_csv(summary: &SweepSummary, config: &ScenarioConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("# scenario_hash: {}\n", summary.scenario_hash));
    out.push_str(&format!("# scenario: {}\n", config.canonical_json()));
    out.push_str("K,iters_no_disruption,iters_with_disruption,avg_affected_nodes,outcome_flags\n");
    for row in &summary.rows {
        out.push_str(&format!(
            "{},{},{},{},{};{}\n",
            row.k,
            row.iters_no_disruption,
            row.iters_with_disruption,
            row.avg_affected_nodes,
            row.outcome_flags.no_disruption,
            row.outcome_flags.with_disruption,
        ));
    }
    out
}

/// Summary as a JSON document: one object per granularity, fixed keys.
pub fn summary_json(summary: &SweepSummary, config: &ScenarioConfig) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        scenario_hash: &'a str,
        scenario: &'a ScenarioConfig,
        rows: &'a [SweepRow],
    }
    let doc = Doc {
        scenario_hash: &summary.scenario_hash,
        scenario: config,
        rows: &summary.rows,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    text.push('\n');
    text
}

/// Partition constraints derived from the schedule: every disrupted node
/// pair stays inter-agent, and where the grid offers a redundant path
/// around a disrupted link, the midpoint of that path stays outside both
/// endpoint clusters. The second family keeps at least a third agent on the
/// detour, so cutting the link's comm edge cannot island the graph; it
/// needs three clusters to express, so it only applies for k >= 3.
fn separation_pairs(
    grid: &crate::grid::Grid,
    config: &ScenarioConfig,
    k: usize,
) -> Vec<(NodeId, NodeId)> {
    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    for &(a, b, _, _) in &config.schedule_entries {
        let (u, v) = (NodeId(a.min(b)), NodeId(a.max(b)));
        pairs.push((u, v));
        if k >= 3 {
            if let Some(mid) = detour_midpoint(grid, u, v) {
                pairs.push((mid.min(u), mid.max(u)));
                pairs.push((mid.min(v), mid.max(v)));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Midpoint of the shortest u-v path that avoids the direct u-v edge.
fn detour_midpoint(grid: &crate::grid::Grid, u: NodeId, v: NodeId) -> Option<NodeId> {
    let edge = (u.min(v), u.max(v));
    if !grid.edges().contains(&edge) {
        return None;
    }
    let mut parent = std::collections::BTreeMap::from([(u, u)]);
    let mut queue = std::collections::VecDeque::from([u]);
    while let Some(x) = queue.pop_front() {
        if x == v {
            break;
        }
        for &w in grid.neighbors(x)? {
            let e = (x.min(w), x.max(w));
            if e == edge || parent.contains_key(&w) {
                continue;
            }
            parent.insert(w, x);
            queue.push_back(w);
        }
    }
    parent.contains_key(&v).then(|| {
        let mut path = vec![v];
        let mut x = v;
        while x != u {
            x = parent[&x];
            path.push(x);
        }
        path[path.len() / 2]
    })
}

fn read(path: &Path) -> Result<String, SweepError> {
    std::fs::read_to_string(path).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SweepError> {
    let mut file = std::fs::File::create(path).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}
