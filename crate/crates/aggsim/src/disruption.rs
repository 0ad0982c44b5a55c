//! Timed communication-link outages.
//!
//! Outage windows are half-open `[start, end)`: an edge named by an event is
//! dead for every iteration `t` with `start <= t < end` and live again at
//! `end`. Iteration 0 is the initial state, so events start at iteration 1
//! or later. Events name physical node pairs; against a given partition
//! they resolve to the communication edge between the owning clusters. A
//! pair that falls inside one cluster resolves to nothing and is reported
//! as vacuous, not an error: coarse granularities legitimately absorb
//! fine-grained disruption specs.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::grid::{is_connected, CommGraph, NodeId, Partition};

#[derive(Debug, Error)]
pub enum DisruptionError {
    #[error("disruption window [{start}, {end}) invalid: need 1 <= start < end")]
    InvalidWindow { start: u32, end: u32 },
}

/// One outage: a physical node pair and the half-open iteration window
/// during which the link between their clusters is down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisruptionEvent {
    pub nodes: (NodeId, NodeId),
    pub start: u32,
    pub end: u32,
}

impl DisruptionEvent {
    pub fn new(a: NodeId, b: NodeId, start: u32, end: u32) -> Result<Self, DisruptionError> {
        if start < 1 || start >= end {
            return Err(DisruptionError::InvalidWindow { start, end });
        }
        Ok(Self {
            nodes: (a, b),
            start,
            end,
        })
    }
}

/// Ordered list of outage events, still in physical-node terms.
#[derive(Debug, Clone, Default)]
pub struct LinkSchedule {
    pub events: Vec<DisruptionEvent>,
}

/// An event resolved to a communication edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedEvent {
    pub edge: (usize, usize),
    pub start: u32,
    pub end: u32,
}

/// Schedule after resolution against a partition and comm graph.
/// Overlapping events on one edge need no merging: an edge is dead at `t`
/// iff any event covers `t`, which is exactly the union semantics.
#[derive(Debug, Clone, Default)]
pub struct ResolvedSchedule {
    pub events: Vec<ResolvedEvent>,
}

/// Outcome of resolving a schedule: the usable events plus the events that
/// resolved to nothing.
#[derive(Debug, Clone, Default)]
pub struct ScheduleResolution {
    pub schedule: ResolvedSchedule,
    /// Distinct nodes in one cluster: no comm edge to disrupt at this
    /// granularity.
    pub vacuous: Vec<DisruptionEvent>,
    /// Self-pairs, nodes outside the grid, or cluster pairs with no comm
    /// edge between them.
    pub unknown: Vec<DisruptionEvent>,
}

/// Resolve node-pair events to comm edges under the given partition.
pub fn resolve_schedule(
    schedule: &LinkSchedule,
    partition: &Partition,
    comm: &CommGraph,
) -> ScheduleResolution {
    let mut resolution = ScheduleResolution::default();
    for &event in &schedule.events {
        let (a, b) = event.nodes;
        if a == b {
            resolution.unknown.push(event);
            continue;
        }
        let (Some(ca), Some(cb)) = (partition.cluster_of(a), partition.cluster_of(b)) else {
            resolution.unknown.push(event);
            continue;
        };
        if ca == cb {
            resolution.vacuous.push(event);
            continue;
        }
        let edge = (ca.min(cb), ca.max(cb));
        if !comm.edges().contains(&edge) {
            resolution.unknown.push(event);
            continue;
        }
        resolution.schedule.events.push(ResolvedEvent {
            edge,
            start: event.start,
            end: event.end,
        });
    }
    resolution
}

/// Active comm edges at iteration `t`: everything minus edges covered by an
/// outage window.
pub fn live_edges(
    schedule: &ResolvedSchedule,
    comm: &CommGraph,
    t: u32,
) -> BTreeSet<(usize, usize)> {
    let dead: BTreeSet<(usize, usize)> = schedule
        .events
        .iter()
        .filter(|e| e.start <= t && t < e.end)
        .map(|e| e.edge)
        .collect();
    comm.edges()
        .iter()
        .copied()
        .filter(|e| !dead.contains(e))
        .collect()
}

/// One maximal window with a constant non-empty dead-edge set.
#[derive(Debug, Clone)]
pub struct OutageWindow {
    pub start: u32,
    pub end: u32,
    pub dead_edges: BTreeSet<(usize, usize)>,
    /// True if the live graph splits into islands during this window.
    pub islanded: bool,
}

/// Validation findings for a resolved schedule.
#[derive(Debug, Clone, Default)]
pub struct ScheduleReport {
    pub windows: Vec<OutageWindow>,
    pub vacuous: Vec<DisruptionEvent>,
    pub unknown: Vec<DisruptionEvent>,
}

impl ScheduleReport {
    pub fn any_islanding(&self) -> bool {
        self.windows.iter().any(|w| w.islanded)
    }
}

/// Check every maximal outage window for islanding. The harness decides
/// whether findings abort the run.
pub fn validate_schedule(resolution: &ScheduleResolution, comm: &CommGraph) -> ScheduleReport {
    let mut breakpoints = BTreeSet::new();
    for e in &resolution.schedule.events {
        breakpoints.insert(e.start);
        breakpoints.insert(e.end);
    }
    let marks: Vec<u32> = breakpoints.into_iter().collect();
    let agents: BTreeSet<usize> = (0..comm.agent_count()).collect();
    let mut windows = Vec::new();
    for pair in marks.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        let dead_edges: BTreeSet<(usize, usize)> = resolution
            .schedule
            .events
            .iter()
            .filter(|e| e.start <= start && start < e.end)
            .map(|e| e.edge)
            .collect();
        if dead_edges.is_empty() {
            continue;
        }
        let live: BTreeSet<(usize, usize)> = comm
            .edges()
            .iter()
            .copied()
            .filter(|e| !dead_edges.contains(e))
            .collect();
        let islanded = !is_connected(&live, &agents);
        windows.push(OutageWindow {
            start,
            end,
            dead_edges,
            islanded,
        });
    }
    ScheduleReport {
        windows,
        vacuous: resolution.vacuous.clone(),
        unknown: resolution.unknown.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{aggregate, default_feeder, derive_comm_graph, partition_grid, Grid, Node};

    fn paper_schedule() -> LinkSchedule {
        LinkSchedule {
            events: vec![
                DisruptionEvent::new(NodeId(54), NodeId(94), 20, 400).unwrap(),
                DisruptionEvent::new(NodeId(151), NodeId(300), 20, 400).unwrap(),
            ],
        }
    }

    fn feeder_identity() -> (crate::grid::Partition, CommGraph) {
        let grid = default_feeder();
        let p = partition_grid(&grid, 123, 0).unwrap();
        let agents = aggregate(&grid, &p);
        let comm = derive_comm_graph(&grid, &agents, &p);
        (p, comm)
    }

    #[test]
    fn window_boundaries_are_half_open() {
        let (p, comm) = feeder_identity();
        let resolution = resolve_schedule(&paper_schedule(), &p, &comm);
        assert_eq!(resolution.schedule.events.len(), 2);
        let total = comm.edges().len();
        for (t, expect_dead) in [(19, 0), (20, 2), (399, 2), (400, 0)] {
            let live = live_edges(&resolution.schedule, &comm, t);
            assert_eq!(live.len(), total - expect_dead, "at t={t}");
        }
    }

    #[test]
    fn empty_schedule_keeps_all_edges_live() {
        let (_, comm) = feeder_identity();
        let schedule = ResolvedSchedule::default();
        for t in [0, 1, 100, 10_000] {
            assert_eq!(&live_edges(&schedule, &comm, t), comm.edges());
        }
    }

    #[test]
    fn invalid_windows_are_rejected() {
        assert!(DisruptionEvent::new(NodeId(1), NodeId(2), 0, 5).is_err());
        assert!(DisruptionEvent::new(NodeId(1), NodeId(2), 5, 5).is_err());
        assert!(DisruptionEvent::new(NodeId(1), NodeId(2), 6, 5).is_err());
    }

    #[test]
    fn paper_scenario_never_islands_the_identity_graph() {
        let (p, comm) = feeder_identity();
        let resolution = resolve_schedule(&paper_schedule(), &p, &comm);
        let report = validate_schedule(&resolution, &comm);
        assert_eq!(report.windows.len(), 1);
        assert_eq!(report.windows[0].start, 20);
        assert_eq!(report.windows[0].end, 400);
        assert!(!report.any_islanding());
        assert!(report.unknown.is_empty());
        assert!(report.vacuous.is_empty());
    }

    #[test]
    fn killing_every_edge_of_a_two_agent_graph_islands_it() {
        let grid = Grid::new(
            [
                Node { id: NodeId(1), load_watts: 0, generator: None },
                Node { id: NodeId(2), load_watts: 0, generator: None },
            ],
            [(NodeId(1), NodeId(2))],
        )
        .unwrap();
        let p = partition_grid(&grid, 2, 0).unwrap();
        let agents = aggregate(&grid, &p);
        let comm = derive_comm_graph(&grid, &agents, &p);
        let schedule = LinkSchedule {
            events: vec![DisruptionEvent::new(NodeId(1), NodeId(2), 1, 10).unwrap()],
        };
        let resolution = resolve_schedule(&schedule, &p, &comm);
        let report = validate_schedule(&resolution, &comm);
        assert!(report.any_islanding());
    }

    #[test]
    fn self_pair_is_reported_unknown() {
        let (p, comm) = feeder_identity();
        let schedule = LinkSchedule {
            events: vec![DisruptionEvent::new(NodeId(1), NodeId(1), 1, 2).unwrap()],
        };
        let resolution = resolve_schedule(&schedule, &p, &comm);
        assert_eq!(resolution.unknown.len(), 1);
        assert!(resolution.schedule.events.is_empty());
        let report = validate_schedule(&resolution, &comm);
        assert_eq!(report.unknown.len(), 1);
    }

    #[test]
    fn same_cluster_pair_is_vacuous_at_coarse_granularity() {
        let grid = default_feeder();
        let p = partition_grid(&grid, 1, 0).unwrap();
        let agents = aggregate(&grid, &p);
        let comm = derive_comm_graph(&grid, &agents, &p);
        let resolution = resolve_schedule(&paper_schedule(), &p, &comm);
        assert_eq!(resolution.vacuous.len(), 2);
        assert!(resolution.schedule.events.is_empty());
    }

    #[test]
    fn adding_events_never_revives_an_edge() {
        let (p, comm) = feeder_identity();
        let base = resolve_schedule(&paper_schedule(), &p, &comm);
        let mut extended = paper_schedule();
        extended
            .events
            .push(DisruptionEvent::new(NodeId(13), NodeId(152), 5, 30).unwrap());
        let more = resolve_schedule(&extended, &p, &comm);
        for t in 0..=450 {
            let live_base = live_edges(&base.schedule, &comm, t);
            let live_more = live_edges(&more.schedule, &comm, t);
            assert!(live_more.is_subset(&live_base), "monotonicity broken at t={t}");
        }
    }

    #[test]
    fn overlapping_events_union_their_windows() {
        let (p, comm) = feeder_identity();
        let schedule = LinkSchedule {
            events: vec![
                DisruptionEvent::new(NodeId(54), NodeId(94), 5, 15).unwrap(),
                DisruptionEvent::new(NodeId(54), NodeId(94), 10, 25).unwrap(),
            ],
        };
        let resolution = resolve_schedule(&schedule, &p, &comm);
        let dead_at = |t| comm.edges().len() - live_edges(&resolution.schedule, &comm, t).len();
        assert_eq!(dead_at(4), 0);
        assert_eq!(dead_at(5), 1);
        assert_eq!(dead_at(12), 1);
        assert_eq!(dead_at(24), 1);
        assert_eq!(dead_at(25), 0);
    }
}
