//! Clustered view of the grid: superagents that own their members' loads and
//! generating units, and the inter-agent communication graph induced by
//! physical edges crossing cluster boundaries.

use std::collections::BTreeSet;

use super::{is_connected, GeneratorParams, Grid, NodeId, Partition, WATTS_PER_MW};

/// A cluster of physical nodes operated as one agent. Members are sorted by
/// node id and the units list preserves member order, so aggregation is
/// deterministic.
#[derive(Debug, Clone)]
pub struct SuperAgent {
    /// Dense cluster id, `0..cluster_count`.
    pub id: usize,
    /// Member node ids, ascending.
    pub members: Vec<NodeId>,
    /// Aggregate demand in integer watts (exact sum of member loads).
    pub load_watts: u64,
    /// Generating units owned by member nodes, in member order.
    pub units: Vec<GeneratorParams>,
}

impl SuperAgent {
    pub fn load_mw(&self) -> f64 {
        self.load_watts as f64 / WATTS_PER_MW
    }
}

/// Inter-agent communication graph. An edge is present iff some physical
/// grid edge joins nodes in the two clusters.
#[derive(Debug, Clone)]
pub struct CommGraph {
    agent_count: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<BTreeSet<usize>>,
}

impl CommGraph {
    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn neighbors(&self, agent: usize) -> &BTreeSet<usize> {
        &self.neighbors[agent]
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).max().unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        let vertices: BTreeSet<usize> = (0..self.agent_count).collect();
        is_connected(&self.edges, &vertices)
    }
}

/// Collapse each cluster into one SuperAgent, ordered by cluster id.
pub fn aggregate(grid: &Grid, partition: &Partition) -> Vec<SuperAgent> {
    partition
        .clusters()
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let mut load_watts = 0u64;
            let mut units = Vec::new();
            for &m in &members {
                let node = grid.node(m).expect("partition references grid nodes");
                load_watts += node.load_watts;
                if let Some(gen) = node.generator {
                    units.push(gen);
                }
            }
            SuperAgent {
                id,
                members,
                load_watts,
                units,
            }
        })
        .collect()
}

/// Contract the grid by the partition: one comm edge per pair of clusters
/// joined by at least one physical edge.
pub fn derive_comm_graph(grid: &Grid, agents: &[SuperAgent], partition: &Partition) -> CommGraph {
    debug_assert_eq!(agents.len(), partition.cluster_count());
    let mut edges = BTreeSet::new();
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); agents.len()];
    for &(a, b) in grid.edges() {
        let ca = partition.cluster_of(a).expect("node has a cluster");
        let cb = partition.cluster_of(b).expect("node has a cluster");
        if ca != cb {
            edges.insert((ca.min(cb), ca.max(cb)));
            neighbors[ca].insert(cb);
            neighbors[cb].insert(ca);
        }
    }
    CommGraph {
        agent_count: agents.len(),
        edges,
        neighbors,
    }
}
