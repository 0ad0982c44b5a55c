//! Physical network model: nodes with loads and generating units, an
//! undirected edge set, and the clustering machinery that turns nodes into
//! superagents with an inter-agent communication graph.

mod comm;
mod feeder;
mod partition;

pub use comm::{aggregate, derive_comm_graph, CommGraph, SuperAgent};
pub use feeder::{
    build_test_feeder, default_dataset_text, default_feeder, default_topology_text, parse_dataset,
    parse_topology, TIE_LINKS,
};
pub use partition::{partition_grid, partition_grid_with, Partition, PartitionError};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

/// Watts per megawatt; node loads are stored as integer watts so that load
/// sums are exact regardless of grouping.
pub const WATTS_PER_MW: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("topology line {line}: {msg}")]
    ParseTopology { line: usize, msg: String },
    #[error("dataset line {line}: {msg}")]
    ParseDataset { line: usize, msg: String },
    #[error("unknown node {0} referenced by {1}")]
    UnknownNode(NodeId, String),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("grid has no nodes")]
    Empty,
    #[error("grid is disconnected")]
    Disconnected,
    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),
}

/// Opaque node label. Feeder numbering is sparse and non-contiguous, so ids
/// are never used as array indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Cost curve and output limits of one generating unit.
///
/// The cost of producing `p` MW for an hour is `cost_quadratic * p^2 +
/// cost_linear * p` dollars. `cost_quadratic` must be strictly positive: the
/// dispatch formulas divide by it.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GeneratorParams {
    /// Quadratic cost coefficient ($/MW^2 h), strictly positive.
    pub cost_quadratic: f64,
    /// Linear cost coefficient ($/MWh), non-negative.
    pub cost_linear: f64,
    /// Minimum output (MW).
    pub p_min: f64,
    /// Maximum output (MW).
    pub p_max: f64,
}

impl GeneratorParams {
    pub fn new(
        cost_quadratic: f64,
        cost_linear: f64,
        p_min: f64,
        p_max: f64,
    ) -> Result<Self, GridError> {
        if !(cost_quadratic.is_finite() && cost_quadratic > 0.0) {
            return Err(GridError::InvalidGenerator(format!(
                "cost_quadratic must be finite and > 0, got {cost_quadratic}"
            )));
        }
        if !(cost_linear.is_finite() && cost_linear >= 0.0) {
            return Err(GridError::InvalidGenerator(format!(
                "cost_linear must be finite and >= 0, got {cost_linear}"
            )));
        }
        if !(p_min.is_finite() && p_max.is_finite() && 0.0 <= p_min && p_min <= p_max) {
            return Err(GridError::InvalidGenerator(format!(
                "output limits must satisfy 0 <= p_min <= p_max, got [{p_min}, {p_max}]"
            )));
        }
        Ok(Self {
            cost_quadratic,
            cost_linear,
            p_min,
            p_max,
        })
    }

    /// Marginal cost 2*c_q*p + c_l at output `p`.
    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.cost_quadratic * p + self.cost_linear
    }

    /// Cost of producing `p` for an hour.
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_quadratic * p * p + self.cost_linear * p
    }

    /// Output that sets the marginal cost equal to `price`, clamped into
    /// `[p_min, p_max]`.
    pub fn response(&self, price: f64) -> f64 {
        let interior = (price - self.cost_linear) / (2.0 * self.cost_quadratic);
        interior.clamp(self.p_min, self.p_max)
    }
}

/// One physical node: a demand and optionally a generating unit.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    /// Demand in integer watts (exact summation).
    pub load_watts: u64,
    pub generator: Option<GeneratorParams>,
}

impl Node {
    pub fn load_mw(&self) -> f64 {
        self.load_watts as f64 / WATTS_PER_MW
    }
}

/// Undirected, connected graph of nodes. Edges are stored as normalized
/// `(low, high)` id pairs; duplicates collapse, self-loops are rejected.
#[derive(Debug, Clone)]
pub struct Grid {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeSet<(NodeId, NodeId)>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Grid {
    pub fn new(
        nodes: impl IntoIterator<Item = Node>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GridError> {
        let mut node_map = BTreeMap::new();
        for node in nodes {
            if node_map.insert(node.id, node.clone()).is_some() {
                return Err(GridError::DuplicateNode(node.id));
            }
        }
        if node_map.is_empty() {
            return Err(GridError::Empty);
        }
        let mut edge_set = BTreeSet::new();
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
            node_map.keys().map(|&id| (id, BTreeSet::new())).collect();
        for (a, b) in edges {
            if a == b {
                return Err(GridError::SelfLoop(a));
            }
            for end in [a, b] {
                if !node_map.contains_key(&end) {
                    return Err(GridError::UnknownNode(end, format!("edge ({a}, {b})")));
                }
            }
            let e = if a < b { (a, b) } else { (b, a) };
            edge_set.insert(e);
            adjacency.get_mut(&a).unwrap().insert(b);
            adjacency.get_mut(&b).unwrap().insert(a);
        }
        let grid = Self {
            nodes: node_map,
            edges: edge_set,
            adjacency,
        };
        if !is_connected(&grid.edges, &grid.nodes.keys().copied().collect()) {
            return Err(GridError::Disconnected);
        }
        Ok(grid)
    }

    /// Attach a generating unit to an existing node.
    pub fn attach_generator(
        &mut self,
        id: NodeId,
        params: GeneratorParams,
    ) -> Result<(), GridError> {
        match self.nodes.get_mut(&id) {
            Some(node) => {
                node.generator = Some(params);
                Ok(())
            }
            None => Err(GridError::UnknownNode(id, "generator".to_string())),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn neighbors(&self, id: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.adjacency.get(&id)
    }

    pub fn total_load_watts(&self) -> u64 {
        self.nodes.values().map(|n| n.load_watts).sum()
    }

    /// Ids of generator-bearing nodes, ascending.
    pub fn generator_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.generator.is_some())
            .map(|n| n.id)
            .collect()
    }
}

/// True iff a single connected component spans every vertex. The empty
/// vertex set counts as connected. Edges with endpoints outside `vertices`
/// are ignored.
pub fn is_connected<V: Ord + Copy>(edges: &BTreeSet<(V, V)>, vertices: &BTreeSet<V>) -> bool {
    let Some(&start) = vertices.iter().next() else {
        return true;
    };
    let mut adjacency: BTreeMap<V, Vec<V>> = BTreeMap::new();
    for &(a, b) in edges {
        if vertices.contains(&a) && vertices.contains(&b) {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
    }
    let mut seen = BTreeSet::from([start]);
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        if let Some(next) = adjacency.get(&v) {
            for &w in next {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
    }
    seen.len() == vertices.len()
}
