//! Text parsers for the feeder topology and node dataset, plus the builder
//! for the modified 123-node distribution test feeder.
//!
//! Topology files carry one edge per line (`<node_a> <node_b>`), with `#`
//! comments and blank lines ignored. Dataset files carry one node per line:
//! `node_id load_MW [c1 c2 p_min p_max]`, where the four generator columns
//! are present only for generator-bearing nodes.

use super::{GeneratorParams, Grid, GridError, Node, NodeId, WATTS_PER_MW};

/// The six tie links the builder closes on top of the base line segments.
/// Four of them attach the 152/135/160/197 branches; the 54-94 and 151-300
/// links close the only two cycles, so dropping both leaves a spanning tree.
pub const TIE_LINKS: [(u32, u32); 6] = [
    (13, 152),
    (18, 135),
    (54, 94),
    (60, 160),
    (97, 197),
    (151, 300),
];

const DEFAULT_TOPOLOGY: &str = include_str!("../../data/ieee123.edges");
const DEFAULT_DATASET: &str = include_str!("../../data/ieee123.dataset");

/// Raw text of the committed feeder edge list.
pub fn default_topology_text() -> &'static str {
    DEFAULT_TOPOLOGY
}

/// Raw text of the committed node dataset.
pub fn default_dataset_text() -> &'static str {
    DEFAULT_DATASET
}

/// Parse an edge-list file. Returns edges in file order; self-loops and
/// malformed lines are errors, duplicates are preserved (the grid collapses
/// them).
pub fn parse_topology(text: &str) -> Result<Vec<(NodeId, NodeId)>, GridError> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let a = parse_node_id(fields.next(), line, "node_a")?;
        let b = parse_node_id(fields.next(), line, "node_b")?;
        if let Some(extra) = fields.next() {
            return Err(GridError::ParseTopology {
                line,
                msg: format!("unexpected trailing field {extra:?}"),
            });
        }
        if a == b {
            return Err(GridError::SelfLoop(a));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

/// Parse a node dataset file: loads and optional generator parameters.
pub fn parse_dataset(text: &str) -> Result<Vec<Node>, GridError> {
    let mut nodes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 6 {
            return Err(GridError::ParseDataset {
                line,
                msg: format!("expected 2 or 6 fields, got {}", fields.len()),
            });
        }
        let id = parse_node_id(Some(fields[0]), line, "node_id").map_err(topo_to_dataset)?;
        let load_mw: f64 = parse_f64(fields[1], line, "load_MW")?;
        if !(load_mw.is_finite() && (0.0..=1e6).contains(&load_mw)) {
            return Err(GridError::ParseDataset {
                line,
                msg: format!("load must be within [0, 1e6] MW, got {load_mw}"),
            });
        }
        let load_watts = (load_mw * WATTS_PER_MW).round() as u64;
        let generator = if fields.len() == 6 {
            let c1 = parse_f64(fields[2], line, "c1")?;
            let c2 = parse_f64(fields[3], line, "c2")?;
            let p_min = parse_f64(fields[4], line, "p_min")?;
            let p_max = parse_f64(fields[5], line, "p_max")?;
            Some(
                GeneratorParams::new(c1, c2, p_min, p_max).map_err(|e| GridError::ParseDataset {
                    line,
                    msg: e.to_string(),
                })?,
            )
        } else {
            None
        };
        nodes.push(Node {
            id,
            load_watts,
            generator,
        });
    }
    Ok(nodes)
}

/// Build the test feeder: nodes from the dataset, edges from the topology
/// file plus the six tie links. Tie links apply where their endpoints exist
/// (always, on the stock feeder data), so the builder stays usable for
/// arbitrary smaller topologies. The result must be connected.
pub fn build_test_feeder(topology: &str, dataset: &str) -> Result<Grid, GridError> {
    let nodes = parse_dataset(dataset)?;
    let ids: std::collections::BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    let mut edges = parse_topology(topology)?;
    for (a, b) in TIE_LINKS {
        if ids.contains(&NodeId(a)) && ids.contains(&NodeId(b)) {
            edges.push((NodeId(a), NodeId(b)));
        }
    }
    Grid::new(nodes, edges)
}

/// The committed modified 123-node feeder. The data files are validated by
/// the test suite, so this cannot fail.
pub fn default_feeder() -> Grid {
    build_test_feeder(DEFAULT_TOPOLOGY, DEFAULT_DATASET)
        .expect("committed feeder data must be valid")
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => line[..pos].trim(),
        None => line.trim(),
    }
}

fn parse_node_id(field: Option<&str>, line: usize, what: &str) -> Result<NodeId, GridError> {
    let text = field.ok_or_else(|| GridError::ParseTopology {
        line,
        msg: format!("missing {what}"),
    })?;
    text.parse::<u32>()
        .map(NodeId)
        .map_err(|_| GridError::ParseTopology {
            line,
            msg: format!("{what} must be an unsigned integer, got {text:?}"),
        })
}

fn parse_f64(text: &str, line: usize, what: &str) -> Result<f64, GridError> {
    text.parse::<f64>().map_err(|_| GridError::ParseDataset {
        line,
        msg: format!("{what} must be a number, got {text:?}"),
    })
}

fn topo_to_dataset(err: GridError) -> GridError {
    match err {
        GridError::ParseTopology { line, msg } => GridError::ParseDataset { line, msg },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::is_connected;
    use std::collections::BTreeSet;

    #[test]
    fn default_feeder_has_123_nodes_and_expected_generators() {
        let grid = default_feeder();
        assert_eq!(grid.node_count(), 123);
        let gens: Vec<u32> = grid.generator_nodes().iter().map(|n| n.0).collect();
        assert_eq!(gens, vec![1, 35, 60, 76, 144]);
    }

    #[test]
    fn default_feeder_contains_the_tie_links() {
        let grid = default_feeder();
        for (a, b) in TIE_LINKS {
            let e = (NodeId(a.min(b)), NodeId(a.max(b)));
            assert!(grid.edges().contains(&e), "missing tie link {a}-{b}");
        }
    }

    #[test]
    fn default_feeder_without_loop_ties_stays_connected() {
        let grid = default_feeder();
        let removed = BTreeSet::from([
            (NodeId(54), NodeId(94)),
            (NodeId(151), NodeId(300)),
        ]);
        let live: BTreeSet<_> = grid
            .edges()
            .iter()
            .copied()
            .filter(|e| !removed.contains(e))
            .collect();
        assert!(is_connected(&live, &grid.node_ids()));
    }

    #[test]
    fn edge_naming_unknown_node_is_rejected() {
        let dataset = "1 0.5\n2 0.5\n";
        let topology = "1 2\n1 999\n";
        let err = build_test_feeder(topology, dataset).unwrap_err();
        assert!(matches!(err, GridError::UnknownNode(NodeId(999), _)));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let edges = parse_topology("# header\n\n1 2 # trailing\n").unwrap();
        assert_eq!(edges, vec![(NodeId(1), NodeId(2))]);
    }

    #[test]
    fn malformed_topology_lines_report_line_numbers() {
        let err = parse_topology("1 2\n3\n").unwrap_err();
        match err {
            GridError::ParseTopology { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dataset_row_widths_are_enforced() {
        assert!(parse_dataset("1 0.5 0.1\n").is_err());
        assert!(parse_dataset("1 0.5 0.1 5.0 0.0 2.0\n").is_ok());
    }

    #[test]
    fn dataset_load_parses_to_exact_watts() {
        let nodes = parse_dataset("7 0.004321\n").unwrap();
        assert_eq!(nodes[0].load_watts, 4321);
    }

    #[test]
    fn dataset_rejects_negative_load_and_bad_generator() {
        assert!(parse_dataset("1 -0.5\n").is_err());
        assert!(parse_dataset("1 0.5 0.0 5.0 0.0 2.0\n").is_err());
    }
}
