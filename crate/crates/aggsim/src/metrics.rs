//! Experiment metrics: relative objective error and the affected-nodes
//! granularity measure.

use thiserror::Error;

use crate::grid::{Grid, Partition};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate reference objective {0}: REL needs f* > 0")]
    DegenerateReference(f64),
}

/// Relative distance of the objective value from the optimum, |f - f*| / f*.
pub fn rel_metric(f: f64, f_star: f64) -> Result<f64, MetricsError> {
    if f_star <= 0.0 {
        return Err(MetricsError::DegenerateReference(f_star));
    }
    Ok((f - f_star).abs() / f_star)
}

/// Average number of nodes overseen by one superagent: node count over
/// cluster count. Exact for the shipped granularities (the quotients are
/// dyadic rationals).
pub fn affected_nodes_metric(partition: &Partition, grid: &Grid) -> f64 {
    grid.node_count() as f64 / partition.cluster_count() as f64
}
