//! Synchronous-round distributed dispatch.
//!
//! Every round, each agent refreshes its cached copies of neighbor prices
//! over the currently live links, then moves its own price by a consensus
//! term (disagreement with the cached neighbor values) and an innovations
//! term (its local supply-demand mismatch), and finally re-dispatches its
//! units against the new price:
//!
//! ```text
//! lambda[i] <- lambda[i] - beta * sum_j (lambda[i] - cache[i][j])
//!                        - alpha * (P[i] - L[i])
//! ```
//!
//! A dead link leaves both endpoint caches untouched, so the consensus term
//! keeps using the last delivered value. All updates in a round are computed
//! from the pre-round snapshot; per-agent neighbor sums run in ascending
//! neighbor order, which makes traces bit-reproducible.
//!
//! Convergence is measured against the centralized optimum: the run stops at
//! the first iteration where every agent's price is within epsilon of the
//! reference. The reference is a harness-side measurement device; agent
//! updates never read it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dispatch::{objective, Dispatch};
use crate::disruption::{live_edges, ResolvedSchedule};
use crate::grid::{CommGraph, SuperAgent};
use crate::metrics::rel_metric;
use crate::trace::{RunOutcome, RunTrace, TraceRow};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("gains must be positive, got alpha0={alpha0}, beta0={beta0}")]
    InvalidGains { alpha0: f64, beta0: f64 },
    #[error("convergence spec invalid: epsilon={epsilon}, max_iterations={max_iterations}")]
    InvalidConvergenceSpec { epsilon: f64, max_iterations: u32 },
}

/// Gain pair for the price update. The schedule is constant: `gains(t)`
/// returns the same pair at every iteration, globally for all agents.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams {
    /// Innovations gain (price units per MW of imbalance).
    pub alpha0: f64,
    /// Consensus gain (dimensionless).
    pub beta0: f64,
}

impl Hyperparams {
    pub fn new(alpha0: f64, beta0: f64) -> Result<Self, EngineError> {
        if !(alpha0 > 0.0 && beta0 > 0.0 && alpha0.is_finite() && beta0.is_finite()) {
            return Err(EngineError::InvalidGains { alpha0, beta0 });
        }
        Ok(Self { alpha0, beta0 })
    }

    /// Untuned fallback: the innovations gain tracks the stiffest unit's
    /// cost curvature, the consensus gain backs off with graph degree (which
    /// keeps the update a contraction on any comm graph).
    pub fn default_for(agents: &[SuperAgent], comm: &CommGraph) -> Self {
        let min_curvature = agents
            .iter()
            .flat_map(|a| a.units.iter())
            .map(|u| 2.0 * u.cost_quadratic)
            .fold(f64::INFINITY, f64::min);
        let alpha0 = if min_curvature.is_finite() {
            0.05 * min_curvature
        } else {
            0.001
        };
        let beta0 = 0.4 / comm.max_degree().max(1) as f64;
        Self { alpha0, beta0 }
    }

    /// Gains applied at iteration `t` (constant schedule).
    pub fn gains(&self, _t: u32) -> (f64, f64) {
        (self.alpha0, self.beta0)
    }
}

/// Stopping rule: price threshold and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceSpec {
    pub epsilon: f64,
    pub max_iterations: u32,
}

impl ConvergenceSpec {
    pub fn new(epsilon: f64, max_iterations: u32) -> Result<Self, EngineError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) || max_iterations < 1 {
            return Err(EngineError::InvalidConvergenceSpec {
                epsilon,
                max_iterations,
            });
        }
        Ok(Self {
            epsilon,
            max_iterations,
        })
    }
}

/// One agent's view: its price copy, its dispatched outputs, and the last
/// price received from each neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub lambda: f64,
    /// Per-unit outputs (MW), each inside its unit's limits.
    pub unit_outputs: Vec<f64>,
    /// Agent output: the unit sum, 0 for load-only agents.
    pub output: f64,
    /// Neighbor id -> last successfully received price.
    pub cache: BTreeMap<usize, f64>,
}

/// Full synchronous-round state.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub iteration: u32,
    /// Ordered by agent id.
    pub agents: Vec<AgentState>,
    /// Edges that delivered in the round that produced this state.
    pub live_edges: BTreeSet<(usize, usize)>,
}

/// Clamp-dispatch the agent's units against a price. Returns the agent
/// total and the per-unit breakdown.
pub fn local_response(agent: &SuperAgent, lambda: f64) -> (f64, Vec<f64>) {
    let unit_outputs: Vec<f64> = agent.units.iter().map(|u| u.response(lambda)).collect();
    (unit_outputs.iter().sum(), unit_outputs)
}

/// Initial state at iteration 0: every price at `lambda0`, outputs
/// dispatched against it, caches seeded with the neighbors' initial prices
/// (the first exchange happens before any disruption can start, since
/// events begin at iteration 1).
pub fn init_state(agents: &[SuperAgent], comm: &CommGraph, lambda0: f64) -> EngineState {
    assert_eq!(agents.len(), comm.agent_count());
    let states = agents
        .iter()
        .map(|agent| {
            let (output, unit_outputs) = local_response(agent, lambda0);
            let cache = comm
                .neighbors(agent.id)
                .iter()
                .map(|&j| (j, lambda0))
                .collect();
            AgentState {
                lambda: lambda0,
                unit_outputs,
                output,
                cache,
            }
        })
        .collect();
    EngineState {
        iteration: 0,
        agents: states,
        live_edges: comm.edges().clone(),
    }
}

/// Advance one synchronous round: deliver over live edges, update every
/// price from the pre-step snapshot, re-dispatch outputs.
pub fn step(
    agents: &[SuperAgent],
    comm: &CommGraph,
    hyper: &Hyperparams,
    state: &EngineState,
    live: &BTreeSet<(usize, usize)>,
) -> EngineState {
    debug_assert!(live.is_subset(comm.edges()), "live edges outside the graph");
    let (alpha, beta) = hyper.gains(state.iteration + 1);

    let mut caches: Vec<BTreeMap<usize, f64>> =
        state.agents.iter().map(|a| a.cache.clone()).collect();
    for &(i, j) in live {
        caches[i].insert(j, state.agents[j].lambda);
        caches[j].insert(i, state.agents[i].lambda);
    }

    let next_agents = caches
        .into_iter()
        .enumerate()
        .map(|(i, cache)| {
            let prev = &state.agents[i];
            let disagreement: f64 = cache.values().map(|&lj| prev.lambda - lj).sum();
            let imbalance = prev.output - agents[i].load_mw();
            let lambda = prev.lambda - beta * disagreement - alpha * imbalance;
            let (output, unit_outputs) = local_response(&agents[i], lambda);
            AgentState {
                lambda,
                unit_outputs,
                output,
                cache,
            }
        })
        .collect();

    EngineState {
        iteration: state.iteration + 1,
        agents: next_agents,
        live_edges: live.clone(),
    }
}

/// True iff every agent's price is within epsilon of the reference optimum.
pub fn check_convergence(state: &EngineState, reference: &Dispatch, spec: &ConvergenceSpec) -> bool {
    state
        .agents
        .iter()
        .all(|a| (a.lambda - reference.lambda_star).abs() <= spec.epsilon)
}

/// Drive rounds until convergence or the cap, recording every iteration.
/// Non-convergence is an outcome, not an error. The reference must come
/// from the same agents and have positive cost.
pub fn run(
    agents: &[SuperAgent],
    comm: &CommGraph,
    hyper: &Hyperparams,
    conv: &ConvergenceSpec,
    schedule: &ResolvedSchedule,
    reference: &Dispatch,
    lambda0: f64,
) -> RunTrace {
    assert!(
        reference.cost > 0.0,
        "reference objective must be positive for REL"
    );
    let mut state = init_state(agents, comm, lambda0);
    let mut rows = Vec::new();
    let record = |state: &EngineState, rows: &mut Vec<TraceRow>| -> bool {
        let unit_outputs: Vec<Vec<f64>> =
            state.agents.iter().map(|a| a.unit_outputs.clone()).collect();
        let f = objective(agents, &unit_outputs).expect("state outputs cover all units");
        let rel = rel_metric(f, reference.cost).expect("reference cost checked positive");
        let max_abs_err = state
            .agents
            .iter()
            .map(|a| (a.lambda - reference.lambda_star).abs())
            .fold(0.0, f64::max);
        let converged = check_convergence(state, reference, conv);
        rows.push(TraceRow {
            iteration: state.iteration,
            lambda: state.agents.iter().map(|a| a.lambda).collect(),
            output: state.agents.iter().map(|a| a.output).collect(),
            rel,
            max_abs_err,
            converged,
        });
        converged
    };

    if record(&state, &mut rows) {
        return RunTrace {
            rows,
            outcome: RunOutcome::ConvergedAt(0),
            lambda_star: reference.lambda_star,
        };
    }
    for t in 1..=conv.max_iterations {
        let live = live_edges(schedule, comm, t);
        state = step(agents, comm, hyper, &state, &live);
        if record(&state, &mut rows) {
            return RunTrace {
                rows,
                outcome: RunOutcome::ConvergedAt(t),
                lambda_star: reference.lambda_star,
            };
        }
    }
    RunTrace {
        rows,
        outcome: RunOutcome::CapHit(conv.max_iterations),
        lambda_star: reference.lambda_star,
    }
}
