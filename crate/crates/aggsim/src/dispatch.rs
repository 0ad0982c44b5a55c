//! Centralized dispatch: minimize total quadratic production cost subject to
//! supply-demand balance and per-unit output limits.
//!
//! `solve_centralized` finds the optimum analytically with an active-set
//! fixed point over the market-clearing price: non-binding units run where
//! marginal cost equals the price, units pinned at a limit drop out of the
//! price formula. `brute_force_solve` is an independent reference that
//! bisects the price against total response; the two must agree and the test
//! suites hold them to that.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GeneratorParams, SuperAgent};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("no generating units")]
    NoUnits,
    #[error("infeasible: total load {total_load} outside [{p_min_sum}, {p_max_sum}]")]
    Infeasible {
        total_load: f64,
        p_min_sum: f64,
        p_max_sum: f64,
    },
    #[error("missing output for agent {agent} unit {unit}")]
    MissingUnitOutput { agent: usize, unit: usize },
}

/// Solved centralized optimum.
#[derive(Debug, Clone)]
pub struct Dispatch {
    /// Market-clearing price ($/MWh) for non-binding units.
    pub lambda_star: f64,
    /// Per-unit outputs, `unit_outputs[agent][unit]` in MW.
    pub unit_outputs: Vec<Vec<f64>>,
    /// Per-agent output sums (MW), zero for unit-less agents.
    pub agent_outputs: Vec<f64>,
    /// Units held at p_max, as `(agent, unit)` pairs.
    pub binding_max: BTreeSet<(usize, usize)>,
    /// Units held at p_min.
    pub binding_min: BTreeSet<(usize, usize)>,
    /// Optimal objective value ($).
    pub cost: f64,
}

#[derive(Serialize)]
struct AgentOutputJson {
    agent_id: usize,
    output_mw: f64,
    units: Vec<f64>,
}

#[derive(Serialize)]
struct UnitRefJson {
    agent_id: usize,
    unit: usize,
}

#[derive(Serialize)]
struct DispatchJson<'a> {
    lambda_star: f64,
    outputs: Vec<AgentOutputJson>,
    binding_max: Vec<UnitRefJson>,
    binding_min: Vec<UnitRefJson>,
    cost: &'a f64,
}

impl Dispatch {
    /// JSON document with fixed field order: lambda_star, outputs (by agent
    /// and unit), binding sets, cost.
    pub fn to_json(&self) -> String {
        let doc = DispatchJson {
            lambda_star: self.lambda_star,
            outputs: self
                .unit_outputs
                .iter()
                .enumerate()
                .map(|(agent_id, units)| AgentOutputJson {
                    agent_id,
                    output_mw: self.agent_outputs[agent_id],
                    units: units.clone(),
                })
                .collect(),
            binding_max: self
                .binding_max
                .iter()
                .map(|&(agent_id, unit)| UnitRefJson { agent_id, unit })
                .collect(),
            binding_min: self
                .binding_min
                .iter()
                .map(|&(agent_id, unit)| UnitRefJson { agent_id, unit })
                .collect(),
            cost: &self.cost,
        };
        serde_json::to_string_pretty(&doc).expect("dispatch serializes")
    }
}

struct FlatUnit {
    agent: usize,
    unit: usize,
    params: GeneratorParams,
}

fn flatten_units(agents: &[SuperAgent]) -> Vec<FlatUnit> {
    let mut units = Vec::new();
    for agent in agents {
        for (unit, &params) in agent.units.iter().enumerate() {
            units.push(FlatUnit {
                agent: agent.id,
                unit,
                params,
            });
        }
    }
    units
}

fn check_feasible(units: &[FlatUnit], total_load: f64) -> Result<(), DispatchError> {
    if units.is_empty() {
        return Err(DispatchError::NoUnits);
    }
    let p_min_sum: f64 = units.iter().map(|u| u.params.p_min).sum();
    let p_max_sum: f64 = units.iter().map(|u| u.params.p_max).sum();
    let tol = 1e-9 * (1.0 + total_load.abs() + p_max_sum.abs());
    if total_load < p_min_sum - tol || total_load > p_max_sum + tol {
        return Err(DispatchError::Infeasible {
            total_load,
            p_min_sum,
            p_max_sum,
        });
    }
    Ok(())
}

/// Solve the centralized problem analytically.
///
/// Active-set fixed point: every pass recomputes the price over the
/// currently non-binding units, then reclassifies all units against it
/// (clamping violators, releasing units whose limit no longer binds, in one
/// step). Units exactly at a limit are classified non-binding. Terminates
/// within two passes per unit: the pass is Newton's method on the monotone
/// piecewise-linear total-response curve.
pub fn solve_centralized(agents: &[SuperAgent]) -> Result<Dispatch, DispatchError> {
    let units = flatten_units(agents);
    let total_load: f64 = agents.iter().map(|a| a.load_mw()).sum();
    check_feasible(&units, total_load)?;

    // Fixed-point loop with a monotone safeguard. The plain
    // recompute-and-reclassify step is Newton's method on the piecewise
    // linear total-response curve and can orbit between segments whose
    // slopes differ sharply, so every step is confined to a shrinking
    // bracket that provably contains the clearing price; a step that
    // escapes the bracket becomes a bisection step instead.
    let mut lo = units
        .iter()
        .map(|u| u.params.marginal_cost(u.params.p_min))
        .fold(f64::INFINITY, f64::min);
    let mut hi = units
        .iter()
        .map(|u| u.params.marginal_cost(u.params.p_max))
        .fold(f64::NEG_INFINITY, f64::max);
    let classify = |lambda: f64| -> (BTreeSet<usize>, BTreeSet<usize>) {
        let mut next_max = BTreeSet::new();
        let mut next_min = BTreeSet::new();
        for (idx, u) in units.iter().enumerate() {
            // marginal-cost form of the limit test: exact at breakpoints,
            // so a unit priced right at its margin classifies non-binding
            if lambda > u.params.marginal_cost(u.params.p_max) {
                next_max.insert(idx);
            } else if lambda < u.params.marginal_cost(u.params.p_min) {
                next_min.insert(idx);
            }
        }
        (next_max, next_min)
    };
    let response_sum =
        |lambda: f64| -> f64 { units.iter().map(|u| u.params.response(lambda)).sum() };

    let mut binding_max: BTreeSet<usize> = BTreeSet::new();
    let mut binding_min: BTreeSet<usize> = BTreeSet::new();
    let mut lambda = lo;
    for _pass in 0..256 {
        let candidate = price_for_active_set(&units, total_load, &binding_max, &binding_min);
        let (cand_max, cand_min) = classify(candidate);
        if cand_max == binding_max && cand_min == binding_min {
            lambda = candidate;
            break;
        }
        lambda = if candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
        if response_sum(lambda) < total_load {
            lo = lambda;
        } else {
            hi = lambda;
        }
        (binding_max, binding_min) = classify(lambda);
    }

    let mut unit_outputs: Vec<Vec<f64>> = agents.iter().map(|a| vec![0.0; a.units.len()]).collect();
    let mut bound_max = BTreeSet::new();
    let mut bound_min = BTreeSet::new();
    for (idx, u) in units.iter().enumerate() {
        let p = if binding_max.contains(&idx) {
            bound_max.insert((u.agent, u.unit));
            u.params.p_max
        } else if binding_min.contains(&idx) {
            bound_min.insert((u.agent, u.unit));
            u.params.p_min
        } else {
            // clamp shaves off sub-ulp excursions at breakpoint units
            u.params.response(lambda)
        };
        unit_outputs[u.agent][u.unit] = p;
    }
    let agent_outputs: Vec<f64> = unit_outputs.iter().map(|us| us.iter().sum()).collect();
    let cost = objective(agents, &unit_outputs)?;
    Ok(Dispatch {
        lambda_star: lambda,
        unit_outputs,
        agent_outputs,
        binding_max: bound_max,
        binding_min: bound_min,
        cost,
    })
}

/// Price over the non-binding set; binding units contribute their pinned
/// outputs to the balance instead.
///
/// With every unit pinned the response curve is flat, so no price solves the
/// balance on this segment. If the pinned total already balances the load
/// this is a genuine all-binding optimum and any price between the binding
/// margins certifies it; otherwise the price steps to the breakpoint that
/// releases a unit on the deficient side, which re-enters the non-binding
/// set on the next pass (a unit exactly at its margin classifies
/// non-binding).
fn price_for_active_set(
    units: &[FlatUnit],
    total_load: f64,
    binding_max: &BTreeSet<usize>,
    binding_min: &BTreeSet<usize>,
) -> f64 {
    let mut inv_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut pinned = 0.0;
    for (idx, u) in units.iter().enumerate() {
        if binding_max.contains(&idx) {
            pinned += u.params.p_max;
        } else if binding_min.contains(&idx) {
            pinned += u.params.p_min;
        } else {
            inv_sum += 1.0 / (2.0 * u.params.cost_quadratic);
            ratio_sum += u.params.cost_linear / (2.0 * u.params.cost_quadratic);
        }
    }
    if inv_sum > 0.0 {
        return (total_load - pinned + ratio_sum) / inv_sum;
    }
    let max_margin = units
        .iter()
        .enumerate()
        .filter(|(idx, _)| binding_max.contains(idx))
        .map(|(_, u)| u.params.marginal_cost(u.params.p_max))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_margin = units
        .iter()
        .enumerate()
        .filter(|(idx, _)| binding_min.contains(idx))
        .map(|(_, u)| u.params.marginal_cost(u.params.p_min))
        .fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + total_load.abs());
    if (pinned - total_load).abs() <= tol {
        match (binding_max.is_empty(), binding_min.is_empty()) {
            (false, true) => max_margin,
            (true, false) => min_margin,
            _ => 0.5 * (max_margin + min_margin),
        }
    } else if pinned < total_load {
        // short of load: release the cheapest low-pinned unit
        min_margin
    } else {
        // surplus: release the costliest high-pinned unit
        max_margin
    }
}

/// Total production cost for the given per-unit outputs, summed in agent
/// then unit order.
pub fn objective(agents: &[SuperAgent], unit_outputs: &[Vec<f64>]) -> Result<f64, DispatchError> {
    let mut cost = 0.0;
    for agent in agents {
        let outputs = unit_outputs
            .get(agent.id)
            .ok_or(DispatchError::MissingUnitOutput {
                agent: agent.id,
                unit: 0,
            })?;
        for (unit, params) in agent.units.iter().enumerate() {
            let p = outputs.get(unit).ok_or(DispatchError::MissingUnitOutput {
                agent: agent.id,
                unit,
            })?;
            cost += params.cost(*p);
        }
    }
    Ok(cost)
}

/// Independent reference solver: bisect the price until total clamped
/// response balances total load to within `step` MW. Intended for small
/// instances; the test suites compare it against `solve_centralized`.
pub fn brute_force_solve(agents: &[SuperAgent], step: f64) -> Result<Dispatch, DispatchError> {
    let units = flatten_units(agents);
    let total_load: f64 = agents.iter().map(|a| a.load_mw()).sum();
    check_feasible(&units, total_load)?;

    let mut lo = units
        .iter()
        .map(|u| u.params.cost_linear)
        .fold(f64::INFINITY, f64::min);
    let mut hi = units
        .iter()
        .map(|u| u.params.marginal_cost(u.params.p_max))
        .fold(f64::NEG_INFINITY, f64::max);
    let response_sum = |lambda: f64| -> f64 { units.iter().map(|u| u.params.response(lambda)).sum() };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if response_sum(mid) < total_load {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * (1.0 + hi.abs()) && (response_sum(hi) - total_load).abs() < step
        {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);

    let mut unit_outputs: Vec<Vec<f64>> = agents.iter().map(|a| vec![0.0; a.units.len()]).collect();
    let mut binding_max = BTreeSet::new();
    let mut binding_min = BTreeSet::new();
    for u in &units {
        let p = u.params.response(lambda);
        let tol = 1e-9 * (1.0 + u.params.p_max.abs());
        if (p - u.params.p_max).abs() <= tol && u.params.marginal_cost(u.params.p_max) < lambda {
            binding_max.insert((u.agent, u.unit));
        } else if (p - u.params.p_min).abs() <= tol
            && u.params.marginal_cost(u.params.p_min) > lambda
        {
            binding_min.insert((u.agent, u.unit));
        }
        unit_outputs[u.agent][u.unit] = p;
    }
    let agent_outputs: Vec<f64> = unit_outputs.iter().map(|us| us.iter().sum()).collect();
    let cost = objective(agents, &unit_outputs)?;
    Ok(Dispatch {
        lambda_star: lambda,
        unit_outputs,
        agent_outputs,
        binding_max,
        binding_min,
        cost,
    })
}

/// First-order optimality check for a solved dispatch: stationarity of
/// non-binding units, limit-direction consistency of binding units, and
/// supply-demand balance. Returns a description of the first violation.
pub fn check_kkt(agents: &[SuperAgent], dispatch: &Dispatch) -> Result<(), String> {
    let lambda = dispatch.lambda_star;
    let tol = 1e-8 * lambda.abs().max(1.0);
    for agent in agents {
        for (unit, params) in agent.units.iter().enumerate() {
            let key = (agent.id, unit);
            let p = dispatch.unit_outputs[agent.id][unit];
            if p < params.p_min - tol || p > params.p_max + tol {
                return Err(format!("unit {key:?} output {p} outside limits"));
            }
            if dispatch.binding_max.contains(&key) {
                if params.marginal_cost(params.p_max) > lambda + tol {
                    return Err(format!("unit {key:?} bound high above the price"));
                }
            } else if dispatch.binding_min.contains(&key) {
                if params.marginal_cost(params.p_min) < lambda - tol {
                    return Err(format!("unit {key:?} bound low below the price"));
                }
            } else {
                let stationarity = (params.marginal_cost(p) - lambda).abs();
                if stationarity > tol {
                    return Err(format!(
                        "unit {key:?} stationarity violation {stationarity}"
                    ));
                }
            }
        }
    }
    let total_load: f64 = agents.iter().map(|a| a.load_mw()).sum();
    let total_output: f64 = dispatch.agent_outputs.iter().sum();
    if (total_output - total_load).abs() > 1e-9 * total_load.abs().max(1.0) {
        return Err(format!(
            "balance violation: output {total_output} vs load {total_load}"
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::NodeId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn agent(id: usize, load_mw: f64, units: Vec<GeneratorParams>) -> SuperAgent {
        SuperAgent {
            id,
            members: vec![NodeId(id as u32)],
            load_watts: (load_mw * 1e6).round() as u64,
            units,
        }
    }

    fn unit(c1: f64, c2: f64, p_min: f64, p_max: f64) -> GeneratorParams {
        GeneratorParams::new(c1, c2, p_min, p_max).unwrap()
    }

    #[test]
    fn symmetric_two_unit_case() {
        let agents = vec![
            agent(0, 1.0, vec![unit(0.5, 0.0, 0.0, 10.0)]),
            agent(1, 1.0, vec![unit(0.5, 0.0, 0.0, 10.0)]),
        ];
        let d = solve_centralized(&agents).unwrap();
        assert!((d.lambda_star - 1.0).abs() < 1e-12);
        assert!((d.unit_outputs[0][0] - 1.0).abs() < 1e-12);
        assert!((d.unit_outputs[1][0] - 1.0).abs() < 1e-12);
        check_kkt(&agents, &d).unwrap();
    }

    #[test]
    fn capped_unit_binds_and_price_rises() {
        // frozen expectation confirmed by the bisection reference below:
        // unit 1 pinned at 0.5, the price clears at 1.5 on unit 2
        let agents = vec![
            agent(0, 1.0, vec![unit(0.5, 0.0, 0.0, 0.5)]),
            agent(1, 1.0, vec![unit(0.5, 0.0, 0.0, 10.0)]),
        ];
        let d = solve_centralized(&agents).unwrap();
        assert!((d.lambda_star - 1.5).abs() < 1e-12);
        assert_eq!(d.unit_outputs[0][0], 0.5);
        assert!((d.unit_outputs[1][0] - 1.5).abs() < 1e-12);
        assert!(d.binding_max.contains(&(0, 0)));
        assert!(d.binding_min.is_empty());

        let b = brute_force_solve(&agents, 1e-4).unwrap();
        assert!((b.lambda_star - d.lambda_star).abs() < 1e-6);
        check_kkt(&agents, &d).unwrap();
    }

    #[test]
    fn load_equal_to_total_capacity_pins_everything() {
        let agents = vec![
            agent(0, 2.0, vec![unit(0.5, 0.0, 0.0, 1.5)]),
            agent(1, 1.0, vec![unit(0.2, 1.0, 0.0, 1.5)]),
        ];
        let d = solve_centralized(&agents).unwrap();
        assert!((d.unit_outputs[0][0] - 1.5).abs() < 1e-9);
        assert!((d.unit_outputs[1][0] - 1.5).abs() < 1e-9);
        let total: f64 = d.agent_outputs.iter().sum();
        assert!((total - 3.0).abs() < 1e-9);
        // the price covers the costliest marginal cost at p_max:
        // max(2*0.5*1.5, 2*0.2*1.5 + 1) = 1.6
        let worst = (2.0 * 0.5 * 1.5f64).max(2.0 * 0.2 * 1.5 + 1.0);
        assert!(d.lambda_star >= worst - 1e-9);
    }

    #[test]
    fn objective_examples() {
        let zero_agents = vec![agent(0, 0.0, vec![unit(2.0, 3.0, 0.0, 5.0)])];
        assert_eq!(objective(&zero_agents, &[vec![0.0]]).unwrap(), 0.0);
        assert_eq!(objective(&zero_agents, &[vec![1.0]]).unwrap(), 5.0);

        let two = vec![
            agent(0, 0.0, vec![unit(1.0, 0.0, 0.0, 5.0)]),
            agent(1, 0.0, vec![unit(1.0, 0.0, 0.0, 5.0)]),
        ];
        assert_eq!(objective(&two, &[vec![2.0], vec![3.0]]).unwrap(), 13.0);
    }

    #[test]
    fn objective_rejects_missing_outputs() {
        let agents = vec![agent(0, 0.0, vec![unit(1.0, 0.0, 0.0, 5.0)])];
        assert!(matches!(
            objective(&agents, &[vec![]]),
            Err(DispatchError::MissingUnitOutput { .. })
        ));
    }

    #[test]
    fn infeasible_and_unitless_instances_error() {
        let agents = vec![agent(0, 100.0, vec![unit(0.5, 0.0, 0.0, 1.0)])];
        assert!(matches!(
            solve_centralized(&agents),
            Err(DispatchError::Infeasible { .. })
        ));
        let load_only = vec![agent(0, 1.0, vec![])];
        assert!(matches!(
            solve_centralized(&load_only),
            Err(DispatchError::NoUnits)
        ));
        assert!(matches!(
            brute_force_solve(&load_only, 1e-6),
            Err(DispatchError::NoUnits)
        ));
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Vec<SuperAgent> {
        let n_units = rng.gen_range(2..=8);
        let mut units = Vec::new();
        for _ in 0..n_units {
            let c1 = rng.gen_range(0.01..1.0);
            let c2 = rng.gen_range(0.0..20.0);
            let p_min = rng.gen_range(0.0..2.0);
            let p_max = p_min + rng.gen_range(0.5..10.0);
            units.push(unit(c1, c2, p_min, p_max));
        }
        let p_min_sum: f64 = units.iter().map(|u| u.p_min).sum();
        let p_max_sum: f64 = units.iter().map(|u| u.p_max).sum();
        let load = p_min_sum + rng.gen_range(0.05..0.95) * (p_max_sum - p_min_sum);
        vec![agent(0, load, units)]
    }

    #[test]
    fn analytic_solution_matches_bisection_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let agents = random_instance(&mut rng);
            let a = solve_centralized(&agents).unwrap();
            let b = brute_force_solve(&agents, 1e-7).unwrap();
            assert!(
                (a.lambda_star - b.lambda_star).abs() <= 1e-6,
                "lambda mismatch: {} vs {}",
                a.lambda_star,
                b.lambda_star
            );
            for (ua, ub) in a.unit_outputs[0].iter().zip(&b.unit_outputs[0]) {
                assert!((ua - ub).abs() <= 1e-5, "output mismatch {ua} vs {ub}");
            }
            check_kkt(&agents, &a).unwrap();
        }
    }

    #[test]
    fn balanced_perturbations_never_beat_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let delta = 1e-3;
        for _ in 0..50 {
            let agents = random_instance(&mut rng);
            let d = solve_centralized(&agents).unwrap();
            let units = &agents[0].units;
            let outputs = &d.unit_outputs[0];
            for i in 0..units.len() {
                for j in 0..units.len() {
                    if i == j {
                        continue;
                    }
                    let key_i = (0, i);
                    let key_j = (0, j);
                    if d.binding_max.contains(&key_i)
                        || d.binding_min.contains(&key_i)
                        || d.binding_max.contains(&key_j)
                        || d.binding_min.contains(&key_j)
                    {
                        continue;
                    }
                    let mut perturbed = outputs.clone();
                    perturbed[i] += delta;
                    perturbed[j] -= delta;
                    if perturbed[i] > units[i].p_max || perturbed[j] < units[j].p_min {
                        continue;
                    }
                    let cost = objective(&agents, &[perturbed]).unwrap();
                    assert!(cost >= d.cost - 1e-12, "perturbation improved the optimum");
                }
            }
        }
    }

    #[test]
    fn dispatch_json_has_fixed_field_order() {
        let agents = vec![
            agent(0, 1.0, vec![unit(0.5, 0.0, 0.0, 0.5)]),
            agent(1, 1.0, vec![unit(0.5, 0.0, 0.0, 10.0)]),
        ];
        let d = solve_centralized(&agents).unwrap();
        let json = d.to_json();
        let lambda_pos = json.find("lambda_star").unwrap();
        let outputs_pos = json.find("outputs").unwrap();
        let bmax_pos = json.find("binding_max").unwrap();
        let bmin_pos = json.find("binding_min").unwrap();
        let cost_pos = json.find("cost").unwrap();
        assert!(lambda_pos < outputs_pos);
        assert!(outputs_pos < bmax_pos);
        assert!(bmax_pos < bmin_pos);
        assert!(bmin_pos < cost_pos);
        assert_eq!(d.to_json(), json, "serialization is stable");
    }
}
