//! Per-iteration run records and their CSV form.
//!
//! Trace files are long-format CSV: one row per agent per recorded
//! iteration, header `iteration,agent_id,lambda,P,abs_lambda_err,REL`.
//! Metadata (scenario hash, resolved parameters) rides in `#`-prefixed
//! comment lines above the header so every file is reproducible from its
//! own head.

use std::io::{self, Write};

/// Snapshot of one iteration across all agents.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iteration: u32,
    /// Per-agent price copies, ordered by agent id.
    pub lambda: Vec<f64>,
    /// Per-agent output sums (MW).
    pub output: Vec<f64>,
    /// Relative objective error at this iteration.
    pub rel: f64,
    /// Worst per-agent price error against the reference.
    pub max_abs_err: f64,
    /// Whether the convergence criterion held at this iteration.
    pub converged: bool,
}

/// How a run ended: either the first iteration at which every agent was
/// within the threshold, or the iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    ConvergedAt(u32),
    CapHit(u32),
}

impl RunOutcome {
    pub fn iterations(&self) -> u32 {
        match *self {
            RunOutcome::ConvergedAt(t) | RunOutcome::CapHit(t) => t,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, RunOutcome::ConvergedAt(_))
    }

    pub fn flag(&self) -> &'static str {
        if self.converged() {
            "converged"
        } else {
            "cap_hit"
        }
    }
}

/// Complete record of one consensus run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    /// Every iteration from 0 to the stopping point, without gaps.
    pub rows: Vec<TraceRow>,
    pub outcome: RunOutcome,
    /// Reference market-clearing price the run was measured against.
    pub lambda_star: f64,
}

impl RunTrace {
    pub fn iterations(&self) -> u32 {
        self.outcome.iterations()
    }

    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("a run records at least iteration 0")
    }

    /// Write the trace as CSV. `every` thins the output to iterations
    /// divisible by it; the final row is always written.
    pub fn write_csv<W: Write>(
        &self,
        w: &mut W,
        metadata: &[(String, String)],
        every: u32,
    ) -> io::Result<()> {
        let every = every.max(1);
        for (key, value) in metadata {
            writeln!(w, "# {key}: {value}")?;
        }
        writeln!(w, "# lambda_star: {}", self.lambda_star)?;
        writeln!(w, "# outcome: {} at {}", self.outcome.flag(), self.iterations())?;
        writeln!(w, "iteration,agent_id,lambda,P,abs_lambda_err,REL")?;
        let last = self.rows.len() - 1;
        for (idx, row) in self.rows.iter().enumerate() {
            if row.iteration % every != 0 && idx != last {
                continue;
            }
            for agent in 0..row.lambda.len() {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    row.iteration,
                    agent,
                    row.lambda[agent],
                    row.output[agent],
                    (row.lambda[agent] - self.lambda_star).abs(),
                    row.rel
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunTrace {
        let row = |t: u32, lam: f64, conv: bool| TraceRow {
            iteration: t,
            lambda: vec![lam, lam + 0.5],
            output: vec![1.0, 0.0],
            rel: 0.25,
            max_abs_err: (lam - 2.0f64).abs().max((lam - 1.5f64).abs()),
            converged: conv,
        };
        RunTrace {
            rows: vec![row(0, 0.0, false), row(1, 1.0, false), row(2, 2.0, true)],
            outcome: RunOutcome::ConvergedAt(2),
            lambda_star: 2.0,
        }
    }

    #[test]
    fn csv_has_the_documented_header_and_one_row_per_agent() {
        let trace = sample();
        let mut buf = Vec::new();
        trace
            .write_csv(&mut buf, &[("scenario_hash".into(), "abc".into())], 1)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# scenario_hash: abc");
        assert_eq!(lines.next().unwrap(), "# lambda_star: 2");
        assert_eq!(lines.next().unwrap(), "# outcome: converged at 2");
        assert_eq!(
            lines.next().unwrap(),
            "iteration,agent_id,lambda,P,abs_lambda_err,REL"
        );
        let data: Vec<&str> = lines.collect();
        assert_eq!(data.len(), 6, "3 iterations x 2 agents");
        assert_eq!(data[0], "0,0,0,1,2,0.25");
    }

    #[test]
    fn thinning_keeps_the_final_row() {
        let trace = sample();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, &[], 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data_rows: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("iteration"))
            .collect();
        // iteration 0 (divisible) and the final iteration 2
        assert_eq!(data_rows.len(), 4);
        assert!(data_rows.iter().any(|r| r.starts_with("2,")));
    }
}
