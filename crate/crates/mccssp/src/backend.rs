//! Adapters from the backend-neutral [`MatrixForm`] to MILP libraries.

use std::time::{Duration, Instant};

use mccssp_core::ilp::{
    BackendError, MatrixForm, MilpBackend, MilpSolution, MilpStatus, SolveOptions,
};

/// Environment variable naming the default backend.
pub const SOLVER_ENV: &str = "MCCSSP_SOLVER";

/// Names accepted by [`backend_by_name`].
pub const BACKENDS: &[&str] = &["highs", "microlp"];

pub fn backend_by_name(name: &str) -> Result<Box<dyn MilpBackend + Send>, BackendError> {
    match name {
        "highs" => Ok(Box::new(HighsBackend)),
        "microlp" => Ok(Box::new(MicrolpBackend)),
        other => Err(BackendError(format!(
            "unknown solver `{other}` (available: {})",
            BACKENDS.join(", ")
        ))),
    }
}

/// The backend named by [`SOLVER_ENV`], or HiGHS.
pub fn default_backend_name() -> String {
    std::env::var(SOLVER_ENV).unwrap_or_else(|_| "highs".to_string())
}

fn empty_solution() -> MilpSolution {
    MilpSolution {
        status: MilpStatus::Optimal,
        objective: Some(0.0),
        values: Some(Vec::new()),
    }
}

/// HiGHS branch-and-cut, single threaded and quiet.
#[derive(Debug, Default, Clone, Copy)]
pub struct HighsBackend;

impl MilpBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn solve(
        &mut self,
        problem: &MatrixForm,
        options: &SolveOptions,
    ) -> Result<MilpSolution, BackendError> {
        use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};

        if problem.columns.is_empty() {
            return Ok(empty_solution());
        }
        let mut pb = RowProblem::new();
        let cols: Vec<_> = problem
            .columns
            .iter()
            .map(|c| {
                if c.integer {
                    pb.add_integer_column(c.objective, c.lower..=c.upper)
                } else {
                    pb.add_column(c.objective, c.lower..=c.upper)
                }
            })
            .collect();
        for row in &problem.rows {
            let terms = row.terms.iter().map(|&(c, a)| (cols[c], a));
            match (row.lower, row.upper) {
                (Some(l), Some(u)) => pb.add_row(l..=u, terms),
                (Some(l), None) => pb.add_row(l.., terms),
                (None, Some(u)) => pb.add_row(..=u, terms),
                (None, None) => pb.add_row::<f64, _, _, _>(.., terms),
            }
        }
        let sense = if problem.maximize {
            Sense::Maximise
        } else {
            Sense::Minimise
        };
        let mut model = pb
            .try_optimise(sense)
            .map_err(|s| BackendError(format!("HiGHS rejected the model: {s:?}")))?;
        model.make_quiet();
        model.set_option("threads", 1);
        model.set_option("mip_rel_gap", options.mip_rel_gap);
        model.set_option(
            "primal_feasibility_tolerance",
            options.feasibility_tol.max(1e-10),
        );
        model.set_option(
            "mip_feasibility_tolerance",
            options.feasibility_tol.max(1e-10),
        );
        if let Some(t) = options.time_limit_s {
            model.set_option("time_limit", t);
        }
        let solved = model
            .try_solve()
            .map_err(|s| BackendError(format!("HiGHS failed: {s:?}")))?;
        let has_primal = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
        let status = match solved.status() {
            HighsModelStatus::Optimal => MilpStatus::Optimal,
            HighsModelStatus::ModelEmpty => MilpStatus::Optimal,
            HighsModelStatus::Infeasible => MilpStatus::Infeasible,
            HighsModelStatus::ReachedTimeLimit | HighsModelStatus::ReachedIterationLimit => {
                MilpStatus::TimeLimit
            }
            _ => MilpStatus::Other,
        };
        let values = has_primal.then(|| solved.get_solution().columns().to_vec());
        Ok(MilpSolution {
            status,
            objective: has_primal.then(|| solved.objective_value()),
            values,
        })
    }
}

/// Pure-Rust branch and bound.
#[derive(Debug, Default, Clone, Copy)]
pub struct MicrolpBackend;

impl MilpBackend for MicrolpBackend {
    fn name(&self) -> &str {
        "microlp"
    }

    fn solve(
        &mut self,
        problem: &MatrixForm,
        options: &SolveOptions,
    ) -> Result<MilpSolution, BackendError> {
        use microlp::{
            ComparisonOp, OptimizationDirection, Problem, SolutionStatus, SolveOutcome,
            TerminationReason,
        };

        if problem.columns.is_empty() {
            return Ok(empty_solution());
        }
        let dir = if problem.maximize {
            OptimizationDirection::Maximize
        } else {
            OptimizationDirection::Minimize
        };
        let mut pb = Problem::new(dir);
        let vars: Vec<_> = problem
            .columns
            .iter()
            .map(|c| {
                if c.integer && c.lower == 0.0 && c.upper == 1.0 {
                    pb.add_binary_var(c.objective)
                } else if c.integer {
                    pb.add_integer_var(c.objective, (c.lower as i32, c.upper as i32))
                } else {
                    pb.add_var(c.objective, (c.lower, c.upper))
                }
            })
            .collect();
        for row in &problem.rows {
            let expr: Vec<_> = row.terms.iter().map(|&(c, a)| (vars[c], a)).collect();
            match (row.lower, row.upper) {
                (Some(l), Some(u)) if l == u => {
                    pb.add_constraint(expr.as_slice(), ComparisonOp::Eq, l)
                }
                (l, u) => {
                    if let Some(l) = l {
                        pb.add_constraint(expr.as_slice(), ComparisonOp::Ge, l);
                    }
                    if let Some(u) = u {
                        pb.add_constraint(expr.as_slice(), ComparisonOp::Le, u);
                    }
                }
            }
        }
        let mut opts = microlp::SolveOptions::default();
        opts.time_limit = options.time_limit_s.map(Duration::from_secs_f64);
        opts.mip_gap = options.mip_rel_gap;
        match pb.solve_with(opts) {
            Ok(SolveOutcome::Solution(sol)) => {
                let status = match (sol.status(), sol.termination_reason()) {
                    (SolutionStatus::Optimal, _) | (_, TerminationReason::MipGap) => {
                        MilpStatus::Optimal
                    }
                    _ => MilpStatus::TimeLimit,
                };
                Ok(MilpSolution {
                    status,
                    objective: Some(sol.objective()),
                    values: Some(vars.iter().map(|&v| sol.var_value_raw(v)).collect()),
                })
            }
            Ok(SolveOutcome::Interrupted(_)) => Ok(MilpSolution {
                status: MilpStatus::TimeLimit,
                objective: None,
                values: None,
            }),
            Err(microlp::Error::Infeasible) => Ok(MilpSolution {
                status: MilpStatus::Infeasible,
                objective: None,
                values: None,
            }),
            Err(e) => Err(BackendError(format!("microlp failed: {e}"))),
        }
    }
}

/// Runs a closure and returns its result with the elapsed wall-clock seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mccssp_core::ilp::{Column, Row};

    /// max x + 2y, x + y <= 1.5, y binary, x in [0, 1].
    fn small() -> MatrixForm {
        MatrixForm {
            maximize: true,
            columns: vec![
                Column {
                    lower: 0.0,
                    upper: 1.0,
                    objective: 1.0,
                    integer: false,
                },
                Column {
                    lower: 0.0,
                    upper: 1.0,
                    objective: 2.0,
                    integer: true,
                },
            ],
            rows: vec![Row {
                lower: None,
                upper: Some(1.5),
                terms: vec![(0, 1.0), (1, 1.0)],
            }],
        }
    }

    #[test]
    fn both_backends_agree() {
        for name in BACKENDS {
            let mut b = backend_by_name(name).unwrap();
            let sol = b.solve(&small(), &SolveOptions::default()).unwrap();
            assert_eq!(sol.status, MilpStatus::Optimal, "{name}");
            assert!((sol.objective.unwrap() - 2.5).abs() < 1e-9, "{name}");
            let v = sol.values.unwrap();
            assert!(
                (v[0] - 0.5).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9,
                "{name}"
            );
        }
    }

    #[test]
    fn infeasible_and_empty() {
        let mut pb = small();
        pb.rows.push(Row {
            lower: Some(3.0),
            upper: None,
            terms: vec![(0, 1.0), (1, 1.0)],
        });
        for name in BACKENDS {
            let mut b = backend_by_name(name).unwrap();
            assert_eq!(
                b.solve(&pb, &SolveOptions::default()).unwrap().status,
                MilpStatus::Infeasible,
                "{name}"
            );
            let empty = b
                .solve(&MatrixForm::default(), &SolveOptions::default())
                .unwrap();
            assert_eq!(empty.values, Some(Vec::new()));
        }
        assert!(backend_by_name("cplex").is_err());
    }
}
