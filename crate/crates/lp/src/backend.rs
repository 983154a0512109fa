use std::time::Duration;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::{Basis, LinearProgram, LpError, LpSolution, LpStatus, Relation};

/// Seam for swapping the LP engine behind [`crate::solve_lp_with`].
///
/// Implementations return raw answers; feasibility of optimal points is
/// re-checked by the caller.
pub trait LpBackend: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, LpError>;

    /// Solve starting from a basis of an earlier program with the same shape. Backends
    /// without warm starts ignore the hint and return no basis.
    fn solve_warm(&self, lp: &LinearProgram, _warm: Option<&Basis>) -> Result<(LpSolution, Option<Basis>), LpError> {
        self.solve(lp).map(|s| (s, None))
    }

    fn name(&self) -> &'static str;
}

/// Bounded-variable revised simplex (sparse LU, dual/primal phases).
#[derive(Debug, Clone, Default)]
pub struct SimplexBackend {
    pub time_limit: Option<Duration>,
}

impl SimplexBackend {
    pub fn with_time_limit(limit: Duration) -> Self {
        Self {
            time_limit: Some(limit),
        }
    }
}

/// Rows without terms decide feasibility on their own.
pub(crate) fn empty_rows_feasible(lp: &LinearProgram) -> bool {
    lp.constraints().iter().filter(|r| r.terms.is_empty()).all(|row| match row.relation {
        Relation::Eq => row.rhs.abs() <= crate::FEASIBILITY_TOL,
        Relation::Le => row.rhs >= -crate::FEASIBILITY_TOL,
        Relation::Ge => row.rhs <= crate::FEASIBILITY_TOL,
    })
}

/// A program without variables: feasible iff all its (empty) rows are.
pub(crate) fn solve_empty(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    if empty_rows_feasible(lp) {
        Ok(LpSolution {
            status: LpStatus::Optimal,
            values: Vec::new(),
            objective: 0.0,
        })
    } else {
        Ok(LpSolution::infeasible())
    }
}

impl LpBackend for SimplexBackend {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        if !empty_rows_feasible(lp) {
            return Ok(LpSolution::infeasible());
        }
        let direction = if lp.is_maximize() {
            OptimizationDirection::Maximize
        } else {
            OptimizationDirection::Minimize
        };
        let mut problem = Problem::new(direction);
        if let Some(limit) = self.time_limit {
            problem.set_time_limit(limit);
        }
        let vars: Vec<_> = (0..lp.num_vars())
            .map(|j| problem.add_var(lp.objective_coeff(j), lp.bounds(j)))
            .collect();
        for row in lp.constraints() {
            if row.terms.is_empty() {
                continue;
            }
            let op = match row.relation {
                Relation::Eq => ComparisonOp::Eq,
                Relation::Le => ComparisonOp::Le,
                Relation::Ge => ComparisonOp::Ge,
            };
            let expr: Vec<_> = row.terms.iter().map(|&(j, c)| (vars[j], c)).collect();
            problem.add_constraint(expr.as_slice(), op, row.rhs);
        }
        match problem.solve() {
            Ok(outcome) => match outcome.into_solution() {
                Ok(solution) => {
                    let values: Vec<f64> = vars.iter().map(|&v| solution.var_value_raw(v)).collect();
                    Ok(LpSolution {
                        status: LpStatus::Optimal,
                        objective: solution.objective(),
                        values,
                    })
                }
                Err(interrupted) => Err(LpError::NumericalFailure(format!(
                    "simplex stopped early: {:?}",
                    interrupted.termination_reason()
                ))),
            },
            Err(microlp::Error::Infeasible) => Ok(LpSolution::infeasible()),
            Err(microlp::Error::Unbounded) => Ok(LpSolution::unbounded(lp.is_maximize())),
            Err(e) => Err(LpError::NumericalFailure(e.to_string())),
        }
    }

    fn name(&self) -> &'static str {
        "bounded-simplex"
    }
}
