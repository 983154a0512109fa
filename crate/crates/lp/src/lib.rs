//! Sparse linear programs and the solver seam used by the forward solver.
//!
//! A [`LinearProgram`] is a plain container: bounded variables, a sparse
//! objective and sparse rows with `=`, `<=` or `>=` relations. Solving goes
//! through an [`LpBackend`]; the default backend is a bundled bounded-variable
//! revised simplex. Every optimal answer is re-checked against the original
//! rows before it is handed back, so a backend that drifts numerically surfaces
//! as [`LpError::NumericalFailure`] instead of a silently infeasible point.

mod backend;
mod format;
#[cfg(feature = "highs")]
mod highs_backend;

pub use backend::{LpBackend, SimplexBackend};
#[cfg(feature = "highs")]
pub use highs_backend::HighsBackend;

use thiserror::Error;

/// Absolute feasibility tolerance applied to returned optimal points.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    InvalidProgram(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * values[j]).sum()
    }

    /// Amount by which `values` violates this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.relation {
            Relation::Eq => (lhs - self.rhs).abs(),
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Vec<f64>,
    names: Vec<Option<String>>,
    maximize: bool,
    constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(maximize: bool) -> Self {
        Self {
            maximize,
            ..Self::default()
        }
    }

    pub fn maximize() -> Self {
        Self::new(true)
    }

    pub fn minimize() -> Self {
        Self::new(false)
    }

    /// Adds a variable with bounds `[lo, hi]` and objective coefficient `obj`.
    /// `lo` may be `-inf` and `hi` may be `+inf`.
    pub fn add_var(&mut self, lo: f64, hi: f64, obj: f64) -> usize {
        self.lower.push(lo);
        self.upper.push(hi);
        self.objective.push(obj);
        self.names.push(None);
        self.lower.len() - 1
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, lo: f64, hi: f64, obj: f64) -> usize {
        let j = self.add_var(lo, hi, obj);
        self.names[j] = Some(name.into());
        j
    }

    /// Adds a row; duplicate variable entries are merged.
    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        let mut terms = terms;
        terms.sort_by_key(|&(j, _)| j);
        terms.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        terms.retain(|&(_, c)| c != 0.0);
        self.constraints.push(Constraint {
            terms,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_maximize(&self) -> bool {
        self.maximize
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn objective_coeff(&self, var: usize) -> f64 {
        self.objective[var]
    }

    pub fn var_name(&self, var: usize) -> Option<&str> {
        self.names[var].as_deref()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Checks coefficients are finite, indices are in range and `lo <= hi`.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::InvalidProgram(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
            if lo > hi {
                return Err(LpError::InvalidProgram(format!("variable {j} has lo {lo} > hi {hi}")));
            }
            if !self.objective[j].is_finite() {
                return Err(LpError::InvalidProgram(format!("objective coefficient of {j} is not finite")));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::InvalidProgram(format!("row {i} has non-finite rhs")));
            }
            for &(j, c) in &row.terms {
                if j >= n {
                    return Err(LpError::InvalidProgram(format!("row {i} references variable {j} of {n}")));
                }
                if !c.is_finite() {
                    return Err(LpError::InvalidProgram(format!("row {i} has non-finite coefficient on {j}")));
                }
            }
        }
        Ok(())
    }

    /// Largest absolute bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds = (0..self.num_vars()).map(|j| {
            let x = values[j];
            (self.lower[j] - x).max(x - self.upper[j]).max(0.0)
        });
        let rows = self.constraints.iter().map(|r| r.violation(values));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    /// Writes the program in CPLEX LP text format.
    pub fn write_lp_format<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        format::write_cplex_lp(self, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Per-variable values; empty unless `status` is `Optimal`.
    pub values: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    pub fn infeasible() -> Self {
        Self {
            status: LpStatus::Infeasible,
            values: Vec::new(),
            objective: f64::NAN,
        }
    }

    pub fn unbounded(maximize: bool) -> Self {
        Self {
            status: LpStatus::Unbounded,
            values: Vec::new(),
            objective: if maximize { f64::INFINITY } else { f64::NEG_INFINITY },
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Simplex basis status codes per column and row, reusable as a warm start for a
/// program with the same number of columns and rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub cols: Vec<i32>,
    pub rows: Vec<i32>,
}

/// Solves `lp` with the default backend (HiGHS when the `highs` feature is on, the
/// pure-Rust simplex otherwise).
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_warm(lp, None).map(|(s, _)| s)
}

/// The bundled simplex is dense-ish and far too slow beyond this size to be a useful fallback.
#[cfg(feature = "highs")]
const FALLBACK_MAX_VARS: usize = 2_000;

/// Like [`solve_lp`], starting from `warm` when the backend supports it. If the default
/// backend fails numerically the pure-Rust simplex gets a try on small programs before the error is
/// reported.
pub fn solve_lp_warm(lp: &LinearProgram, warm: Option<&Basis>) -> Result<(LpSolution, Option<Basis>), LpError> {
    #[cfg(feature = "highs")]
    {
        match solve_warm_with(&HighsBackend::default(), lp, warm) {
            Err(LpError::NumericalFailure(msg)) if lp.num_vars() <= FALLBACK_MAX_VARS => {
                log::debug!("HiGHS failed ({msg}); retrying with the bundled simplex");
                solve_warm_with(&SimplexBackend::default(), lp, None)
            }
            other => other,
        }
    }
    #[cfg(not(feature = "highs"))]
    solve_warm_with(&SimplexBackend::default(), lp, warm)
}

/// Solves `lp` with an arbitrary backend and verifies the returned point.
pub fn solve_lp_with<B: LpBackend + ?Sized>(backend: &B, lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_warm_with(backend, lp, None).map(|(s, _)| s)
}

pub fn solve_warm_with<B: LpBackend + ?Sized>(
    backend: &B,
    lp: &LinearProgram,
    warm: Option<&Basis>,
) -> Result<(LpSolution, Option<Basis>), LpError> {
    lp.validate()?;
    let (mut sol, basis) = backend.solve_warm(lp, warm)?;
    if sol.is_optimal() {
        if sol.values.len() != lp.num_vars() {
            return Err(LpError::NumericalFailure(format!(
                "backend returned {} values for {} variables",
                sol.values.len(),
                lp.num_vars()
            )));
        }
        // Snap bound drift left by the backend before measuring rows.
        for (j, x) in sol.values.iter_mut().enumerate() {
            let (lo, hi) = lp.bounds(j);
            if *x < lo && lo - *x <= FEASIBILITY_TOL {
                *x = lo;
            } else if *x > hi && *x - hi <= FEASIBILITY_TOL {
                *x = hi;
            }
        }
        let worst = scaled_violation(lp, &sol.values);
        if worst > FEASIBILITY_TOL {
            return Err(LpError::NumericalFailure(format!(
                "optimal point violates constraints by {worst:.3e}"
            )));
        }
        sol.objective = lp.objective_value(&sol.values);
    }
    Ok((sol, basis))
}

/// Row violations are measured relative to the row's magnitude so that rows
/// with large coefficients (penalty columns, long flow rows) are judged on the
/// same footing as unit rows.
fn scaled_violation(lp: &LinearProgram, values: &[f64]) -> f64 {
    let bounds = (0..lp.num_vars()).map(|j| {
        let (lo, hi) = lp.bounds(j);
        let x = values[j];
        (lo - x).max(x - hi).max(0.0)
    });
    let rows = lp.constraints().iter().map(|r| {
        let scale = 1.0 + r.rhs.abs() + r.terms.iter().map(|&(j, c)| (c * values[j]).abs()).fold(0.0, f64::max);
        r.violation(values) / scale
    });
    bounds.chain(rows).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bounded_variable() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(0.0, f64::INFINITY, 1.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Le, 3.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.values[x] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(0.0, f64::INFINITY, 1.0);
        let y = lp.add_var(0.0, f64::INFINITY, 1.0);
        lp.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn open_ray_is_unbounded() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(0.0, f64::INFINITY, 1.0);
        let y = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
        lp.add_constraint(vec![(x, 1.0), (y, -1.0)], Relation::Eq, 0.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_minimization() {
        // min |x - 2| via x - 2 <= t, 2 - x <= t
        let mut lp = LinearProgram::minimize();
        let x = lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
        let t = lp.add_var(0.0, f64::INFINITY, 1.0);
        lp.add_constraint(vec![(x, 1.0), (t, -1.0)], Relation::Le, 2.0);
        lp.add_constraint(vec![(x, -1.0), (t, -1.0)], Relation::Le, -2.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Ge, -5.0);
        let sol = solve_lp(&lp).unwrap();
        assert!(sol.is_optimal());
        assert!(sol.objective.abs() < 1e-9);
        assert!((sol.values[x] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_terms_are_merged() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(0.0, 10.0, 1.0);
        let row = lp.add_constraint(vec![(x, 1.0), (x, 1.0)], Relation::Le, 4.0);
        assert_eq!(lp.constraints()[row].terms, vec![(x, 2.0)]);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.values[x] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_programs_are_rejected() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(1.0, 0.0, 1.0);
        lp.add_constraint(vec![(x, 1.0)], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InvalidProgram(_))));

        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(0.0, 1.0, f64::NAN);
        lp.add_constraint(vec![(x, 1.0)], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::InvalidProgram(_))));
    }

    #[test]
    fn fixed_variables() {
        let mut lp = LinearProgram::maximize();
        let x = lp.add_var(0.5, 0.5, 1.0);
        let y = lp.add_var(0.0, 1.0, 1.0);
        lp.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.2);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.values[x] - 0.5).abs() < 1e-12);
        assert!((sol.values[y] - 0.7).abs() < 1e-9);
    }
}
