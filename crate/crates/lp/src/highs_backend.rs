//! HiGHS dual simplex through its C interface (built from source by `highs-sys`).

use std::ffi::{c_void, CString};
use std::os::raw::c_int;

use highs_sys as ffi;

use crate::{Basis, LinearProgram, LpBackend, LpError, LpSolution, LpStatus, Relation};

#[derive(Debug, Clone)]
pub struct HighsBackend {
    pub feasibility_tol: f64,
    pub time_limit: Option<f64>,
}

impl Default for HighsBackend {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            time_limit: None,
        }
    }
}

/// Statuses that settle a program; anything else triggers the next attempt.
const DEFINITE: [c_int; 3] = [ffi::MODEL_STATUS_OPTIMAL, ffi::MODEL_STATUS_INFEASIBLE, ffi::MODEL_STATUS_UNBOUNDED];

#[derive(Debug, Clone, Copy)]
struct Attempt {
    presolve: bool,
    strategy: c_int,
    tol_scale: f64,
}

impl Attempt {
    const DEFAULT: Attempt = Attempt {
        presolve: true,
        strategy: 1,
        tol_scale: 1.0,
    };
}

/// Owns one `Highs` instance.
struct Instance(*mut c_void);

impl Instance {
    fn new() -> Self {
        // SAFETY: Highs_create has no preconditions; the pointer is released in Drop.
        Self(unsafe { ffi::Highs_create() })
    }

    fn option_str(&mut self, key: &str, value: &str) {
        let (k, v) = (CString::new(key).unwrap(), CString::new(value).unwrap());
        // SAFETY: valid instance and NUL-terminated strings that outlive the call.
        unsafe { ffi::Highs_setStringOptionValue(self.0, k.as_ptr(), v.as_ptr()) };
    }

    fn option_int(&mut self, key: &str, value: c_int) {
        let k = CString::new(key).unwrap();
        // SAFETY: as above.
        unsafe { ffi::Highs_setIntOptionValue(self.0, k.as_ptr(), value) };
    }

    fn option_f64(&mut self, key: &str, value: f64) {
        let k = CString::new(key).unwrap();
        // SAFETY: as above.
        unsafe { ffi::Highs_setDoubleOptionValue(self.0, k.as_ptr(), value) };
    }

    fn option_bool(&mut self, key: &str, value: bool) {
        let k = CString::new(key).unwrap();
        // SAFETY: as above.
        unsafe { ffi::Highs_setBoolOptionValue(self.0, k.as_ptr(), c_int::from(value)) };
    }
}

impl Drop for Instance {
    fn drop(&mut self) {
        // SAFETY: created by Highs_create and dropped exactly once.
        unsafe { ffi::Highs_destroy(self.0) }
    }
}

fn to_int(n: usize) -> Result<c_int, LpError> {
    c_int::try_from(n).map_err(|_| LpError::InvalidProgram(format!("{n} exceeds the HiGHS index range")))
}

impl HighsBackend {
    fn run(&self, lp: &LinearProgram, warm: Option<&Basis>, attempt: &Attempt) -> Result<(c_int, Vec<f64>, Basis), LpError> {
        let (n, m) = (lp.num_vars(), lp.num_constraints());
        // column-wise copy of the rows
        let mut counts = vec![0usize; n + 1];
        for row in lp.constraints() {
            for &(j, _) in &row.terms {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let nnz = counts[n];
        let mut fill = counts.clone();
        let mut index = vec![0 as c_int; nnz];
        let mut value = vec![0.0; nnz];
        for (i, row) in lp.constraints().iter().enumerate() {
            for &(j, c) in &row.terms {
                index[fill[j]] = to_int(i)?;
                value[fill[j]] = c;
                fill[j] += 1;
            }
        }
        let start: Vec<c_int> = counts[..n].iter().map(|&c| to_int(c)).collect::<Result<_, _>>()?;
        let cost: Vec<f64> = (0..n).map(|j| lp.objective_coeff(j)).collect();
        let (col_lo, col_hi): (Vec<f64>, Vec<f64>) = (0..n).map(|j| lp.bounds(j)).unzip();
        let (row_lo, row_hi): (Vec<f64>, Vec<f64>) = lp
            .constraints()
            .iter()
            .map(|r| match r.relation {
                Relation::Eq => (r.rhs, r.rhs),
                Relation::Le => (f64::NEG_INFINITY, r.rhs),
                Relation::Ge => (r.rhs, f64::INFINITY),
            })
            .unzip();
        let sense = if lp.is_maximize() {
            ffi::OBJECTIVE_SENSE_MAXIMIZE
        } else {
            ffi::OBJECTIVE_SENSE_MINIMIZE
        };

        let mut h = Instance::new();
        h.option_bool("output_flag", false);
        h.option_int("threads", 1);
        h.option_int("random_seed", 0);
        h.option_str("solver", "simplex");
        h.option_str("presolve", if attempt.presolve && warm.is_none() { "on" } else { "off" });
        h.option_int("simplex_strategy", attempt.strategy);
        let tol = self.feasibility_tol * attempt.tol_scale;
        h.option_f64("primal_feasibility_tolerance", tol);
        h.option_f64("dual_feasibility_tolerance", tol);
        if let Some(t) = self.time_limit {
            h.option_f64("time_limit", t);
        }
        // SAFETY: every array has the length HiGHS derives from (n, m, nnz).
        let status = unsafe {
            ffi::Highs_passLp(
                h.0,
                to_int(n)?,
                to_int(m)?,
                to_int(nnz)?,
                ffi::MATRIX_FORMAT_COLUMN_WISE,
                sense,
                0.0,
                cost.as_ptr(),
                col_lo.as_ptr(),
                col_hi.as_ptr(),
                row_lo.as_ptr(),
                row_hi.as_ptr(),
                start.as_ptr(),
                index.as_ptr(),
                value.as_ptr(),
            )
        };
        if status == ffi::STATUS_ERROR {
            return Err(LpError::InvalidProgram("HiGHS rejected the program".into()));
        }
        if let Some(b) = warm.filter(|b| b.cols.len() == n && b.rows.len() == m) {
            // SAFETY: lengths checked against (n, m).
            let ok = unsafe { ffi::Highs_setBasis(h.0, b.cols.as_ptr(), b.rows.as_ptr()) };
            if ok == ffi::STATUS_ERROR {
                log::debug!("HiGHS rejected the warm-start basis");
            }
        }
        // SAFETY: model loaded above.
        if unsafe { ffi::Highs_run(h.0) } == ffi::STATUS_ERROR {
            return Err(LpError::NumericalFailure("HiGHS run failed".into()));
        }
        // SAFETY: valid instance.
        let model_status = unsafe { ffi::Highs_getModelStatus(h.0) };
        let mut values = vec![0.0; n];
        let mut basis = Basis {
            cols: vec![0; n],
            rows: vec![0; m],
        };
        if model_status == ffi::MODEL_STATUS_OPTIMAL {
            let mut col_dual = vec![0.0; n];
            let mut row_value = vec![0.0; m];
            let mut row_dual = vec![0.0; m];
            // SAFETY: buffers sized n and m as required.
            unsafe {
                ffi::Highs_getSolution(
                    h.0,
                    values.as_mut_ptr(),
                    col_dual.as_mut_ptr(),
                    row_value.as_mut_ptr(),
                    row_dual.as_mut_ptr(),
                );
                ffi::Highs_getBasis(h.0, basis.cols.as_mut_ptr(), basis.rows.as_mut_ptr());
            }
        }
        Ok((model_status, values, basis))
    }
}

impl LpBackend for HighsBackend {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        self.solve_warm(lp, None).map(|(s, _)| s)
    }

    fn solve_warm(&self, lp: &LinearProgram, warm: Option<&Basis>) -> Result<(LpSolution, Option<Basis>), LpError> {
        if lp.num_vars() == 0 {
            return crate::backend::solve_empty(lp).map(|s| (s, None));
        }
        // HiGHS occasionally stalls on badly scaled programs and reports an unknown status;
        // a cold start, a different pivoting rule or a looser tolerance usually gets through.
        let mut attempts = Vec::new();
        if warm.is_some() {
            attempts.push((warm, Attempt::DEFAULT));
        }
        attempts.extend([
            (None, Attempt::DEFAULT),
            (None, Attempt { presolve: false, ..Attempt::DEFAULT }),
            (None, Attempt { strategy: 4, ..Attempt::DEFAULT }),
            (None, Attempt { tol_scale: 100.0, ..Attempt::DEFAULT }),
        ]);
        let mut outcome = None;
        for (basis, attempt) in attempts {
            let run = self.run(lp, basis, &attempt)?;
            if DEFINITE.contains(&run.0) {
                outcome = Some(run);
                break;
            }
            log::debug!("HiGHS status {} with {attempt:?}; retrying", run.0);
            outcome.get_or_insert(run);
        }
        let (status, values, basis) = outcome.expect("at least one attempt");
        match status {
            ffi::MODEL_STATUS_OPTIMAL => Ok((
                LpSolution {
                    status: LpStatus::Optimal,
                    objective: lp.objective_value(&values),
                    values,
                },
                Some(basis),
            )),
            ffi::MODEL_STATUS_INFEASIBLE => Ok((LpSolution::infeasible(), None)),
            ffi::MODEL_STATUS_UNBOUNDED => Ok((LpSolution::unbounded(lp.is_maximize()), None)),
            other => Err(LpError::NumericalFailure(format!("HiGHS model status {other}"))),
        }
    }

    fn name(&self) -> &'static str {
        "highs"
    }
}
