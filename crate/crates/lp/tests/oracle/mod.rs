//! Dense brute-force LP oracle: enumerate every basic solution of a program
//! whose variables all have finite bounds and keep the best feasible one.

use pomirl_lp::{LinearProgram, Relation};

pub const VERTEX_TOL: f64 = 1e-9;

struct Plane {
    coeffs: Vec<f64>,
    rhs: f64,
}

fn planes(lp: &LinearProgram) -> Vec<Plane> {
    let n = lp.num_vars();
    let mut out = Vec::new();
    for row in lp.constraints() {
        let mut coeffs = vec![0.0; n];
        for &(j, c) in &row.terms {
            coeffs[j] += c;
        }
        out.push(Plane { coeffs, rhs: row.rhs });
    }
    for j in 0..n {
        let (lo, hi) = lp.bounds(j);
        assert!(lo.is_finite() && hi.is_finite(), "oracle needs a bounded box");
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        out.push(Plane { coeffs: e.clone(), rhs: lo });
        out.push(Plane { coeffs: e, rhs: hi });
    }
    out
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &k| a[i][col].abs().total_cmp(&a[k][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn feasible(lp: &LinearProgram, x: &[f64]) -> bool {
    for (j, &v) in x.iter().enumerate() {
        let (lo, hi) = lp.bounds(j);
        if v < lo - VERTEX_TOL || v > hi + VERTEX_TOL {
            return false;
        }
    }
    lp.constraints().iter().all(|r| {
        let lhs: f64 = r.terms.iter().map(|&(j, c)| c * x[j]).sum();
        match r.relation {
            Relation::Eq => (lhs - r.rhs).abs() <= VERTEX_TOL * (1.0 + r.rhs.abs()),
            Relation::Le => lhs <= r.rhs + VERTEX_TOL * (1.0 + r.rhs.abs()),
            Relation::Ge => lhs >= r.rhs - VERTEX_TOL * (1.0 + r.rhs.abs()),
        }
    })
}

/// Best objective over all feasible vertices, or `None` when infeasible.
pub fn best_vertex(lp: &LinearProgram) -> Option<(f64, Vec<f64>)> {
    let n = lp.num_vars();
    let hp = planes(lp);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = idx.iter().map(|&i| hp[i].coeffs.clone()).collect();
        let b = idx.iter().map(|&i| hp[i].rhs).collect();
        if let Some(x) = solve_dense(a, b) {
            if feasible(lp, &x) {
                let obj = lp.objective_value(&x);
                let better = match &best {
                    None => true,
                    Some((v, _)) => {
                        if lp.is_maximize() {
                            obj > *v
                        } else {
                            obj < *v
                        }
                    }
                };
                if better {
                    best = Some((obj, x));
                }
            }
        }
        // next n-combination of hp indices
        let m = hp.len();
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < m - n + k {
                idx[k] += 1;
                for t in k + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}
