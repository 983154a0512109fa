//! Exact occupancy measures of a fixed policy.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::pomdp::{Policy, Pomdp};
use crate::spec::ReachSpec;

/// Maximum absolute residual accepted from a flow solve.
pub const FLOW_RESIDUAL_TOL: f64 = 1e-8;

/// Discount used when the undiscounted specification flow is singular.
pub const SINGULAR_FALLBACK_DISCOUNT: f64 = 1.0 - 1e-6;

/// State (`mu`) and state-action (`nu`, flat `s * A + a`) visitation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationCounts {
    pub num_actions: usize,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl VisitationCounts {
    pub fn total(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// `Σ_{s,a} ν(s,a) φ_j(s,a)` for every feature of `model`, in name order.
    pub fn feature_expectation(&self, model: &Pomdp) -> Vec<f64> {
        model
            .features
            .values()
            .map(|phi| phi.iter().zip(&self.nu).map(|(f, n)| f * n).sum())
            .collect()
    }

    /// Largest violation of `μ(s) = Σ_a ν(s,a)`.
    pub fn consistency_residual(&self) -> f64 {
        self.mu
            .iter()
            .enumerate()
            .map(|(s, &m)| {
                let row: f64 = self.nu[s * self.num_actions..(s + 1) * self.num_actions].iter().sum();
                (m - row).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Undiscounted counts on a compiled specification model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecCounts {
    pub counts: VisitationCounts,
    pub probability: f64,
    /// The exact system was singular and a discount just below one was used instead.
    pub fallback: bool,
}

fn solve_sparse(n: usize, mut entries: Vec<(usize, usize, f64)>, rhs: &[f64]) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
    let mut merged: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(entries.len());
    for (r, c, v) in entries {
        match merged.last_mut() {
            Some(t) if t.row == r && t.col == c => t.val += v,
            _ => merged.push(Triplet::new(r, c, v)),
        }
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &merged)
        .map_err(|e| Error::Numerical(format!("sparse assembly: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::Numerical(format!("sparse LU: {e:?}")))?;
    let b = Col::<f64>::from_fn(n, |i| rhs[i]);
    let mut x = lu.solve(&b);

    let residual = |x: &Col<f64>| {
        let mut r: Vec<f64> = rhs.to_vec();
        for t in &merged {
            r[t.row] -= t.val * x[t.col];
        }
        r
    };
    let mut r = residual(&x);
    let mut worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if worst > FLOW_RESIDUAL_TOL && worst.is_finite() {
        // one step of iterative refinement
        let d = lu.solve(&Col::<f64>::from_fn(n, |i| r[i]));
        x += &d;
        r = residual(&x);
        worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    if !(worst <= FLOW_RESIDUAL_TOL) {
        return Err(Error::Numerical(format!("flow residual {worst:.3e}")));
    }
    Ok((0..n).map(|i| x[i]).collect())
}

fn counts_from_mu(mu: Vec<f64>, pi: &[f64], na: usize) -> VisitationCounts {
    let nu = pi.iter().enumerate().map(|(k, &p)| mu[k / na] * p).collect();
    VisitationCounts { num_actions: na, mu, nu }
}

/// Solves `μ = μ0 + γ Σ P(s|s',a) π(s',a) μ(s')` for the policy's discounted counts.
pub fn solve_flow_discounted(model: &Pomdp, policy: &Policy) -> Result<VisitationCounts> {
    policy.check_shape(model)?;
    let pi = model.state_action_probs(policy);
    let mu = discounted_mu(model, &pi, model.discount, |_| false)?;
    Ok(counts_from_mu(mu, &pi, model.num_actions()))
}

/// Like [`solve_flow_discounted`] but for an explicit per-pair action distribution.
pub fn solve_flow_for_pi(model: &Pomdp, pi: &[f64]) -> Result<VisitationCounts> {
    let mu = discounted_mu(model, pi, model.discount, |_| false)?;
    Ok(counts_from_mu(mu, pi, model.num_actions()))
}

fn discounted_mu(model: &Pomdp, pi: &[f64], gamma: f64, stopped: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
    let (ns, na) = (model.num_states(), model.num_actions());
    let mut entries = Vec::with_capacity(ns * (1 + na * 2));
    for s in 0..ns {
        entries.push((s, s, 1.0));
        if stopped(s) {
            continue;
        }
        for a in 0..na {
            let w = gamma * pi[s * na + a];
            if w == 0.0 {
                continue;
            }
            for &(t, p) in model.transition(s, a) {
                entries.push((t, s, -w * p));
            }
        }
    }
    solve_sparse(ns, entries, &model.initial)
}

/// Solves the undiscounted flow on the specification model, dropping the outflow of target
/// and sink states so they only accumulate first-entry mass.
pub fn solve_flow_spec(spec: &ReachSpec, policy: &Policy) -> Result<SpecCounts> {
    let model = &spec.model;
    policy.check_shape(model)?;
    let pi = model.state_action_probs(policy);
    solve_flow_spec_pi(spec, &pi)
}

pub fn solve_flow_spec_pi(spec: &ReachSpec, pi: &[f64]) -> Result<SpecCounts> {
    let model = &spec.model;
    let (ns, na) = (model.num_states(), model.num_actions());
    let succ = |s: usize| {
        (0..na)
            .filter(move |&a| pi[s * na + a] > 0.0)
            .flat_map(move |a| model.transition(s, a).iter().filter(|e| e.1 > 0.0).map(|e| e.0))
    };

    // transient states reachable from the initial support
    let mut reached = vec![false; ns];
    let mut stack: Vec<usize> = model.initial_support().collect();
    stack.iter().for_each(|&s| reached[s] = true);
    while let Some(s) = stack.pop() {
        if spec.is_stopped(s) {
            continue;
        }
        for t in succ(s) {
            if !reached[t] {
                reached[t] = true;
                stack.push(t);
            }
        }
    }
    // states that can reach a stopped state under the policy support
    let mut preds = vec![Vec::new(); ns];
    for s in (0..ns).filter(|&s| !spec.is_stopped(s)) {
        for t in succ(s) {
            preds[t].push(s);
        }
    }
    let mut escapes = vec![false; ns];
    let mut stack: Vec<usize> = (0..ns).filter(|&s| spec.is_stopped(s)).collect();
    stack.iter().for_each(|&s| escapes[s] = true);
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !escapes[s] {
                escapes[s] = true;
                stack.push(s);
            }
        }
    }
    let singular = (0..ns).any(|s| reached[s] && !escapes[s]);

    let mu = if singular {
        log::warn!(
            "specification flow is singular (policy keeps mass away from targets); using discount {SINGULAR_FALLBACK_DISCOUNT}"
        );
        discounted_mu(model, pi, SINGULAR_FALLBACK_DISCOUNT, |s| spec.is_stopped(s))?
    } else {
        // restrict to reachable transient states; stopped states only collect inflow
        let transient: Vec<usize> = (0..ns).filter(|&s| reached[s] && !spec.is_stopped(s)).collect();
        let mut local = vec![usize::MAX; ns];
        transient.iter().enumerate().for_each(|(i, &s)| local[s] = i);
        let mut entries = Vec::new();
        for (i, &s) in transient.iter().enumerate() {
            entries.push((i, i, 1.0));
            for a in 0..na {
                let w = pi[s * na + a];
                if w == 0.0 {
                    continue;
                }
                for &(t, p) in model.transition(s, a) {
                    if local[t] != usize::MAX {
                        entries.push((local[t], i, -w * p));
                    }
                }
            }
        }
        let rhs: Vec<f64> = transient.iter().map(|&s| model.initial[s]).collect();
        let x = solve_sparse(transient.len(), entries, &rhs)?;
        let mut mu = vec![0.0; ns];
        for (i, &s) in transient.iter().enumerate() {
            mu[s] = x[i];
        }
        for s in (0..ns).filter(|&s| spec.is_stopped(s)) {
            mu[s] = model.initial[s];
        }
        for &s in &transient {
            for a in 0..na {
                let w = mu[s] * pi[s * na + a];
                if w == 0.0 {
                    continue;
                }
                for &(t, p) in model.transition(s, a) {
                    if spec.is_stopped(t) {
                        mu[t] += w * p;
                    }
                }
            }
        }
        mu
    };
    let counts = counts_from_mu(mu, pi, na);
    let probability = crate::spec::satisfaction_probability(spec, &counts.mu);
    Ok(SpecCounts {
        counts,
        probability,
        fallback: singular,
    })
}
