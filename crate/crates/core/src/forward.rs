//! The forward problem: maximize discounted causal entropy plus expected reward over
//! observation-based policies by sequential linear programming with trust regions.

use std::time::Instant;

use pomirl_lp::{solve_lp_warm, Basis, LinearProgram, LpStatus, Relation};

use crate::error::{Error, Result};
use crate::flow::{solve_flow_discounted, solve_flow_spec, SpecCounts, VisitationCounts};
use crate::pomdp::{Policy, Pomdp};
use crate::spec::ReachSpec;

/// Hyperparameters of [`scp_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScpParams {
    /// Initial trust region `ρ > 1`; `σ` is kept in `[σ̂/ρ, σ̂ρ]`.
    pub trust_init: f64,
    /// Expansion/contraction factor `ρ₀ > 1`.
    pub trust_factor: f64,
    /// Stop once `ρ ≤ trust_limit`.
    pub trust_limit: f64,
    /// Slack penalty; `None` means `1e4 · max(1, max|R|)`.
    pub beta: Option<f64>,
    pub beta_sp: f64,
    pub max_iters: usize,
    /// Occupancy floor below which a state's entropy linearization is dropped.
    pub occupancy_floor: f64,
    /// Stop when the best realized cost has improved by at most
    /// `improvement_tol · (1 + |C|)` over the last `stall_window` iterations.
    pub improvement_tol: f64,
    pub stall_window: usize,
}

impl Default for ScpParams {
    fn default() -> Self {
        Self {
            trust_init: 2.0,
            trust_factor: 1.5,
            trust_limit: 1.0001,
            beta: None,
            beta_sp: 1e3,
            max_iters: 200,
            occupancy_floor: 1e-12,
            improvement_tol: 1e-6,
            stall_window: 10,
        }
    }
}

impl ScpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.trust_init > self.trust_limit
            && self.trust_limit > 1.0
            && self.trust_factor > 1.0
            && self.beta.map_or(true, |b| b > 0.0)
            && self.beta_sp >= 0.0
            && self.occupancy_floor > 0.0
            && self.occupancy_floor <= 1e-6
            && self.improvement_tol >= 0.0
            && self.stall_window > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Numerical(format!("invalid SCP parameters {self:?}")))
        }
    }

    pub fn beta_for(&self, reward: &[f64]) -> f64 {
        self.beta
            .unwrap_or_else(|| 1e4 * reward.iter().fold(1.0f64, |m, r| m.max(r.abs())))
    }

    /// Contract the trust region by shrinking its excess over one.
    pub fn contract(&self, rho: f64) -> f64 {
        1.0 + (rho - 1.0) / self.trust_factor
    }

    pub fn expand(&self, rho: f64) -> f64 {
        (1.0 + (rho - 1.0) * self.trust_factor).min(1e6)
    }
}

/// `Σ -ν log(ν/μ)` with `0 log 0 = 0`.
pub fn causal_entropy(counts: &VisitationCounts) -> f64 {
    let na = counts.num_actions;
    counts
        .nu
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0.0)
        .map(|(k, &n)| -n * (n / counts.mu[k / na]).ln())
        .sum()
}

/// `Σ R(s,a) ν(s,a)`.
pub fn discounted_return(counts: &VisitationCounts, reward: &[f64]) -> f64 {
    counts.nu.iter().zip(reward).map(|(n, r)| n * r).sum()
}

/// `min(0, (Pr − λ) β_sp)`.
pub fn spec_penalty(probability: f64, threshold: f64, beta_sp: f64) -> f64 {
    ((probability - threshold) * beta_sp).min(0.0)
}

/// A verified policy: its exact counts and the pieces of its realized cost.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub policy: Policy,
    pub counts: VisitationCounts,
    pub spec: Option<SpecCounts>,
    pub entropy: f64,
    pub ret: f64,
    pub penalty: f64,
}

impl Evaluation {
    pub fn cost(&self) -> f64 {
        self.entropy + self.ret + self.penalty
    }

    pub fn spec_probability(&self) -> Option<f64> {
        self.spec.as_ref().map(|s| s.probability)
    }
}

/// Spread of the seeded perturbation used to start memory-augmented solves.
pub const INIT_SPREAD: f64 = 0.5;

/// Starting policy for a model carrying `memory` controller nodes: uniform when memoryless,
/// otherwise slightly perturbed, since interchangeable nodes make the uniform policy a
/// stationary point that SCP never leaves.
pub fn initial_policy(model: &Pomdp, memory: usize, seed: u64) -> Policy {
    let (nz, na) = (model.num_observations(), model.num_actions());
    if memory <= 1 {
        Policy::uniform(nz, na)
    } else {
        Policy::perturbed_uniform(nz, na, INIT_SPREAD, seed)
    }
}

/// Solves the flow equations for `policy` and scores it.
pub fn evaluate(
    model: &Pomdp,
    reward: &[f64],
    policy: &Policy,
    spec: Option<&ReachSpec>,
    beta_sp: f64,
) -> Result<Evaluation> {
    let counts = solve_flow_discounted(model, policy)?;
    let entropy = causal_entropy(&counts);
    let ret = discounted_return(&counts, reward);
    let spec_counts = spec.map(|sp| solve_flow_spec(sp, policy)).transpose()?;
    let penalty = match (spec, &spec_counts) {
        (Some(sp), Some(sc)) => spec_penalty(sc.probability, sp.threshold, beta_sp),
        _ => 0.0,
    };
    Ok(Evaluation {
        policy: policy.clone(),
        counts,
        spec: spec_counts,
        entropy,
        ret,
        penalty,
    })
}

/// Realized cost `H + R (+ min{0, (Pr − λ) β_sp})` of a policy.
pub fn realized_cost(
    model: &Pomdp,
    reward: &[f64],
    policy: &Policy,
    spec: Option<&ReachSpec>,
    beta_sp: f64,
) -> Result<f64> {
    Ok(evaluate(model, reward, policy, spec, beta_sp)?.cost())
}

/// Column layout of the linearized program.
#[derive(Debug, Clone)]
pub struct LpLayout {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    pub mu: usize,
    pub nu: usize,
    pub sigma: usize,
    pub k_plus: usize,
    pub k_minus: usize,
    pub spec: Option<SpecLayout>,
}

#[derive(Debug, Clone)]
pub struct SpecLayout {
    pub mu: usize,
    /// First column of `ν_sp`; only non-stopped states have columns, in state order.
    pub nu: usize,
    pub k_plus: usize,
    pub k_minus: usize,
    pub slack: usize,
    pub transient: Vec<usize>,
}

impl LpLayout {
    pub fn sigma_col(&self, z: usize, a: usize) -> usize {
        self.sigma + z * self.num_actions + a
    }
}

#[derive(Debug, Clone)]
pub struct LinearizedLp {
    pub lp: LinearProgram,
    pub layout: LpLayout,
    /// States whose entropy coefficients were zeroed because `μ̂(s) ≤ ε`.
    pub degenerate_states: Vec<usize>,
}

/// Box `[σ̂/ρ, min(1, σ̂ρ)]` for every policy entry.
pub fn trust_bounds(prev: &Policy, rho: f64) -> Vec<(f64, f64)> {
    prev.as_slice().iter().map(|&p| (p / rho, (p * rho).min(1.0))).collect()
}

/// Linear program around the verified iterate `prev`.
pub fn build_linearized_lp(
    model: &Pomdp,
    reward: &[f64],
    prev: &Evaluation,
    params: &ScpParams,
    rho: f64,
    spec: Option<&ReachSpec>,
) -> Result<LinearizedLp> {
    let (ns, na, nz) = (model.num_states(), model.num_actions(), model.num_observations());
    prev.policy.check_shape(model)?;
    if reward.len() != ns * na {
        return Err(Error::Dimension(format!("reward has {} entries, expected {}", reward.len(), ns * na)));
    }
    if prev.policy.min_prob() <= 0.0 {
        return Err(Error::InvalidPolicy("linearization point must be strictly positive".into()));
    }
    let beta = params.beta_for(reward);
    let gamma = model.discount;
    let pi_hat = model.state_action_probs(&prev.policy);
    let mu_hat = &prev.counts.mu;
    let eps = params.occupancy_floor;

    let mut lp = LinearProgram::maximize();
    let mut degenerate_states = Vec::new();

    // μ(s): coefficient Σ_a ν̂/μ̂ = 1 from the entropy gradient
    let mu = lp.num_vars();
    for s in 0..ns {
        let live = mu_hat[s] > eps;
        if !live {
            degenerate_states.push(s);
        }
        lp.add_var(0.0, f64::INFINITY, if live { 1.0 } else { 0.0 });
    }
    // ν(s,a): -(log π̂ + 1) + R
    let nu = lp.num_vars();
    for s in 0..ns {
        for a in 0..na {
            let k = s * na + a;
            let ent = if mu_hat[s] > eps { -(pi_hat[k].ln() + 1.0) } else { 0.0 };
            lp.add_var(0.0, f64::INFINITY, ent + reward[k]);
        }
    }
    let sigma = lp.num_vars();
    for (lo, hi) in trust_bounds(&prev.policy, rho) {
        lp.add_var(lo, hi, 0.0);
    }
    let k_plus = lp.num_vars();
    for _ in 0..ns * na {
        lp.add_var(0.0, f64::INFINITY, -beta);
    }
    let k_minus = lp.num_vars();
    for _ in 0..ns * na {
        lp.add_var(0.0, f64::INFINITY, -beta);
    }
    if !degenerate_states.is_empty() {
        let rewarded = degenerate_states
            .iter()
            .filter(|&&s| (0..na).any(|a| reward[s * na + a] != 0.0))
            .count();
        log::debug!(
            "degenerate linearization: {} states below occupancy floor ({rewarded} with reward)",
            degenerate_states.len()
        );
    }

    // Bellman flow: μ(s) − γ Σ P(s|s',a) ν(s',a) = μ0(s)
    let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ns];
    for s in 0..ns {
        for a in 0..na {
            for &(t, p) in model.transition(s, a) {
                inflow[t].push((nu + s * na + a, p));
            }
        }
    }
    for s in 0..ns {
        let mut terms = vec![(mu + s, 1.0)];
        terms.extend(inflow[s].iter().map(|&(c, p)| (c, -gamma * p)));
        lp.add_constraint(terms, Relation::Eq, model.initial[s]);
    }
    // μ(s) = Σ_a ν(s,a)
    for s in 0..ns {
        let mut terms = vec![(mu + s, 1.0)];
        terms.extend((0..na).map(|a| (nu + s * na + a, -1.0)));
        lp.add_constraint(terms, Relation::Eq, 0.0);
    }
    // ν + k⁺ − k⁻ − μ̂ Σ_z O σ − π̂ μ = −μ̂ π̂
    let linearized = |lp: &mut LinearProgram, mu_col: usize, nu_col: usize, kp: usize, km: usize, s: usize, mhat: f64| {
        for a in 0..na {
            let k = s * na + a;
            let mut terms = vec![(nu_col + a, 1.0), (kp + a, 1.0), (km + a, -1.0), (mu_col, -pi_hat[k])];
            for &(z, pz) in &model.observations[s] {
                terms.push((sigma + z * na + a, -mhat * pz));
            }
            lp.add_constraint(terms, Relation::Eq, -mhat * pi_hat[k]);
        }
    };
    for s in 0..ns {
        linearized(&mut lp, mu + s, nu + s * na, k_plus + s * na, k_minus + s * na, s, mu_hat[s]);
    }
    // Σ_a σ(z,a) = 1
    for z in 0..nz {
        lp.add_constraint((0..na).map(|a| (sigma + z * na + a, 1.0)).collect(), Relation::Eq, 1.0);
    }

    let spec_layout = match spec {
        None => None,
        Some(sp) => Some(add_spec_block(&mut lp, model, sp, prev, &pi_hat, beta, params.beta_sp, sigma)?),
    };

    Ok(LinearizedLp {
        lp,
        layout: LpLayout {
            num_states: ns,
            num_actions: na,
            num_observations: nz,
            mu,
            nu,
            sigma,
            k_plus,
            k_minus,
            spec: spec_layout,
        },
        degenerate_states,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_spec_block(
    lp: &mut LinearProgram,
    model: &Pomdp,
    sp: &ReachSpec,
    prev: &Evaluation,
    pi_hat: &[f64],
    beta: f64,
    beta_sp: f64,
    sigma: usize,
) -> Result<SpecLayout> {
    let (ns, na) = (model.num_states(), model.num_actions());
    let sm = &sp.model;
    if sm.num_states() != ns || sm.num_actions() != na || sm.observations != model.observations {
        return Err(Error::Dimension("specification model does not match the model".into()));
    }
    let mu_hat = &prev
        .spec
        .as_ref()
        .ok_or_else(|| Error::Numerical("previous iterate lacks specification counts".into()))?
        .counts
        .mu;
    let transient: Vec<usize> = (0..ns).filter(|&s| !sp.is_stopped(s)).collect();
    let nt = transient.len();

    let mu = lp.num_vars();
    for _ in 0..ns {
        lp.add_var(0.0, f64::INFINITY, 0.0);
    }
    let nu = lp.num_vars();
    for _ in 0..nt * na {
        lp.add_var(0.0, f64::INFINITY, 0.0);
    }
    let k_plus = lp.num_vars();
    for _ in 0..nt * na {
        lp.add_var(0.0, f64::INFINITY, -beta);
    }
    let k_minus = lp.num_vars();
    for _ in 0..nt * na {
        lp.add_var(0.0, f64::INFINITY, -beta);
    }
    let slack = lp.add_var(0.0, sp.threshold, -beta_sp);

    // modified flow: μsp(s) − Σ_{s'∉T∪sinks} P(s|s',a) νsp(s',a) = μ0(s)
    let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ns];
    for (i, &s) in transient.iter().enumerate() {
        for a in 0..na {
            for &(t, p) in sm.transition(s, a) {
                inflow[t].push((nu + i * na + a, p));
            }
        }
    }
    for s in 0..ns {
        let mut terms = vec![(mu + s, 1.0)];
        terms.extend(inflow[s].iter().map(|&(c, p)| (c, -p)));
        lp.add_constraint(terms, Relation::Eq, sm.initial[s]);
    }
    for (i, &s) in transient.iter().enumerate() {
        let mut terms = vec![(mu + s, 1.0)];
        terms.extend((0..na).map(|a| (nu + i * na + a, -1.0)));
        lp.add_constraint(terms, Relation::Eq, 0.0);
        for a in 0..na {
            let k = s * na + a;
            let (c_nu, c_kp, c_km) = (nu + i * na + a, k_plus + i * na + a, k_minus + i * na + a);
            let mut terms = vec![(c_nu, 1.0), (c_kp, 1.0), (c_km, -1.0), (mu + s, -pi_hat[k])];
            for &(z, pz) in &model.observations[s] {
                terms.push((sigma + z * na + a, -mu_hat[s] * pz));
            }
            lp.add_constraint(terms, Relation::Eq, -mu_hat[s] * pi_hat[k]);
        }
    }
    // Σ_T μsp + Γ ≥ λ
    let mut terms: Vec<(usize, f64)> = sp.targets.iter().map(|&s| (mu + s, 1.0)).collect();
    terms.push((slack, 1.0));
    lp.add_constraint(terms, Relation::Ge, sp.threshold);

    Ok(SpecLayout {
        mu,
        nu,
        k_plus,
        k_minus,
        slack,
        transient,
    })
}

/// Euclidean projection of `row` onto `{x : lo ≤ x ≤ hi, Σx = 1}`.
fn project_box_simplex(row: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    let at = |t: f64| -> Vec<f64> {
        row.iter()
            .zip(bounds)
            .map(|(&x, &(lo, hi))| (x + t).clamp(lo, hi))
            .collect()
    };
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let (mut a, mut b) = (-2.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if sum(&at(mid)) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut out = at(0.5 * (a + b));
    // absorb the last rounding in the entry with the most room
    let err = 1.0 - sum(&out);
    if let Some(j) = (0..out.len()).max_by(|&i, &j| {
        let room = |k: usize| if err > 0.0 { bounds[k].1 - out[k] } else { out[k] - bounds[k].0 };
        room(i).total_cmp(&room(j))
    }) {
        out[j] = (out[j] + err).clamp(bounds[j].0, bounds[j].1);
    }
    out
}

/// Policy read from an LP solution, projected back onto the trust box and the simplex.
pub fn extract_policy(values: &[f64], layout: &LpLayout, prev: &Policy, rho: f64) -> Result<Policy> {
    let na = layout.num_actions;
    let bounds = trust_bounds(prev, rho);
    let mut probs = Vec::with_capacity(layout.num_observations * na);
    for z in 0..layout.num_observations {
        let raw = &values[layout.sigma_col(z, 0)..layout.sigma_col(z, 0) + na];
        probs.extend(project_box_simplex(raw, &bounds[z * na..(z + 1) * na]));
    }
    // normalize exactly; the projection already sums to one up to rounding
    for row in probs.chunks_mut(na) {
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= t);
    }
    Policy::from_flat(na, probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rho: f64,
    pub linearized_objective: f64,
    pub realized_cost: f64,
    pub spec_probability: Option<f64>,
    pub accepted: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TrustRegion,
    Converged,
    MaxIterations,
    /// The LP kept failing; the best verified iterate is returned.
    SolverFailure,
}

#[derive(Debug, Clone)]
pub struct ScpResult {
    pub best: Evaluation,
    pub log: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Last LP failure, if any. Isolated failures shrink the trust region and do not stop
    /// the run.
    pub failure: Option<String>,
}

impl ScpResult {
    pub fn policy(&self) -> &Policy {
        &self.best.policy
    }

    pub fn cost(&self) -> f64 {
        self.best.cost()
    }
}

/// Sequential linear programming with trust regions and a verification step.
///
/// Every candidate is re-evaluated with exact flow solves; it replaces the incumbent only
/// if its realized cost does not decrease, so the accepted costs are monotone.
pub fn scp_forward(
    model: &Pomdp,
    reward: &[f64],
    init: &Policy,
    params: &ScpParams,
    spec: Option<&ReachSpec>,
) -> Result<ScpResult> {
    params.validate()?;
    init.check_shape(model)?;
    if init.min_prob() <= 0.0 {
        return Err(Error::InvalidPolicy("initial policy must be strictly positive".into()));
    }
    if reward.len() != model.num_states() * model.num_actions() {
        return Err(Error::Dimension(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            model.num_states() * model.num_actions()
        )));
    }
    // unreachable states carry no flow; dropping them shrinks every linearized program
    let keep = model.reachable_states();
    if keep.len() < model.num_states() {
        let na = model.num_actions();
        let sub = model.restrict(&keep)?;
        let sub_reward: Vec<f64> = keep.iter().flat_map(|&s| reward[s * na..(s + 1) * na].iter().copied()).collect();
        let sub_spec = spec.map(|sp| sp.restrict(&keep)).transpose()?;
        let mut res = scp_on_reachable(&sub, &sub_reward, init, params, sub_spec.as_ref())?;
        res.best = evaluate(model, reward, &res.best.policy, spec, params.beta_sp)?;
        return Ok(res);
    }
    scp_on_reachable(model, reward, init, params, spec)
}

const MAX_CONSECUTIVE_FAILURES: usize = 3;

fn scp_on_reachable(
    model: &Pomdp,
    reward: &[f64],
    init: &Policy,
    params: &ScpParams,
    spec: Option<&ReachSpec>,
) -> Result<ScpResult> {
    let start = Instant::now();
    let mut best = evaluate(model, reward, init, spec, params.beta_sp)?;
    let mut rho = params.trust_init;
    let mut log = vec![IterationRecord {
        iteration: 0,
        rho,
        linearized_objective: f64::NAN,
        realized_cost: best.cost(),
        spec_probability: best.spec_probability(),
        accepted: true,
        wall_time: start.elapsed().as_secs_f64(),
    }];
    let mut stop = StopReason::MaxIterations;
    let mut failure = None;
    // consecutive programs share their sparsity pattern, so the last basis is a good start
    let mut basis: Option<Basis> = None;
    let mut failures = 0;
    let mut best_costs = vec![best.cost()];

    for it in 1..=params.max_iters {
        let mut step = || -> Result<(f64, Evaluation)> {
            let lin = build_linearized_lp(model, reward, &best, params, rho, spec)?;
            let (sol, next_basis) = solve_lp_warm(&lin.lp, basis.as_ref())?;
            if next_basis.is_some() {
                basis = next_basis;
            }
            if sol.status != LpStatus::Optimal {
                return Err(Error::Numerical(format!("linearized program is {:?}", sol.status)));
            }
            let candidate = extract_policy(&sol.values, &lin.layout, &best.policy, rho)?;
            Ok((sol.objective, evaluate(model, reward, &candidate, spec, params.beta_sp)?))
        };
        let step = step();
        let (lin_obj, cand) = match step {
            Ok(v) => {
                failures = 0;
                v
            }
            Err(e) => {
                // a program the solver cannot settle is treated like a rejected step: the
                // smaller trust region is better conditioned
                log::warn!("SCP iteration {it} failed: {e}");
                failure = Some(e.to_string());
                failures += 1;
                basis = None;
                rho = params.contract(rho);
                if failures >= MAX_CONSECUTIVE_FAILURES || rho <= params.trust_limit {
                    stop = StopReason::SolverFailure;
                    break;
                }
                best_costs.push(best.cost());
                continue;
            }
        };
        let gain = cand.cost() - best.cost();
        let accepted = gain >= 0.0;
        log.push(IterationRecord {
            iteration: it,
            rho,
            linearized_objective: lin_obj,
            realized_cost: cand.cost(),
            spec_probability: cand.spec_probability(),
            accepted,
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::debug!("iter {it}: rho {rho:.6} cost {:.9} gain {gain:.3e}", cand.cost());
        if accepted {
            best = cand;
            rho = params.expand(rho);
        } else {
            rho = params.contract(rho);
            if rho <= params.trust_limit {
                stop = StopReason::TrustRegion;
                break;
            }
        }
        best_costs.push(best.cost());
        if it >= params.stall_window {
            let progress = best.cost() - best_costs[it - params.stall_window];
            if progress <= params.improvement_tol * (1.0 + best.cost().abs()) {
                stop = StopReason::Converged;
                break;
            }
        }
    }
    Ok(ScpResult {
        best,
        log,
        stop,
        failure,
    })
}
