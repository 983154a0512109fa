//! Maximum causal entropy IRL: alternate forward solves with gradient steps on the reward
//! weights until the learner's feature expectations match the demonstrations'.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::beliefs_from_trace;
use crate::envs::{Expert, ExpertKind};
use crate::error::{Error, Result};
use crate::flow::VisitationCounts;
use crate::forward::{scp_forward, Evaluation, ScpParams, StopReason};
use crate::pomdp::{Belief, Policy, Pomdp};
use crate::rollout::{rollout_with, sample_row};
use crate::spec::ReachSpec;

/// Linear reward `R(s,a) = θᵀ φ(s,a)` over named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub features: Vec<String>,
    pub theta: Vec<f64>,
}

impl RewardModel {
    pub fn new(features: Vec<String>, theta: Vec<f64>) -> Result<Self> {
        if features.is_empty() || features.len() != theta.len() {
            return Err(Error::Dimension(format!(
                "{} features for {} weights",
                features.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidModel("reward weights must be finite".into()));
        }
        Ok(Self { features, theta })
    }

    pub fn reward(&self, model: &Pomdp) -> Result<Vec<f64>> {
        model.linear_reward(&self.features, &self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    /// Observation seen by the learner.
    pub z: usize,
    pub a: usize,
    pub belief: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub steps: Vec<DemoStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DemoSource {
    pub expert: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemonstrationSet {
    pub trajectories: Vec<Demonstration>,
    pub source: DemoSource,
}

impl DemonstrationSet {
    /// Builds belief trajectories from raw `(z, a)` traces on the learner's model.
    pub fn from_traces(model: &Pomdp, traces: &[Vec<(usize, usize)>], source: DemoSource) -> Result<Self> {
        let trajectories = traces
            .iter()
            .enumerate()
            .map(|(k, trace)| {
                let beliefs = beliefs_from_trace(model, trace).map_err(|e| match e {
                    Error::ZeroLikelihood { step } => Error::Format(format!(
                        "trajectory {k}: zero-likelihood observation at step {}",
                        step.unwrap_or(0)
                    )),
                    other => other,
                })?;
                let steps = trace
                    .iter()
                    .zip(beliefs)
                    .map(|(&(z, a), b)| DemoStep { z, a, belief: b.probs })
                    .collect();
                Ok(Demonstration { steps })
            })
            .collect::<Result<_>>()?;
        let set = Self { trajectories, source };
        set.validate(model)?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self, model: &Pomdp) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Format("demonstration set is empty".into()));
        }
        let (ns, na, nz) = (model.num_states(), model.num_actions(), model.num_observations());
        for (k, t) in self.trajectories.iter().enumerate() {
            if t.steps.is_empty() {
                return Err(Error::Format(format!("trajectory {k} has no steps")));
            }
            for (i, st) in t.steps.iter().enumerate() {
                let at = || format!("trajectory {k} step {i}");
                if st.a >= na || st.z >= nz {
                    return Err(Error::Format(format!("{}: action {} / observation {} out of range", at(), st.a, st.z)));
                }
                if st.belief.len() != ns {
                    return Err(Error::Format(format!("{}: belief over {} states, model has {ns}", at(), st.belief.len())));
                }
                Belief::new(st.belief.clone()).map_err(|e| Error::Format(format!("{}: {e}", at())))?;
            }
        }
        Ok(())
    }
}

/// `(1/N) Σ_τ Σ_i γ^i Σ_s b_i(s) φ_j(s, α_i)` per feature, in name order.
pub fn empirical_feature_expectation(demos: &DemonstrationSet, model: &Pomdp) -> Vec<f64> {
    let na = model.num_actions();
    let mut out = vec![0.0; model.features.len()];
    for traj in &demos.trajectories {
        let mut discount = 1.0;
        for st in &traj.steps {
            for (o, phi) in out.iter_mut().zip(model.features.values()) {
                *o += discount * st.belief.iter().enumerate().map(|(s, b)| b * phi[s * na + st.a]).sum::<f64>();
            }
            discount *= model.discount;
        }
    }
    let n = demos.trajectories.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Gradient of `θ ↦ H + R^θ_σ − R̄^θ` at fixed σ: `Σ ν φ − R̄`.
pub fn grad_theta(counts: &VisitationCounts, feat_expect: &[f64], model: &Pomdp) -> Vec<f64> {
    counts
        .feature_expectation(model)
        .iter()
        .zip(feat_expect)
        .map(|(a, b)| a - b)
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `η₀/√(k+1)`; `None` picks `η₀ = 0.5/‖R̄‖∞`.
    InvSqrt(Option<f64>),
    Constant(f64),
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::InvSqrt(None)
    }
}

#[derive(Debug, Clone)]
pub struct IrlParams {
    pub schedule: StepSchedule,
    pub max_outer: usize,
    /// Stop once `‖∇θ‖∞` falls to this.
    pub tolerance: f64,
    pub forward: ScpParams,
}

impl Default for IrlParams {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::default(),
            max_outer: 30,
            tolerance: 1e-3,
            forward: ScpParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrlRecord {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub grad_norm: f64,
    pub forward_objective: f64,
    pub spec_probability: Option<f64>,
    pub forward_iters: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct IrlResult {
    /// Weights the returned policy was solved for.
    pub theta: Vec<f64>,
    pub best: Evaluation,
    pub history: Vec<IrlRecord>,
    pub converged: bool,
    /// Set when a forward solve failed and the last good iterate was returned.
    pub diagnostic: Option<String>,
}

impl IrlResult {
    pub fn policy(&self) -> &Policy {
        &self.best.policy
    }
}

/// Alternates `σ^{k+1} = forward(θ^k)` (warm-started from `σ^k`) and
/// `θ^{k+1} = θ^k − η(k) ∇θ`. `max_outer` updates mean `max_outer + 1` forward solves;
/// the result holds the last θ together with its policy.
pub fn mce_irl(
    model: &Pomdp,
    feat_expect: &[f64],
    theta0: &[f64],
    init: &Policy,
    spec: Option<&ReachSpec>,
    params: &IrlParams,
) -> Result<IrlResult> {
    let names = model.feature_names();
    if feat_expect.len() != names.len() {
        return Err(Error::Dimension(format!(
            "{} feature expectations for {} features",
            feat_expect.len(),
            names.len()
        )));
    }
    let reward_model = RewardModel::new(names.clone(), theta0.to_vec())?;
    if theta0.iter().all(|&t| t == 0.0) {
        return Err(Error::InvalidModel("initial weights must be nonzero".into()));
    }
    let eta = |k: usize| -> Result<f64> {
        match params.schedule {
            StepSchedule::Constant(c) => Ok(c),
            StepSchedule::InvSqrt(eta0) => {
                let eta0 = match eta0 {
                    Some(e) => e,
                    None => {
                        let scale = inf_norm(feat_expect);
                        if scale == 0.0 {
                            return Err(Error::InvalidModel(
                                "empirical feature expectations are all zero; pass an explicit step size".into(),
                            ));
                        }
                        0.5 / scale
                    }
                };
                Ok(eta0 / ((k + 1) as f64).sqrt())
            }
        }
    };
    eta(0)?;

    let start = Instant::now();
    let mut theta = reward_model.theta;
    let mut policy = init.clone();
    let mut last: Option<(Vec<f64>, Evaluation)> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut diagnostic = None;

    for k in 0..=params.max_outer {
        let reward = model.linear_reward(&names, &theta)?;
        let res = match scp_forward(model, &reward, &policy, &params.forward, spec) {
            Ok(r) if r.stop != StopReason::SolverFailure => r,
            Ok(r) => {
                diagnostic = Some(format!("forward solve {k} failed: {}", r.failure.unwrap_or_default()));
                break;
            }
            Err(e) => {
                diagnostic = Some(format!("forward solve {k} failed: {e}"));
                break;
            }
        };
        let grad = grad_theta(&res.best.counts, feat_expect, model);
        let grad_norm = inf_norm(&grad);
        history.push(IrlRecord {
            iteration: k,
            theta: theta.clone(),
            grad_norm,
            forward_objective: res.best.cost(),
            spec_probability: res.best.spec_probability(),
            forward_iters: res.log.len() - 1,
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::info!("irl {k}: |grad| {grad_norm:.4e} objective {:.4}", res.best.cost());
        policy = res.best.policy.clone();
        last = Some((theta.clone(), res.best));
        if grad_norm <= params.tolerance {
            converged = true;
            break;
        }
        if k < params.max_outer {
            let step = eta(k)?;
            theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= step * g);
        }
    }
    match last {
        Some((theta, best)) => Ok(IrlResult {
            theta,
            best,
            history,
            converged,
            diagnostic,
        }),
        None => Err(Error::Numerical(diagnostic.unwrap_or_else(|| "no forward solve completed".into()))),
    }
}

/// Rolls out `expert` and records what the learner, acting on `base`, would see.
///
/// Trajectories run for the full horizon: absorbing states keep contributing to the
/// discounted sums, so the horizon should make `γ^T` negligible.
pub fn generate_demos(base: &Pomdp, expert: &Expert, count: usize, horizon: usize, seed: u64) -> Result<DemonstrationSet> {
    if count == 0 || horizon == 0 {
        return Err(Error::Format("need at least one demonstration of positive length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(count);
    for _ in 0..count {
        let traj = rollout_with(&expert.model, &expert.policy, horizon, false, &mut rng);
        let trace = traj
            .steps
            .iter()
            .map(|st| match &expert.product {
                Some(p) => (p.observation_origin[st.observation].0, p.action_origin[st.action].0),
                // identity-observation expert: the learner gets its own noisy view
                None => (sample_row(&base.observations[st.state], &mut rng), st.action),
            })
            .collect();
        traces.push(trace);
    }
    let expert_name = match expert.kind {
        ExpertKind::Mdp => "mdp",
        ExpertKind::Pomdp => "pomdp",
    };
    DemonstrationSet::from_traces(
        base,
        &traces,
        DemoSource {
            expert: expert_name.into(),
            seed,
        },
    )
}

/// Smallest horizon with `γ^T ≤ tail`, at least `min`.
pub fn horizon_for(discount: f64, tail: f64, min: usize) -> usize {
    if discount <= 0.0 {
        return min.max(1);
    }
    ((tail.ln() / discount.ln()).ceil() as usize).max(min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::solve_flow_discounted;
    use crate::forward::{causal_entropy, discounted_return};
    use rand::Rng;

    fn random_model(rng: &mut ChaCha8Rng, ns: usize, na: usize, nz: usize, nf: usize) -> Pomdp {
        let mut m = Pomdp::with_sizes(ns, na, nz, 0.9);
        m.initial = vec![1.0 / ns as f64; ns];
        for s in 0..ns {
            for a in 0..na {
                let w: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.05..1.0)).collect();
                let t: f64 = w.iter().sum();
                m.set_transition(s, a, w.iter().enumerate().map(|(j, p)| (j, p / t)).collect());
            }
            let w: Vec<f64> = (0..nz).map(|_| rng.gen_range(0.05..1.0)).collect();
            let t: f64 = w.iter().sum();
            m.set_observation(s, w.iter().enumerate().map(|(j, p)| (j, p / t)).collect());
        }
        for f in 0..nf {
            let vals: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-1.0..1.0)).collect();
            m.set_feature(&format!("f{f}"), |s, a| vals[s * na + a]);
        }
        m
    }

    #[test]
    fn one_step_point_mass_demo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 2, 2, 2);
        let demos = DemonstrationSet {
            trajectories: vec![Demonstration {
                steps: vec![DemoStep {
                    z: 0,
                    a: 1,
                    belief: Belief::point(3, 2).probs,
                }],
            }],
            source: DemoSource::default(),
        };
        let fe = empirical_feature_expectation(&demos, &m);
        let want: Vec<f64> = m.features.values().map(|phi| phi[2 * 2 + 1]).collect();
        assert_eq!(fe, want);
        let mut twice = demos.clone();
        twice.trajectories.push(demos.trajectories[0].clone());
        assert_eq!(empirical_feature_expectation(&twice, &m), fe);
    }

    #[test]
    fn matched_features_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 4, 2, 2, 3);
        let c = solve_flow_discounted(&m, &Policy::uniform(2, 2)).unwrap();
        let fe = c.feature_expectation(&m);
        assert!(grad_theta(&c, &fe, &m).iter().all(|g| g.abs() < 1e-12));
        let mut bare = m.clone();
        bare.features.values_mut().for_each(|phi| phi.iter_mut().for_each(|v| *v = 0.0));
        assert!(grad_theta(&c, &[0.0; 3], &bare).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let m = random_model(&mut rng, 5, 3, 2, 3);
            let pol = Policy::perturbed_uniform(2, 3, 2.0, rng.gen());
            let counts = solve_flow_discounted(&m, &pol).unwrap();
            let fe: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let names = m.feature_names();
            let f = |th: &[f64]| {
                let r = m.linear_reward(&names, th).unwrap();
                causal_entropy(&counts) + discounted_return(&counts, &r) - th.iter().zip(&fe).map(|(a, b)| a * b).sum::<f64>()
            };
            let g = grad_theta(&counts, &fe, &m);
            for j in 0..3 {
                let h = 1e-4;
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn zero_step_keeps_theta_and_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 4, 2, 2, 2);
        let params = IrlParams {
            schedule: StepSchedule::Constant(0.0),
            max_outer: 3,
            tolerance: 0.0,
            ..IrlParams::default()
        };
        let res = mce_irl(&m, &[0.5, -0.5], &[1.0, 1.0], &Policy::uniform(2, 2), None, &params).unwrap();
        assert_eq!(res.history.len(), 4);
        assert!(res.history.iter().all(|h| h.theta == vec![1.0, 1.0]));
        assert_eq!(res.theta, vec![1.0, 1.0]);
        // later solves start at the optimum and cannot move it
        let costs: Vec<f64> = res.history.iter().map(|h| h.forward_objective).collect();
        assert!(costs.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-6), "{costs:?}");
    }

    #[test]
    fn zero_outer_iterations_is_one_forward_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 4, 2, 2, 2);
        let params = IrlParams {
            max_outer: 0,
            ..IrlParams::default()
        };
        let theta = [0.7, -0.2];
        let res = mce_irl(&m, &[0.5, -0.5], &theta, &Policy::uniform(2, 2), None, &params).unwrap();
        let r = m.linear_reward(&m.feature_names(), &theta).unwrap();
        let fwd = scp_forward(&m, &r, &Policy::uniform(2, 2), &params.forward, None).unwrap();
        assert_eq!(res.history.len(), 1);
        assert_eq!(res.policy(), fwd.policy());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_model(&mut rng, 3, 2, 2, 2);
        let p = IrlParams::default();
        let u = Policy::uniform(2, 2);
        assert!(mce_irl(&m, &[0.0, 0.0], &[1.0, 1.0], &u, None, &p).is_err());
        assert!(mce_irl(&m, &[1.0, 0.0], &[0.0, 0.0], &u, None, &p).is_err());
        assert!(mce_irl(&m, &[1.0], &[1.0, 1.0], &u, None, &p).is_err());
    }

    #[test]
    fn gradient_step_shrinks_the_feature_gap() {
        // at a fixed policy the gap moves only through the forward solve, so check that
        // one small step in θ moves the re-solved policy's features toward the target
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, 4, 2, 4, 2);
        let names = m.feature_names();
        let target_theta = [1.5, -1.0];
        let params = ScpParams::default();
        let u = Policy::uniform(4, 2);
        let solve = |th: &[f64]| {
            let r = m.linear_reward(&names, th).unwrap();
            scp_forward(&m, &r, &u, &params, None).unwrap().best.counts
        };
        let fe = solve(&target_theta).feature_expectation(&m);
        let theta = [0.2, 0.3];
        let c0 = solve(&theta);
        let g = grad_theta(&c0, &fe, &m);
        let gap0: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - 0.05 * gi).collect();
        let g1 = grad_theta(&solve(&next), &fe, &m);
        let gap1: f64 = g1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(gap1 < gap0, "{gap1} >= {gap0}");
    }

    #[test]
    fn horizon_covers_the_discount_tail() {
        assert_eq!(horizon_for(0.5, 0.25, 1), 2);
        assert!(0.99f64.powi(horizon_for(0.99, 1e-3, 100) as i32) <= 1e-3);
        assert_eq!(horizon_for(0.9, 0.5, 100), 100);
    }
}
