//! Monte Carlo simulation of observation-based policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pomdp::{Policy, Pomdp};
use crate::spec::ReachSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub state: usize,
    pub observation: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// `Σ_t γ^t φ_j(s_t, a_t)` per feature, in `Pomdp::feature_names` order.
    pub feature_totals: Vec<f64>,
    /// The run ended in an absorbing `terminal` state before the horizon.
    pub terminated: bool,
}

impl Trajectory {
    /// Discounted return under a weight vector aligned with `feature_totals`.
    pub fn weighted_return(&self, theta: &[f64]) -> f64 {
        self.feature_totals.iter().zip(theta).map(|(f, w)| f * w).sum()
    }
}

pub(crate) fn sample_row(row: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(i, p) in row {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last entry with positive mass
    row.iter().rev().find(|&&(_, p)| p > 0.0).map(|&(i, _)| i).expect("empty row")
}

fn sample_dense(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).expect("empty distribution")
}

/// Seeded rollout that stops at the horizon or on entering an absorbing terminal state.
pub fn rollout(model: &Pomdp, policy: &Policy, horizon: usize, rng_seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rollout_with(model, policy, horizon, true, &mut rng)
}

/// Rollout driven by a caller-owned generator.
///
/// With `stop_at_terminal`, reaching an absorbing `terminal` state at time `t` records
/// that step and then adds the closed-form remainder `γ^t/(1-γ) Σ_a π(s,a) φ(s,a)` to
/// the feature totals, so totals are unbiased for the infinite-horizon sum.
pub fn rollout_with(
    model: &Pomdp,
    policy: &Policy,
    horizon: usize,
    stop_at_terminal: bool,
    rng: &mut impl Rng,
) -> Trajectory {
    let features: Vec<&[f64]> = model.features.values().map(Vec::as_slice).collect();
    let na = model.num_actions();
    let gamma = model.discount;
    let mut totals = vec![0.0; features.len()];
    let mut steps = Vec::with_capacity(horizon.min(4096));
    let mut terminated = false;

    let mut s = sample_dense(&model.initial, rng);
    let mut discount = 1.0;
    for _ in 0..horizon {
        let z = sample_row(&model.observations[s], rng);
        let a = sample_dense(policy.row(z), rng);
        steps.push(Step {
            state: s,
            observation: z,
            action: a,
        });
        if stop_at_terminal && model.is_terminal(s) {
            let pi: Vec<f64> = (0..na)
                .map(|b| model.observations[s].iter().map(|&(zz, p)| p * policy.prob(zz, b)).sum())
                .collect();
            let tail = discount / (1.0 - gamma);
            for (t, phi) in totals.iter_mut().zip(&features) {
                *t += tail * (0..na).map(|b| pi[b] * phi[s * na + b]).sum::<f64>();
            }
            terminated = true;
            break;
        }
        for (t, phi) in totals.iter_mut().zip(&features) {
            *t += discount * phi[s * na + a];
        }
        discount *= gamma;
        s = sample_row(model.transition(s, a), rng);
    }
    Trajectory {
        steps,
        feature_totals: totals,
        terminated,
    }
}

/// Mean and standard deviation of the cumulative discounted reward `Σ_{i≤t} γ^i R(s_i, a_i)`
/// at each step `t < horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RewardCurve {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }
}

pub fn reward_curve(model: &Pomdp, policy: &Policy, reward: &[f64], runs: usize, horizon: usize, seed: u64) -> RewardCurve {
    let na = model.num_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; horizon];
    let mut sum_sq = vec![0.0; horizon];
    for _ in 0..runs {
        let traj = rollout_with(model, policy, horizon, false, &mut rng);
        let (mut acc, mut discount) = (0.0, 1.0);
        for (t, st) in traj.steps.iter().enumerate() {
            acc += discount * reward[st.state * na + st.action];
            discount *= model.discount;
            sum[t] += acc;
            sum_sq[t] += acc * acc;
        }
    }
    let n = runs.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|x| x / n).collect();
    let std = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect();
    RewardCurve { mean, std }
}

/// Monte Carlo estimate of a compiled specification's satisfaction probability and its
/// standard error. Runs stop on entering a target or sink; runs still undecided after
/// `max_steps` count as failures.
pub fn estimate_satisfaction(spec: &ReachSpec, policy: &Policy, runs: usize, max_steps: usize, seed: u64) -> (f64, f64) {
    let m = &spec.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..runs {
        let mut s = sample_dense(&m.initial, &mut rng);
        for _ in 0..max_steps {
            if spec.is_stopped(s) {
                break;
            }
            let z = sample_row(&m.observations[s], &mut rng);
            let a = sample_dense(policy.row(z), &mut rng);
            s = sample_row(m.transition(s, a), &mut rng);
        }
        hits += spec.targets.contains(&s) as usize;
    }
    let n = runs.max(1) as f64;
    let p = hits as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorbing_single_state_geometric_sum() {
        let mut m = Pomdp::with_sizes(1, 1, 1, 0.8);
        m.initial = vec![1.0];
        m.set_transition(0, 0, vec![(0, 1.0)]);
        m.set_observation(0, vec![(0, 1.0)]);
        m.set_feature("c", |_, _| 2.0);
        let t = rollout(&m, &Policy::uniform(1, 1), 5, 1);
        assert_eq!(t.steps.len(), 5);
        assert!(t.steps.iter().all(|st| *st == t.steps[0]));
        let expect = 2.0 * (1.0 - 0.8f64.powi(5)) / (1.0 - 0.8);
        assert!((t.feature_totals[0] - expect).abs() < 1e-12);
        assert!(!t.terminated);
    }

    #[test]
    fn terminal_state_adds_closed_form_tail() {
        let mut m = Pomdp::with_sizes(1, 1, 1, 0.8);
        m.initial = vec![1.0];
        m.make_absorbing(0);
        m.set_observation(0, vec![(0, 1.0)]);
        m.add_label(crate::pomdp::TERMINAL_LABEL, [0]);
        m.set_feature("c", |_, _| 2.0);
        let t = rollout(&m, &Policy::uniform(1, 1), 100, 1);
        assert!(t.terminated);
        assert_eq!(t.steps.len(), 1);
        assert!((t.feature_totals[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_trace() {
        let mut m = Pomdp::with_sizes(3, 2, 2, 0.9);
        m.initial = vec![0.3, 0.3, 0.4];
        for s in 0..3 {
            m.set_transition(s, 0, vec![(0, 0.5), ((s + 1) % 3, 0.5)]);
            m.set_transition(s, 1, vec![(2, 0.2), (s, 0.8)]);
            m.set_observation(s, vec![(0, 0.5), (1, 0.5)]);
        }
        let p = Policy::uniform(2, 2);
        assert_eq!(rollout(&m, &p, 50, 9), rollout(&m, &p, 50, 9));
        assert_ne!(rollout(&m, &p, 50, 9).steps, rollout(&m, &p, 50, 10).steps);
    }

    #[test]
    fn reward_curve_of_a_constant_reward() {
        let mut m = Pomdp::with_sizes(2, 1, 1, 0.5);
        m.initial = vec![0.5, 0.5];
        m.set_transition(0, 0, vec![(1, 1.0)]);
        m.set_transition(1, 0, vec![(0, 1.0)]);
        m.set_observation(0, vec![(0, 1.0)]);
        m.set_observation(1, vec![(0, 1.0)]);
        let c = reward_curve(&m, &Policy::uniform(1, 1), &[1.0, 1.0], 20, 3, 0);
        assert_eq!(c.mean, vec![1.0, 1.5, 1.75]);
        assert!(c.std.iter().all(|&s| s < 1e-12));
    }

    #[test]
    fn satisfaction_estimate_of_a_fair_coin() {
        let mut m = Pomdp::with_sizes(3, 1, 1, 0.9);
        m.initial = vec![1.0, 0.0, 0.0];
        m.set_transition(0, 0, vec![(1, 0.5), (2, 0.5)]);
        m.make_absorbing(1);
        m.make_absorbing(2);
        for s in 0..3 {
            m.set_observation(s, vec![(0, 1.0)]);
        }
        m.add_label("goal", [1]);
        let spec = crate::spec::compile_spec(&m, &"F goal >= 0.5".parse().unwrap()).unwrap();
        let (p, se) = estimate_satisfaction(&spec, &Policy::uniform(1, 1), 4000, 10, 3);
        assert!((p - 0.5).abs() < 4.0 * se, "{p} ± {se}");
    }
}
