//! Sparse POMDP models, policies and beliefs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Row-sum tolerance for stochastic rows of a constructed model.
pub const ROW_TOL: f64 = 1e-9;

/// Label that marks absorbing states where an episode ends.
pub const TERMINAL_LABEL: &str = "terminal";

/// A sparse probability row: `(target index, probability)` pairs sorted by index.
pub type SparseRow = Vec<(usize, f64)>;

/// Finite POMDP with a state-only observation function.
///
/// Transitions are stored per `(state, action)` pair at index
/// `s * num_actions + a`. Features are dense over the same index so that a
/// linear reward is a single dot product per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pomdp {
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    pub observation_names: Vec<String>,
    pub discount: f64,
    pub initial: Vec<f64>,
    pub transitions: Vec<SparseRow>,
    pub observations: Vec<SparseRow>,
    pub labels: BTreeMap<String, BTreeSet<usize>>,
    pub features: BTreeMap<String, Vec<f64>>,
}

impl Pomdp {
    /// Empty model with the given sizes: no transitions, no observations, zero initial mass.
    pub fn with_sizes(num_states: usize, num_actions: usize, num_observations: usize, discount: f64) -> Self {
        Self {
            state_names: (0..num_states).map(|s| format!("s{s}")).collect(),
            action_names: (0..num_actions).map(|a| format!("a{a}")).collect(),
            observation_names: (0..num_observations).map(|z| format!("z{z}")).collect(),
            discount,
            initial: vec![0.0; num_states],
            transitions: vec![Vec::new(); num_states * num_actions],
            observations: vec![Vec::new(); num_states],
            labels: BTreeMap::new(),
            features: BTreeMap::new(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observation_names.len()
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions() + a
    }

    #[inline]
    pub fn transition(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[self.pair(s, a)]
    }

    pub fn set_transition(&mut self, s: usize, a: usize, row: SparseRow) {
        let k = self.pair(s, a);
        self.transitions[k] = normalize_row(row);
    }

    pub fn set_observation(&mut self, s: usize, row: SparseRow) {
        self.observations[s] = normalize_row(row);
    }

    /// Probability of `z` at `s`.
    pub fn obs_prob(&self, s: usize, z: usize) -> f64 {
        self.observations[s]
            .iter()
            .find(|&&(zz, _)| zz == z)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn label(&self, name: &str) -> Option<&BTreeSet<usize>> {
        self.labels.get(name)
    }

    pub fn has_label(&self, s: usize, name: &str) -> bool {
        self.labels.get(name).is_some_and(|set| set.contains(&s))
    }

    pub fn add_label(&mut self, name: &str, states: impl IntoIterator<Item = usize>) {
        self.labels.entry(name.to_string()).or_default().extend(states);
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.keys().cloned().collect()
    }

    pub fn feature(&self, name: &str) -> Option<&[f64]> {
        self.features.get(name).map(Vec::as_slice)
    }

    /// Sets a feature from a function of `(state, action)`.
    pub fn set_feature(&mut self, name: &str, f: impl Fn(usize, usize) -> f64) {
        let (ns, na) = (self.num_states(), self.num_actions());
        let values = (0..ns * na).map(|k| f(k / na, k % na)).collect();
        self.features.insert(name.to_string(), values);
    }

    /// Every action at `s` returns to `s` with probability 1.
    pub fn is_absorbing(&self, s: usize) -> bool {
        (0..self.num_actions()).all(|a| {
            let row = self.transition(s, a);
            row.len() == 1 && row[0].0 == s && (row[0].1 - 1.0).abs() <= ROW_TOL
        })
    }

    pub fn make_absorbing(&mut self, s: usize) {
        for a in 0..self.num_actions() {
            self.set_transition(s, a, vec![(s, 1.0)]);
        }
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.has_label(s, TERMINAL_LABEL) && self.is_absorbing(s)
    }

    /// Support of the initial distribution.
    pub fn initial_support(&self) -> impl Iterator<Item = usize> + '_ {
        self.initial.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, _)| s)
    }

    /// Fully observed copy: one observation per state, emitted with probability 1.
    pub fn fully_observed(&self) -> Pomdp {
        let mut m = self.clone();
        m.observation_names = self.state_names.iter().map(|n| format!("at_{n}")).collect();
        m.observations = (0..self.num_states()).map(|s| vec![(s, 1.0)]).collect();
        m
    }

    /// States reachable from the initial support under some sequence of actions, ascending.
    pub fn reachable_states(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_states()];
        let mut stack: Vec<usize> = self.initial_support().collect();
        stack.iter().for_each(|&s| seen[s] = true);
        while let Some(s) = stack.pop() {
            for a in 0..self.num_actions() {
                for &(t, _) in self.transition(s, a) {
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        (0..self.num_states()).filter(|&s| seen[s]).collect()
    }

    /// Sub-model on the ascending state list `keep`, which must be closed under transitions
    /// and carry all initial mass. Actions and observations are kept as they are.
    pub fn restrict(&self, keep: &[usize]) -> Result<Pomdp> {
        let na = self.num_actions();
        let mut index = vec![usize::MAX; self.num_states()];
        for (i, &s) in keep.iter().enumerate() {
            index[s] = i;
        }
        if (0..self.num_states()).any(|s| index[s] == usize::MAX && self.initial[s] > 0.0) {
            return Err(Error::InvalidModel("restriction drops initial mass".into()));
        }
        let mut transitions = Vec::with_capacity(keep.len() * na);
        for &s in keep {
            for a in 0..na {
                let row = self
                    .transition(s, a)
                    .iter()
                    .map(|&(t, p)| match index[t] {
                        usize::MAX => Err(Error::InvalidModel(format!("restriction is not closed: {s} -> {t}"))),
                        i => Ok((i, p)),
                    })
                    .collect::<Result<SparseRow>>()?;
                transitions.push(row);
            }
        }
        let pick = |v: &[f64]| keep.iter().flat_map(|&s| v[s * na..(s + 1) * na].iter().copied()).collect();
        Ok(Pomdp {
            state_names: keep.iter().map(|&s| self.state_names[s].clone()).collect(),
            action_names: self.action_names.clone(),
            observation_names: self.observation_names.clone(),
            discount: self.discount,
            initial: keep.iter().map(|&s| self.initial[s]).collect(),
            transitions,
            observations: keep.iter().map(|&s| self.observations[s].clone()).collect(),
            labels: self
                .labels
                .iter()
                .map(|(k, set)| (k.clone(), set.iter().filter(|&&s| index[s] != usize::MAX).map(|&s| index[s]).collect()))
                .collect(),
            features: self.features.iter().map(|(k, v)| (k.clone(), pick(v))).collect(),
        })
    }

    /// Linear reward `theta . phi(s, a)` over the given feature names.
    pub fn linear_reward(&self, names: &[String], theta: &[f64]) -> Result<Vec<f64>> {
        if names.len() != theta.len() {
            return Err(Error::Dimension(format!(
                "{} feature names but {} weights",
                names.len(),
                theta.len()
            )));
        }
        let mut reward = vec![0.0; self.num_states() * self.num_actions()];
        for (name, &w) in names.iter().zip(theta) {
            let phi = self.feature(name).ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            for (r, &v) in reward.iter_mut().zip(phi) {
                *r += w * v;
            }
        }
        Ok(reward)
    }

    /// Per-pair action distribution `pi(s, a) = sum_z O(z|s) sigma(z, a)` induced by `policy`.
    pub fn state_action_probs(&self, policy: &Policy) -> Vec<f64> {
        let na = self.num_actions();
        let mut pi = vec![0.0; self.num_states() * na];
        for (s, row) in self.observations.iter().enumerate() {
            for &(z, pz) in row {
                for a in 0..na {
                    pi[s * na + a] += pz * policy.prob(z, a);
                }
            }
        }
        pi
    }

    /// Collects every invariant violation.
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let (ns, na, nz) = (self.num_states(), self.num_actions(), self.num_observations());
        if !(0.0..1.0).contains(&self.discount) {
            issues.push(Violation::Discount(self.discount));
        }
        if self.initial.len() != ns {
            issues.push(Violation::Shape(format!("initial has {} entries for {ns} states", self.initial.len())));
        } else {
            for (s, &p) in self.initial.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    issues.push(Violation::InitialProbability { state: s, value: p });
                }
            }
            let total: f64 = self.initial.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                issues.push(Violation::InitialSum { residual: 1.0 - total });
            }
        }
        if self.transitions.len() != ns * na {
            issues.push(Violation::Shape(format!(
                "{} transition rows for {ns} states x {na} actions",
                self.transitions.len()
            )));
        } else {
            for s in 0..ns {
                for a in 0..na {
                    check_row(self.transition(s, a), ns, ROW_TOL, |kind| {
                        issues.push(Violation::Transition { state: s, action: a, kind })
                    });
                }
            }
        }
        if self.observations.len() != ns {
            issues.push(Violation::Shape(format!("{} observation rows for {ns} states", self.observations.len())));
        } else {
            for (s, row) in self.observations.iter().enumerate() {
                check_row(row, nz, ROW_TOL, |kind| issues.push(Violation::Observation { state: s, kind }));
            }
        }
        for (name, set) in &self.labels {
            if let Some(&s) = set.iter().find(|&&s| s >= ns) {
                issues.push(Violation::Label { name: name.clone(), state: s });
            }
        }
        for (name, values) in &self.features {
            if values.len() != ns * na {
                issues.push(Violation::Feature {
                    name: name.clone(),
                    detail: format!("{} values for {} pairs", values.len(), ns * na),
                });
            } else if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                issues.push(Violation::Feature {
                    name: name.clone(),
                    detail: format!("non-finite value at state {} action {}", k / na, k % na),
                });
            }
        }
        ValidationReport { violations: issues }
    }

    /// Errors with the first violation if the model is not well formed.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidModel(v.to_string())),
        }
    }
}

fn normalize_row(mut row: SparseRow) -> SparseRow {
    row.sort_by_key(|&(i, _)| i);
    row.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    row.retain(|&(_, p)| p != 0.0);
    row
}

fn check_row(row: &[(usize, f64)], len: usize, tol: f64, mut report: impl FnMut(RowIssue)) {
    for &(i, p) in row {
        if i >= len {
            report(RowIssue::Index(i));
        }
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            report(RowIssue::Probability { index: i, value: p });
        }
    }
    let total: f64 = row.iter().map(|&(_, p)| p).sum();
    if (total - 1.0).abs() > tol {
        report(RowIssue::Sum { residual: 1.0 - total });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowIssue {
    Index(usize),
    Probability { index: usize, value: f64 },
    /// `1 - sum(row)`.
    Sum { residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Discount(f64),
    Shape(String),
    InitialProbability { state: usize, value: f64 },
    InitialSum { residual: f64 },
    Transition { state: usize, action: usize, kind: RowIssue },
    Observation { state: usize, kind: RowIssue },
    Label { name: String, state: usize },
    Feature { name: String, detail: String },
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowIssue::Index(i) => write!(f, "index {i} out of range"),
            RowIssue::Probability { index, value } => write!(f, "entry {index} has probability {value}"),
            RowIssue::Sum { residual } => write!(f, "row sums to 1 - {residual:.3e}"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Discount(g) => write!(f, "discount {g} outside [0, 1)"),
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::InitialProbability { state, value } => {
                write!(f, "initial[{state}] = {value} is not a probability")
            }
            Violation::InitialSum { residual } => write!(f, "initial distribution sums to 1 - {residual:.3e}"),
            Violation::Transition { state, action, kind } => {
                write!(f, "transitions[s={state}, a={action}]: {kind}")
            }
            Violation::Observation { state, kind } => write!(f, "observation_fn[s={state}]: {kind}"),
            Violation::Label { name, state } => write!(f, "label {name:?} references state {state}"),
            Violation::Feature { name, detail } => write!(f, "feature {name:?}: {detail}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Memoryless observation-based policy, dense over `(observation, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(num_observations: usize, num_actions: usize) -> Self {
        Self {
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_observations * num_actions],
        }
    }

    /// Uniform policy with each entry scaled by an independent factor in `[1, 1 + spread)`,
    /// then renormalized. Memory nodes of a product are interchangeable under the uniform
    /// policy, which is a stationary point of the forward problem; a small seeded
    /// perturbation lets the solver break that symmetry.
    pub fn perturbed_uniform(num_observations: usize, num_actions: usize, spread: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut probs = Vec::with_capacity(num_observations * num_actions);
        for _ in 0..num_observations {
            let row: Vec<f64> = (0..num_actions).map(|_| 1.0 + spread * rng.gen::<f64>()).collect();
            let total: f64 = row.iter().sum();
            probs.extend(row.iter().map(|w| w / total));
        }
        Self { num_actions, probs }
    }

    /// Builds a policy from per-observation rows; rows must be distributions.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(rows.len() * num_actions);
        for (z, row) in rows.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::InvalidPolicy(format!("row {z} has {} actions", row.len())));
            }
            probs.extend(row);
        }
        let policy = Self { num_actions, probs };
        policy.check()?;
        Ok(policy)
    }

    pub fn from_flat(num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_actions == 0 || probs.len() % num_actions != 0 {
            return Err(Error::InvalidPolicy(format!(
                "{} entries do not split into rows of {num_actions}",
                probs.len()
            )));
        }
        let policy = Self { num_actions, probs };
        policy.check()?;
        Ok(policy)
    }

    /// Deterministic policy choosing `choice[z]` at each observation.
    pub fn deterministic(num_actions: usize, choice: &[usize]) -> Self {
        let mut probs = vec![0.0; choice.len() * num_actions];
        for (z, &a) in choice.iter().enumerate() {
            probs[z * num_actions + a] = 1.0;
        }
        Self { num_actions, probs }
    }

    fn check(&self) -> Result<()> {
        for z in 0..self.num_observations() {
            let row = self.row(z);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!("row {z} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row {z} sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn num_observations(&self) -> usize {
        if self.num_actions == 0 {
            0
        } else {
            self.probs.len() / self.num_actions
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, z: usize, a: usize) -> f64 {
        self.probs[z * self.num_actions + a]
    }

    pub fn row(&self, z: usize) -> &[f64] {
        &self.probs[z * self.num_actions..(z + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_actions)
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Errors unless the policy matches the model's observation and action counts.
    pub fn check_shape(&self, model: &Pomdp) -> Result<()> {
        if self.num_observations() != model.num_observations() || self.num_actions != model.num_actions() {
            return Err(Error::Dimension(format!(
                "policy is {}x{} but model has {} observations and {} actions",
                self.num_observations(),
                self.num_actions,
                model.num_observations(),
                model.num_actions()
            )));
        }
        Ok(())
    }
}

/// Distribution over states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidBelief("negative or non-finite entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidBelief(format!("sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn point(num_states: usize, s: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[s] = 1.0;
        Self { probs }
    }

    pub fn initial(model: &Pomdp) -> Self {
        Self {
            probs: model.initial.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbed_uniform_is_a_seeded_positive_distribution() {
        let p = Policy::perturbed_uniform(5, 4, 0.5, 7);
        assert_eq!(p, Policy::perturbed_uniform(5, 4, 0.5, 7));
        assert_ne!(p, Policy::perturbed_uniform(5, 4, 0.5, 8));
        for z in 0..5 {
            let row = p.row(z);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // factors in [1, 1.5) bound every ratio to the uniform entry
            assert!(row.iter().all(|&x| x > 0.25 / 1.5 && x < 0.25 * 1.5));
        }
    }

    pub(crate) fn two_state() -> Pomdp {
        let mut m = Pomdp::with_sizes(2, 2, 2, 0.9);
        m.initial = vec![1.0, 0.0];
        for s in 0..2 {
            m.set_transition(s, 0, vec![(s, 1.0)]);
            m.set_transition(s, 1, vec![(1 - s, 1.0)]);
            m.set_observation(s, vec![(s, 1.0)]);
        }
        m
    }

    #[test]
    fn valid_model_has_empty_report() {
        assert!(two_state().validate().is_empty());
    }

    #[test]
    fn short_transition_row_is_reported_with_residual() {
        let mut m = two_state();
        let k = m.pair(1, 0);
        m.transitions[k] = vec![(1, 0.9)];
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::Transition {
                state: 1,
                action: 0,
                kind: RowIssue::Sum { residual },
            } => assert!((residual - 0.1).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_initial_mass_names_the_state() {
        let mut m = two_state();
        m.initial = vec![1.5, -0.5];
        let report = m.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::InitialProbability { state: 1, .. })));
    }

    #[test]
    fn out_of_range_label_and_bad_observation_row() {
        let mut m = two_state();
        m.add_label("goal", [7]);
        m.observations[0] = vec![(0, 0.5), (5, 0.5)];
        let msgs: Vec<String> = m.validate().violations.iter().map(|v| v.to_string()).collect();
        assert!(msgs.iter().any(|s| s.contains("label \"goal\"")));
        assert!(msgs.iter().any(|s| s.contains("observation_fn[s=0]") && s.contains("index 5")));
    }

    #[test]
    fn policy_rows_are_checked() {
        assert!(Policy::from_rows(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).is_ok());
        assert!(Policy::from_rows(vec![vec![0.5, 0.6]]).is_err());
        assert!(Policy::from_rows(vec![vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn state_action_probs_mix_observation_rows() {
        let mut m = two_state();
        m.set_observation(0, vec![(0, 0.25), (1, 0.75)]);
        let policy = Policy::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let pi = m.state_action_probs(&policy);
        assert_eq!(&pi[0..2], &[0.25, 0.75]);
        assert_eq!(&pi[2..4], &[0.0, 1.0]);
    }
}
