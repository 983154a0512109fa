//! Bayesian belief filtering.

use crate::error::{Error, Result};
use crate::pomdp::{Belief, Pomdp};

/// Smallest normalizer accepted by [`belief_update`].
pub const MIN_LIKELIHOOD: f64 = 1e-300;

/// `b'(s') ∝ O(z|s') Σ_s P(s'|s,a) b(s)`.
pub fn belief_update(model: &Pomdp, b: &Belief, a: usize, z: usize) -> Result<Belief> {
    let ns = model.num_states();
    if b.len() != ns {
        return Err(Error::Dimension(format!("belief over {} states, model has {ns}", b.len())));
    }
    if a >= model.num_actions() || z >= model.num_observations() {
        return Err(Error::Dimension(format!("action {a} / observation {z} out of range")));
    }
    let mut next = vec![0.0; ns];
    for (s, &p) in b.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for &(t, q) in model.transition(s, a) {
            next[t] += p * q;
        }
    }
    let mut total = 0.0;
    for (t, v) in next.iter_mut().enumerate() {
        if *v != 0.0 {
            *v *= model.obs_prob(t, z);
            total += *v;
        }
    }
    if !(total >= MIN_LIKELIHOOD) {
        return Err(Error::ZeroLikelihood { step: None });
    }
    next.iter_mut().for_each(|v| *v /= total);
    Ok(Belief { probs: next })
}

/// Beliefs along a trace of `(observation, action)` steps.
///
/// `b_0` is the initial distribution and `b_{i+1} = update(b_i, a_i, z_{i+1})`; the
/// first observation carries no information beyond the prior. The returned vector has
/// one belief per step (aligned with its action), or just `b_0` for an empty trace.
pub fn beliefs_from_trace(model: &Pomdp, trace: &[(usize, usize)]) -> Result<Vec<Belief>> {
    let mut out = vec![Belief::initial(model)];
    for i in 1..trace.len() {
        let a = trace[i - 1].1;
        let z = trace[i].0;
        let next = belief_update(model, &out[i - 1], a, z).map_err(|e| match e {
            Error::ZeroLikelihood { .. } => Error::ZeroLikelihood { step: Some(i) },
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}
