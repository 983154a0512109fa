//! Finite-state controllers as memoryless policies on a product model.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::pomdp::Pomdp;

/// Memory size of a finite-state controller; the initial node is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FscShape {
    pub memory_size: usize,
}

impl FscShape {
    pub fn new(memory_size: usize) -> Result<Self> {
        if memory_size == 0 {
            return Err(Error::Dimension("memory size must be at least 1".into()));
        }
        Ok(Self { memory_size })
    }

    pub fn initial_node(&self) -> usize {
        0
    }
}

/// Product of a base model with `M` memory nodes.
///
/// Product action `(a, m)` plays `a` and moves memory to `m`; product observation
/// `(z, n)` is the base observation tagged with the current node. Absorbing base
/// states ignore the memory move, which keeps them absorbing in the product.
#[derive(Debug, Clone)]
pub struct ProductPomdp {
    pub base: Pomdp,
    pub shape: FscShape,
    pub product: Pomdp,
    pub state_origin: Vec<(usize, usize)>,
    pub action_origin: Vec<(usize, usize)>,
    pub observation_origin: Vec<(usize, usize)>,
}

impl ProductPomdp {
    /// Product state index of `(s, n)`, if reachable.
    pub fn state_index(&self, s: usize, n: usize) -> Option<usize> {
        self.state_origin.iter().position(|&p| p == (s, n))
    }

    pub fn observation_index(&self, z: usize, n: usize) -> Option<usize> {
        self.observation_origin.iter().position(|&p| p == (z, n))
    }

    #[inline]
    pub fn action_index(&self, a: usize, m: usize) -> usize {
        a * self.shape.memory_size + m
    }
}

pub fn product_with_memory(model: &Pomdp, shape: FscShape) -> ProductPomdp {
    let mm = shape.memory_size;
    let (ns, na) = (model.num_states(), model.num_actions());
    let key = |s: usize, n: usize| s * mm + n;

    // BFS over (s, n) from the initial support at node 0.
    let mut index = vec![usize::MAX; ns * mm];
    let mut state_origin = Vec::new();
    let mut queue = VecDeque::new();
    for s in model.initial_support() {
        index[key(s, 0)] = state_origin.len();
        state_origin.push((s, 0));
        queue.push_back((s, 0));
    }
    let absorbing: Vec<bool> = (0..ns).map(|s| model.is_absorbing(s)).collect();
    while let Some((s, _)) = queue.pop_front() {
        if absorbing[s] {
            continue;
        }
        for a in 0..na {
            for &(t, _) in model.transition(s, a) {
                for m in 0..mm {
                    if index[key(t, m)] == usize::MAX {
                        index[key(t, m)] = state_origin.len();
                        state_origin.push((t, m));
                        queue.push_back((t, m));
                    }
                }
            }
        }
    }

    // Only observations emitted by some reachable product state survive.
    let mut obs_index = BTreeMap::new();
    for &(s, n) in &state_origin {
        for &(z, _) in &model.observations[s] {
            obs_index.entry((z, n)).or_insert(());
        }
    }
    let observation_origin: Vec<(usize, usize)> = {
        let mut v: Vec<_> = obs_index.into_keys().collect();
        v.sort_by_key(|&(z, n)| (n, z));
        v
    };
    let obs_pos: BTreeMap<(usize, usize), usize> =
        observation_origin.iter().enumerate().map(|(i, &k)| (k, i)).collect();

    let action_origin: Vec<(usize, usize)> = (0..na * mm).map(|k| (k / mm, k % mm)).collect();
    let nps = state_origin.len();
    let mut product = Pomdp::with_sizes(nps, na * mm, observation_origin.len(), model.discount);
    product.state_names = state_origin
        .iter()
        .map(|&(s, n)| format!("{}@{n}", model.state_names[s]))
        .collect();
    product.action_names = action_origin
        .iter()
        .map(|&(a, m)| format!("{}->{m}", model.action_names[a]))
        .collect();
    product.observation_names = observation_origin
        .iter()
        .map(|&(z, n)| format!("{}@{n}", model.observation_names[z]))
        .collect();

    for (ps, &(s, n)) in state_origin.iter().enumerate() {
        if n == 0 {
            product.initial[ps] = model.initial[s];
        }
        for a in 0..na {
            for m in 0..mm {
                if absorbing[s] {
                    // absorbing base states keep their memory node, so they stay absorbing
                    product.set_transition(ps, a * mm + m, vec![(ps, 1.0)]);
                    continue;
                }
                let row = model
                    .transition(s, a)
                    .iter()
                    .map(|&(t, p)| (index[key(t, m)], p))
                    .collect();
                product.set_transition(ps, a * mm + m, row);
            }
        }
        let row = model.observations[s]
            .iter()
            .map(|&(z, p)| (obs_pos[&(z, n)], p))
            .collect();
        product.set_observation(ps, row);
    }

    for (name, set) in &model.labels {
        let lifted = state_origin
            .iter()
            .enumerate()
            .filter(|(_, (s, _))| set.contains(s))
            .map(|(ps, _)| ps);
        product.add_label(name, lifted);
    }
    // keep empty labels present so spec compilation sees them
    for name in model.labels.keys() {
        product.labels.entry(name.clone()).or_default();
    }
    for (name, values) in &model.features {
        let lifted = (0..nps * na * mm)
            .map(|k| {
                let (ps, pa) = (k / (na * mm), k % (na * mm));
                values[state_origin[ps].0 * na + pa / mm]
            })
            .collect();
        product.features.insert(name.clone(), lifted);
    }

    ProductPomdp {
        base: model.clone(),
        shape,
        product,
        state_origin,
        action_origin,
        observation_origin,
    }
}
