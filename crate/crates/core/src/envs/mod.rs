//! Benchmark generators and expert policies.

mod evade;
mod maze;
mod obstacle;

pub use evade::{make_evade, make_evade_with, EVADE_THETA};
pub use maze::{make_maze, make_maze_with, MAZE_DISCOUNT, MAZE_THETA};
pub use obstacle::{make_obstacle, make_obstacle_with, OBSTACLE_THETA};

use crate::error::{Error, Result};
use crate::forward::{initial_policy, scp_forward, ScpParams, ScpResult};
use crate::pomdp::{Policy, Pomdp};
use crate::product::{product_with_memory, FscShape, ProductPomdp};
use crate::spec::{compile_spec, SpecFormula};

/// A generated benchmark: model, ground-truth weights (in feature-name order) and task.
#[derive(Debug, Clone)]
pub struct Env {
    pub name: String,
    pub model: Pomdp,
    pub theta: Vec<f64>,
    pub spec: SpecFormula,
}

impl Env {
    pub fn reward(&self) -> Vec<f64> {
        self.model
            .linear_reward(&self.model.feature_names(), &self.theta)
            .expect("generator weights match its features")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub name: String,
    pub n: usize,
    pub r: usize,
    pub slip: f64,
    pub discount: Option<f64>,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: "maze".into(),
            n: 10,
            r: 2,
            slip: 0.1,
            discount: None,
            seed: 0,
        }
    }
}

pub fn make_env(cfg: &EnvConfig) -> Result<Env> {
    if let Some(g) = cfg.discount {
        if !(0.0..1.0).contains(&g) {
            return Err(Error::InvalidModel(format!("discount {g} outside [0, 1)")));
        }
    }
    if !(0.0..1.0).contains(&cfg.slip) {
        return Err(Error::InvalidModel(format!("slip {} outside [0, 1)", cfg.slip)));
    }
    let mut env = match cfg.name.as_str() {
        "maze" => make_maze(),
        "obstacle" => make_obstacle(cfg.n, cfg.slip, cfg.seed)?,
        "evade" => make_evade(cfg.n, cfg.r, cfg.slip)?,
        "rocks" | "avoid" | "intercept" => {
            return Err(Error::InvalidModel(format!(
                "environment {:?} is not supported (its dynamics are not fully specified)",
                cfg.name
            )))
        }
        other => return Err(Error::InvalidModel(format!("unknown environment {other:?}"))),
    };
    if let Some(g) = cfg.discount {
        env.model.discount = g;
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GridMove {
    North,
    East,
    South,
    West,
}

pub(crate) const ACTIONS4: [GridMove; 4] = [GridMove::North, GridMove::East, GridMove::South, GridMove::West];

impl GridMove {
    pub fn name(self) -> &'static str {
        match self {
            GridMove::North => "north",
            GridMove::East => "east",
            GridMove::South => "south",
            GridMove::West => "west",
        }
    }

    /// `(dx, dy)` with y growing southwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            GridMove::North => (0, -1),
            GridMove::East => (1, 0),
            GridMove::South => (0, 1),
            GridMove::West => (-1, 0),
        }
    }

    pub fn perpendicular(self) -> [GridMove; 2] {
        match self {
            GridMove::North | GridMove::South => [GridMove::East, GridMove::West],
            GridMove::East | GridMove::West => [GridMove::North, GridMove::South],
        }
    }
}

/// Value iteration on the fully observed model; returns `(V, greedy action per state)`.
pub fn value_iteration(model: &Pomdp, reward: &[f64], tol: f64) -> (Vec<f64>, Vec<usize>) {
    let (ns, na, g) = (model.num_states(), model.num_actions(), model.discount);
    let q = |v: &[f64], s: usize, a: usize| {
        reward[s * na + a] + g * model.transition(s, a).iter().map(|&(t, p)| p * v[t]).sum::<f64>()
    };
    let mut v = vec![0.0; ns];
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        let span = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - diff.iter().copied().fold(f64::INFINITY, f64::min);
        let sup = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        v = next;
        // the span bounds the greedy policy's suboptimality; the sup norm pins the values
        if span <= tol && sup <= tol {
            break;
        }
    }
    let greedy = (0..ns)
        .map(|s| {
            (0..na)
                .max_by(|&a, &b| q(&v, s, a).total_cmp(&q(&v, s, b)).then(b.cmp(&a)))
                .unwrap_or(0)
        })
        .collect();
    (v, greedy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertKind {
    Mdp,
    Pomdp,
}

/// An expert policy together with the model it acts on.
#[derive(Debug, Clone)]
pub struct Expert {
    pub kind: ExpertKind,
    /// Identity-observation model (mdp) or the memory product (pomdp).
    pub model: Pomdp,
    pub policy: Policy,
    pub product: Option<ProductPomdp>,
    pub forward: Option<ScpResult>,
}

pub fn make_expert(model: &Pomdp, theta: &[f64], kind: ExpertKind, memory: usize) -> Result<Expert> {
    make_expert_with(model, theta, kind, memory, &ScpParams::default(), None)
}

pub fn make_expert_with(
    model: &Pomdp,
    theta: &[f64],
    kind: ExpertKind,
    memory: usize,
    params: &ScpParams,
    spec: Option<&SpecFormula>,
) -> Result<Expert> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidModel("expert weights must be finite".into()));
    }
    let names = model.feature_names();
    match kind {
        ExpertKind::Mdp => {
            let full = model.fully_observed();
            let reward = full.linear_reward(&names, theta)?;
            let (_, greedy) = value_iteration(&full, &reward, 1e-8);
            let policy = Policy::deterministic(full.num_actions(), &greedy);
            Ok(Expert {
                kind,
                model: full,
                policy,
                product: None,
                forward: None,
            })
        }
        ExpertKind::Pomdp => {
            let prod = product_with_memory(model, FscShape::new(memory)?);
            let pm = &prod.product;
            let reward = pm.linear_reward(&names, theta)?;
            let compiled = spec.map(|f| compile_spec(pm, f)).transpose()?;
            let init = initial_policy(pm, memory, 0);
            let res = scp_forward(pm, &reward, &init, params, compiled.as_ref())?;
            Ok(Expert {
                kind,
                model: pm.clone(),
                policy: res.policy().clone(),
                product: Some(prod),
                forward: Some(res),
            })
        }
    }
}
