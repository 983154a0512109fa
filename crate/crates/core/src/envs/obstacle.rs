//! `Obstacle[n]`: find the exit of an n×n grid without running into five hidden obstacles.
//!
//! The agent starts on a random free cell of the left column, the exit is the bottom-right
//! corner. Obstacles are absorbing traps. The agent only senses its immediate
//! neighbourhood: whether an obstacle is adjacent, or whether it stands on the exit.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, GridMove, ACTIONS4};
use crate::error::{Error, Result};
use crate::pomdp::{Pomdp, TERMINAL_LABEL};
use crate::spec::{SpecFormula, SpecKind};

pub const NUM_OBSTACLES: usize = 5;
pub const OBSTACLE_DISCOUNT: f64 = 0.95;

/// Ground-truth weights for `(collision, exit, step)`; see the calibration test.
pub const OBSTACLE_THETA: [f64; 3] = [THETA_COLLISION, THETA_EXIT, THETA_STEP];
pub const THETA_COLLISION: f64 = 10.0;
pub const THETA_EXIT: f64 = 4.408_322_784_137_46;
pub const THETA_STEP: f64 = 1.0;

const OBS_START: usize = 0;
const OBS_NOTHING: usize = 1;
const OBS_NEAR: usize = 2;
const OBS_OBSTACLE: usize = 3;
const OBS_EXIT: usize = 4;

pub fn make_obstacle(n: usize, slip: f64, seed: u64) -> Result<Env> {
    make_obstacle_with(n, slip, seed, OBSTACLE_THETA.to_vec())
}

pub fn make_obstacle_with(n: usize, slip: f64, seed: u64, theta: Vec<f64>) -> Result<Env> {
    if n < 5 {
        return Err(Error::InvalidModel(format!("obstacle grid needs n >= 5, got {n}")));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(Error::InvalidModel(format!("slip {slip} outside [0, 1)")));
    }
    let cell = |x: usize, y: usize| 1 + y * n + x;
    let exit = (n - 1, n - 1);
    let obstacles = place_obstacles(n, exit, seed);
    let is_obstacle = |x: usize, y: usize| obstacles.contains(&(x, y));

    let mut m = Pomdp::with_sizes(n * n + 1, 4, 5, OBSTACLE_DISCOUNT);
    m.state_names = std::iter::once("start".to_string())
        .chain((0..n * n).map(|i| format!("c{}_{}", i % n, i / n)))
        .collect();
    m.action_names = ACTIONS4.iter().map(|a| a.name().to_string()).collect();
    m.observation_names = ["start", "nothing", "near_obstacle", "obstacle", "exit"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    m.initial[0] = 1.0;

    let starts: Vec<usize> = (0..n).filter(|&y| !is_obstacle(0, y)).map(|y| cell(0, y)).collect();
    let p = 1.0 / starts.len() as f64;
    for a in 0..4 {
        m.set_transition(0, a, starts.iter().map(|&s| (s, p)).collect());
    }
    m.set_observation(0, vec![(OBS_START, 1.0)]);

    let step = |x: usize, y: usize, mv: GridMove| {
        let (dx, dy) = mv.delta();
        let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
        if nx < 0 || ny < 0 || nx >= n as i64 || ny >= n as i64 {
            cell(x, y)
        } else {
            cell(nx as usize, ny as usize)
        }
    };
    for y in 0..n {
        for x in 0..n {
            let s = cell(x, y);
            if is_obstacle(x, y) || (x, y) == exit {
                m.make_absorbing(s);
            } else {
                for (a, mv) in ACTIONS4.iter().enumerate() {
                    let mut row = vec![(step(x, y, *mv), 1.0 - slip)];
                    if slip > 0.0 {
                        for side in mv.perpendicular() {
                            row.push((step(x, y, side), slip / 2.0));
                        }
                    }
                    m.set_transition(s, a, row);
                }
            }
            let near = ACTIONS4.iter().any(|mv| {
                let t = step(x, y, *mv);
                t != s && obstacles.iter().any(|&(ox, oy)| cell(ox, oy) == t)
            });
            let z = if is_obstacle(x, y) {
                OBS_OBSTACLE
            } else if (x, y) == exit {
                OBS_EXIT
            } else if near {
                OBS_NEAR
            } else {
                OBS_NOTHING
            };
            m.set_observation(s, vec![(z, 1.0)]);
        }
    }

    let obstacle_states: Vec<usize> = obstacles.iter().map(|&(x, y)| cell(x, y)).collect();
    let exit_state = cell(exit.0, exit.1);
    m.add_label("exit", [exit_state]);
    m.add_label("obstacle", obstacle_states.iter().copied());
    m.add_label(TERMINAL_LABEL, obstacle_states.iter().copied().chain([exit_state]));
    m.set_feature("collision", |s, _| if obstacle_states.contains(&s) { -1.0 } else { 0.0 });
    m.set_feature("exit", |s, _| if s == exit_state { 1.0 } else { 0.0 });
    m.set_feature("step", |s, _| {
        if s == exit_state || obstacle_states.contains(&s) {
            0.0
        } else {
            -1.0
        }
    });

    let spec = SpecFormula::new(SpecKind::NotUntil("obstacle".into(), "exit".into()), 0.9)?;
    Ok(Env {
        name: format!("obstacle[{n}]"),
        model: m,
        theta,
        spec,
    })
}

/// Seeded obstacle cells, avoiding the start column and the exit, resampled until every
/// free cell can still reach the exit.
fn place_obstacles(n: usize, exit: (usize, usize), seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut obstacles = Vec::with_capacity(NUM_OBSTACLES);
        while obstacles.len() < NUM_OBSTACLES {
            let c = (rng.gen_range(1..n), rng.gen_range(0..n));
            if c != exit && !obstacles.contains(&c) {
                obstacles.push(c);
            }
        }
        obstacles.sort_unstable();
        if exit_reachable_from_all(n, exit, &obstacles) {
            return obstacles;
        }
    }
}

fn exit_reachable_from_all(n: usize, exit: (usize, usize), obstacles: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::from([exit]);
    seen[exit.1 * n + exit.0] = true;
    while let Some((x, y)) = queue.pop_front() {
        for mv in ACTIONS4 {
            let (dx, dy) = mv.delta();
            let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
            if nx < 0 || ny < 0 || nx >= n as i64 || ny >= n as i64 {
                continue;
            }
            let c = (nx as usize, ny as usize);
            if !seen[c.1 * n + c.0] && !obstacles.contains(&c) {
                seen[c.1 * n + c.0] = true;
                queue.push_back(c);
            }
        }
    }
    (0..n * n).all(|i| seen[i] || obstacles.contains(&(i % n, i / n)))
}
