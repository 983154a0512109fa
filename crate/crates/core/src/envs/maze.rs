//! The 14-cell maze with two bookkeeping entry states and a start state.
//!
//! ```text
//!  s1  s2  s3  s4  s5
//!  s6      s7      s8
//!  s9      s10     s11
//!  s12     s13     s14
//! ```
//!
//! `start` moves to `entry_top` (prob. 5/11) or `entry_corridor` (6/11), which in turn
//! drop the agent uniformly into the top row or the corridors, so the agent starts
//! uniformly on s1..s11. `start` is visited once, hence it only appears with memory
//! node 0 in a product; this reproduces the 1 + 16·M product states.

use super::{Env, GridMove, ACTIONS4};
use crate::pomdp::{Pomdp, TERMINAL_LABEL};
use crate::spec::{SpecFormula, SpecKind};

pub const SLIP: f64 = 0.1;

/// Discount of the calibrated maze.
pub const MAZE_DISCOUNT: f64 = 0.98;

/// Ground-truth weights for `(bad, target, time)`. `time` is a constant per-step feature, so
/// its weight only shifts every return by `-θ_time/(1-γ)`; it is chosen so that the
/// fully observed optimum from `start` is worth 48.22 (see the tests).
pub const MAZE_THETA: [f64; 3] = [THETA_BAD, THETA_TARGET, THETA_TIME];
pub const THETA_BAD: f64 = 0.6;
pub const THETA_TARGET: f64 = 0.35;
pub const THETA_TIME: f64 = -0.661_341_739_7;

pub const START: usize = 0;
pub const ENTRY_TOP: usize = 15;
pub const ENTRY_CORRIDOR: usize = 16;

/// Model state of cell `s{i}` (1-based as in the picture).
pub const fn cell(i: usize) -> usize {
    i
}

const COORDS: [(i32, i32); 14] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (3, 0),
    (4, 0),
    (0, 1),
    (2, 1),
    (4, 1),
    (0, 2),
    (2, 2),
    (4, 2),
    (0, 3),
    (2, 3),
    (4, 3),
];

fn cell_at(x: i32, y: i32) -> Option<usize> {
    COORDS.iter().position(|&c| c == (x, y)).map(|i| i + 1)
}

pub fn make_maze() -> Env {
    make_maze_with(MAZE_DISCOUNT, MAZE_THETA.to_vec())
}

pub fn make_maze_with(discount: f64, theta: Vec<f64>) -> Env {
    let obs_names = [
        "west_north",
        "north_south",
        "north",
        "north_east",
        "east_west_upper",
        "east_west_lower",
        "target",
        "bad",
        "start",
        "entry_top",
        "entry_corridor",
    ];
    let mut m = Pomdp::with_sizes(17, 4, obs_names.len(), discount);
    m.state_names = std::iter::once("start".to_string())
        .chain((1..=14).map(|i| format!("s{i}")))
        .chain(["entry_top".to_string(), "entry_corridor".to_string()])
        .collect();
    m.action_names = ACTIONS4.iter().map(|a| a.name().to_string()).collect();
    m.observation_names = obs_names.iter().map(|s| s.to_string()).collect();
    m.initial[START] = 1.0;

    for a in 0..4 {
        m.set_transition(START, a, vec![(ENTRY_TOP, 5.0 / 11.0), (ENTRY_CORRIDOR, 6.0 / 11.0)]);
        m.set_transition(ENTRY_TOP, a, (1..=5).map(|i| (cell(i), 0.2)).collect());
        m.set_transition(ENTRY_CORRIDOR, a, (6..=11).map(|i| (cell(i), 1.0 / 6.0)).collect());
    }
    for i in 1..=14 {
        let s = cell(i);
        if (12..=14).contains(&i) {
            m.make_absorbing(s);
            continue;
        }
        let (x, y) = COORDS[i - 1];
        let target = |mv: GridMove| {
            let (dx, dy) = mv.delta();
            cell_at(x + dx, y + dy).map_or(s, cell)
        };
        for (a, mv) in ACTIONS4.iter().enumerate() {
            let mut row = vec![(target(*mv), 1.0 - SLIP)];
            for side in mv.perpendicular() {
                row.push((target(side), SLIP / 2.0));
            }
            m.set_transition(s, a, row);
        }
    }
    let obs_of = |i: usize| match i {
        1 => 0,
        2 | 4 => 1,
        3 => 2,
        5 => 3,
        6..=8 => 4,
        9..=11 => 5,
        13 => 6,
        _ => 7,
    };
    for i in 1..=14 {
        m.set_observation(cell(i), vec![(obs_of(i), 1.0)]);
    }
    m.set_observation(START, vec![(8, 1.0)]);
    m.set_observation(ENTRY_TOP, vec![(9, 1.0)]);
    m.set_observation(ENTRY_CORRIDOR, vec![(10, 1.0)]);

    m.add_label("goal", [cell(13)]);
    m.add_label("bad", [cell(12), cell(14)]);
    m.add_label(TERMINAL_LABEL, [cell(12), cell(13), cell(14)]);
    m.set_feature("time", |_, _| -1.0);
    m.set_feature("target", |s, _| if s == cell(13) { 1.0 } else { 0.0 });
    m.set_feature("bad", |s, _| if s == cell(12) || s == cell(14) { -1.0 } else { 0.0 });

    Env {
        name: "maze".into(),
        model: m,
        theta,
        spec: SpecFormula::new(SpecKind::GloballyNot("bad".into()), 0.9).expect("valid threshold"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::value_iteration;

    fn mdp_value(theta_time: f64) -> f64 {
        let env = make_maze_with(MAZE_DISCOUNT, vec![THETA_BAD, THETA_TARGET, theta_time]);
        let full = env.model.fully_observed();
        let r = full.linear_reward(&env.model.feature_names(), &env.theta).unwrap();
        value_iteration(&full, &r, 1e-12).0[START]
    }

    #[test]
    fn time_weight_calibrates_the_mdp_value() {
        // the value decreases in θ_time; bisect independently of the constant
        let (mut lo, mut hi) = (-5.0, 5.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mdp_value(mid) > 48.22 { lo = mid } else { hi = mid }
        }
        println!("theta_time = {:.10}", 0.5 * (lo + hi));
        assert!((0.5 * (lo + hi) - THETA_TIME).abs() < 1e-6);
        assert!((mdp_value(THETA_TIME) - 48.22).abs() < 1e-4);
    }

    #[test]
    fn start_spreads_uniformly_over_the_first_eleven_cells() {
        let m = make_maze().model;
        let mut d = vec![0.0; m.num_states()];
        for &(e, p) in m.transition(START, 0) {
            for &(c, q) in m.transition(e, 0) {
                d[c] += p * q;
            }
        }
        for i in 1..=11 {
            assert!((d[cell(i)] - 1.0 / 11.0).abs() < 1e-12);
        }
    }
}
