mod oracle;

use pomirl_lp::{solve_lp, solve_lp_with, LinearProgram, LpStatus, Relation, SimplexBackend, FEASIBILITY_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..=8);
    let m = if n >= 7 { rng.gen_range(1..=3) } else { rng.gen_range(1..=5) };
    let mut lp = LinearProgram::new(rng.gen_bool(0.5));
    for _ in 0..n {
        let lo = if rng.gen_bool(0.7) { 0.0 } else { -f64::from(rng.gen_range(1..=3i32)) };
        let hi = f64::from(rng.gen_range(1..=6i32));
        lp.add_var(lo, hi, f64::from(rng.gen_range(-5..=5i32)));
    }
    for _ in 0..m {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.7) {
                terms.push((j, f64::from(rng.gen_range(-4..=4i32))));
            }
        }
        let relation = match rng.gen_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Le,
            _ => Relation::Ge,
        };
        lp.add_constraint(terms, relation, f64::from(rng.gen_range(-4..=10i32)));
    }
    lp
}

#[test]
fn random_programs_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut optimal, mut infeasible) = (0, 0);
    for case in 0..200 {
        let lp = random_lp(&mut rng);
        let sol = solve_lp(&lp).unwrap_or_else(|e| panic!("case {case}: {e}"));
        match oracle::best_vertex(&lp) {
            Some((best, _)) => {
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
                assert!(
                    (sol.objective - best).abs() <= 1e-6 * (1.0 + best.abs()),
                    "case {case}: simplex {} vs vertices {best}",
                    sol.objective
                );
                assert!(lp.max_violation(&sol.values) <= FEASIBILITY_TOL, "case {case}");
                optimal += 1;
            }
            None => {
                assert_eq!(sol.status, LpStatus::Infeasible, "case {case}");
                infeasible += 1;
            }
        }
    }
    assert!(optimal > 50 && infeasible > 5, "{optimal} optimal / {infeasible} infeasible");
}

#[test]
fn bundled_simplex_agrees_with_the_default_backend() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbac4);
    for case in 0..100 {
        let lp = random_lp(&mut rng);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp_with(&SimplexBackend::default(), &lp).unwrap();
        assert_eq!(a.status, b.status, "case {case}");
        if a.status == LpStatus::Optimal {
            assert!((a.objective - b.objective).abs() <= 1e-6 * (1.0 + a.objective.abs()), "case {case}");
        }
    }
}

#[test]
fn transportation_problem_matches_vertex_enumeration() {
    // 3 sources x 3 sinks, balanced supply/demand, minimize shipping cost.
    let supply: [f64; 3] = [20.0, 30.0, 25.0];
    let demand = [10.0, 35.0, 30.0];
    let cost = [[8.0, 6.0, 10.0], [9.0, 12.0, 13.0], [14.0, 9.0, 16.0]];
    let mut lp = LinearProgram::minimize();
    let mut x = [[0usize; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            x[i][j] = lp.add_var(0.0, supply[i].min(demand[j]), cost[i][j]);
        }
    }
    for i in 0..3 {
        lp.add_constraint((0..3).map(|j| (x[i][j], 1.0)).collect(), Relation::Eq, supply[i]);
    }
    for j in 0..3 {
        lp.add_constraint((0..3).map(|i| (x[i][j], 1.0)).collect(), Relation::Eq, demand[j]);
    }
    let sol = solve_lp(&lp).unwrap();
    let (best, _) = oracle::best_vertex(&lp).expect("balanced problem is feasible");
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective - best).abs() < 1e-6, "{} vs {best}", sol.objective);
    // integral data gives an integral optimum
    assert!((best - best.round()).abs() < 1e-9);
}
