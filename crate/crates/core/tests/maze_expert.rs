use pomirl_core::envs::{make_expert, make_maze, ExpertKind};
use pomirl_core::rollout;

// Monte Carlo check of the calibrated maze: the fully observed expert's mean discounted
// true reward over 1000 rollouts sits within 2 standard errors of 48.22.
#[test]
fn mdp_expert_earns_the_calibrated_value() {
    let env = make_maze();
    let expert = make_expert(&env.model, &env.theta, ExpertKind::Mdp, 1).unwrap();
    let returns: Vec<f64> = (0..1000)
        .map(|i| rollout(&expert.model, &expert.policy, 2000, i).weighted_return(&env.theta))
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - 48.22).abs() <= 2.0 * se, "{mean} ± {se}");
}
