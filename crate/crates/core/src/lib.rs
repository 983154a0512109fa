//! Maximum causal entropy inverse reinforcement learning on POMDPs.
//!
//! Policies are memoryless on (possibly memory-augmented) models; the forward problem is
//! solved by sequential linear programming over visitation counts.

pub mod belief;
pub mod envs;
pub mod error;
pub mod flow;
pub mod forward;
pub mod io;
pub mod irl;
pub mod pomdp;
pub mod product;
pub mod rollout;
pub mod spec;

pub use belief::{belief_update, beliefs_from_trace};
pub use error::{Error, Result};
pub use flow::{solve_flow_discounted, solve_flow_spec, SpecCounts, VisitationCounts};
pub use pomdp::{Belief, Policy, Pomdp, ValidationReport, Violation};
pub use product::{product_with_memory, FscShape, ProductPomdp};
pub use rollout::{estimate_satisfaction, reward_curve, rollout, RewardCurve, Trajectory};
pub use spec::{compile_spec, satisfaction_probability, ReachSpec, SpecFormula, SpecKind};
pub use irl::{
    empirical_feature_expectation, generate_demos, grad_theta, mce_irl, DemoStep, Demonstration, DemonstrationSet, IrlParams,
    IrlResult, RewardModel, StepSchedule,
};
pub use forward::{causal_entropy, initial_policy, discounted_return, evaluate, realized_cost, scp_forward, Evaluation, ScpParams, ScpResult};
