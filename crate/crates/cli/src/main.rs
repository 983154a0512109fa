//! `pomirl`: generate benchmarks, solve forward problems, produce demonstrations and run
//! task-guided IRL.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pomirl_core::envs::{make_env, make_expert_with, EnvConfig, ExpertKind};
use pomirl_core::forward::{initial_policy, StopReason};
use pomirl_core::io::{self, ModelDoc, PolicyFile, FORMAT_VERSION};
use pomirl_core::irl::{empirical_feature_expectation, generate_demos, horizon_for, mce_irl, IrlParams, StepSchedule};
use pomirl_core::{
    compile_spec, estimate_satisfaction, evaluate, product_with_memory, reward_curve, scp_forward, Error, FscShape, Policy,
    Pomdp, ProductPomdp, ReachSpec, ScpParams, SpecFormula,
};

#[derive(Parser, Debug)]
#[command(name = "pomirl", version, about = "Task-guided inverse reinforcement learning on POMDPs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Model file (JSON).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Specification: a spec file or an inline formula such as "G !bad >= 0.9".
    #[arg(long, global = true)]
    spec: Option<String>,
    /// Override the specification threshold.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Finite-state controller memory size.
    #[arg(long, global = true, default_value_t = 1)]
    memory: usize,
    /// Override the model's discount factor.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Output file (env, demo) or directory (everything else).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Independent runs, one per seed, each written to `<out>/seed-<s>`.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// SCP iteration cap per forward solve.
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Initial trust-region radius (multiplicative, > 1).
    #[arg(long, global = true)]
    trust_init: Option<f64>,
    /// Slack penalty of the linearized programs.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Penalty on specification violation.
    #[arg(long, global = true)]
    beta_sp: Option<f64>,
    /// Initial IRL step size.
    #[arg(long, global = true)]
    eta0: Option<f64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a benchmark model plus a sidecar `.spec` file.
    Env {
        name: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value_t = 0.1)]
        slip: f64,
    },
    /// Check a model (and optional spec) and report every violation.
    Validate,
    /// Solve the forward problem; writes policy.json, iters.csv and summary.json.
    SolveForward {
        /// Reward weights in feature-name order (default: the model's own weights).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
    },
    /// Roll out an expert and write belief demonstrations (JSONL).
    Demo {
        #[arg(long, value_enum, default_value_t = Expert::Mdp)]
        expert: Expert,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Steps per trajectory (default: enough for γ^T ≤ 1e-3, at least 100).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Learn reward weights and a policy from demonstrations.
    Irl {
        /// Demonstration file; `{seed}` is replaced per seed.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value_t = 30)]
        outer_iters: usize,
        /// Initial weights (default: all ones).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Rollouts for the evaluation curve.
        #[arg(long, default_value_t = 1000)]
        rollouts: usize,
    },
    /// Evaluate a stored policy: exact values, reward curve and Monte Carlo spec estimate.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1000)]
        rollouts: usize,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Forward-solve generated benchmarks and tabulate sizes and timings.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "maze,obstacle")]
        envs: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        memories: Vec<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Expert {
    Mdp,
    Pomdp,
}

/// Exit code 2 marks numerical trouble; everything else the user can fix is 1.
#[derive(Debug)]
struct SolverFailure(String);

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SolverFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<SolverFailure>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Numerical(_) | Error::Lp(_) | Error::SingularFlow) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if g.memory == 0 {
        bail!(Error::Dimension("--memory must be at least 1".into()));
    }
    match &cli.command {
        Command::Env { name, n, r, slip } => cmd_env(g, name, *n, *r, *slip),
        Command::Validate => cmd_validate(g),
        Command::SolveForward { theta } => cmd_solve_forward(g, theta.as_deref()),
        Command::Demo { expert, count, horizon } => for_each_seed(g, |g| cmd_demo(g, *expert, *count, *horizon)),
        Command::Irl {
            demos,
            outer_iters,
            theta0,
            tolerance,
            rollouts,
        } => for_each_seed(g, |g| cmd_irl(g, demos, *outer_iters, theta0.as_deref(), *tolerance, *rollouts)),
        Command::Eval { policy, rollouts, horizon } => cmd_eval(g, policy, *rollouts, *horizon),
        Command::Bench { envs, memories } => cmd_bench(g, envs, memories),
    }
}

/// Runs `f` once per `--seeds` entry on its own thread, each writing to `<out>/seed-<s>`,
/// then merges the per-seed summaries into `<out>/seeds.csv`.
fn for_each_seed(g: &Global, f: impl Fn(&Global) -> anyhow::Result<()> + Sync) -> anyhow::Result<()> {
    if g.seeds.is_empty() {
        return f(g);
    }
    let out = g.out.clone().ok_or_else(|| anyhow!(Error::Format("--seeds needs --out".into())))?;
    std::fs::create_dir_all(&out)?;
    let configs: Vec<Global> = g
        .seeds
        .iter()
        .map(|&s| Global {
            seed: s,
            seeds: Vec::new(),
            out: Some(out.join(format!("seed-{s}"))),
            ..g.clone()
        })
        .collect();
    let results: Vec<anyhow::Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs.iter().map(|c| scope.spawn(|| f(c))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut lines = vec![format!("# format_version={FORMAT_VERSION}"), "seed,status,summary".to_string()];
    let mut first_err = None;
    for (c, r) in configs.iter().zip(results) {
        let dir = c.out.as_ref().expect("set above");
        let status = if r.is_ok() { "ok" } else { "failed" };
        let summary = dir.join("summary.json");
        let summary = if summary.exists() { summary.display().to_string() } else { String::new() };
        lines.push(format!("{},{status},{summary}", c.seed));
        if let Err(e) = r {
            eprintln!("seed {}: {e:#}", c.seed);
            first_err.get_or_insert(e);
        }
    }
    std::fs::write(out.join("seeds.csv"), lines.join("\n") + "\n")?;
    first_err.map_or(Ok(()), Err)
}

fn load_model(g: &Global) -> anyhow::Result<ModelDoc> {
    let path = g.model.as_ref().ok_or_else(|| anyhow!(Error::Format("--model is required".into())))?;
    let mut doc = io::read_model(path)?;
    if let Some(gamma) = g.gamma {
        if !(0.0..1.0).contains(&gamma) {
            bail!(Error::Format(format!("--gamma {gamma} outside [0, 1)")));
        }
        doc.model.discount = gamma;
    }
    Ok(doc)
}

fn load_spec(g: &Global) -> anyhow::Result<Option<SpecFormula>> {
    let Some(arg) = &g.spec else { return Ok(None) };
    let mut spec = if Path::new(arg).is_file() {
        io::read_spec(Path::new(arg))?
    } else {
        arg.parse::<SpecFormula>()?
    };
    if let Some(l) = g.lambda {
        spec = SpecFormula::new(spec.kind, l)?;
    }
    Ok(Some(spec))
}

fn scp_params(g: &Global) -> anyhow::Result<ScpParams> {
    let d = ScpParams::default();
    let p = ScpParams {
        max_iters: g.max_iters.unwrap_or(d.max_iters),
        trust_init: g.trust_init.unwrap_or(d.trust_init),
        beta: g.beta.or(d.beta),
        beta_sp: g.beta_sp.unwrap_or(d.beta_sp),
        ..d
    };
    p.validate().map_err(|e| anyhow!(Error::Format(e.to_string())))?;
    Ok(p)
}

fn weights(doc: &ModelDoc, given: Option<&[f64]>) -> anyhow::Result<Vec<f64>> {
    let d = doc.model.features.len();
    let theta = match (given, &doc.theta) {
        (Some(t), _) => t.to_vec(),
        (None, Some(t)) => t.clone(),
        (None, None) => bail!(Error::Format("model carries no weights; pass --theta".into())),
    };
    if theta.len() != d {
        bail!(Error::Format(format!("{} weights for {d} features", theta.len())));
    }
    Ok(theta)
}

/// The model the policy acts on: the base for M = 1, else the memory product.
struct Learner {
    model: Pomdp,
    product: Option<ProductPomdp>,
}

fn learner(base: &Pomdp, memory: usize) -> anyhow::Result<Learner> {
    if memory == 1 {
        return Ok(Learner {
            model: base.clone(),
            product: None,
        });
    }
    let prod = product_with_memory(base, FscShape::new(memory)?);
    Ok(Learner {
        model: prod.product.clone(),
        product: Some(prod),
    })
}

fn out_dir(g: &Global) -> anyhow::Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_env(g: &Global, name: &str, n: usize, r: usize, slip: f64) -> anyhow::Result<()> {
    let cfg = EnvConfig {
        name: name.to_string(),
        n,
        r,
        slip,
        discount: g.gamma,
        seed: g.seed,
    };
    let env = make_env(&cfg)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}.json")));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_model(&out, &env.model, Some(&env.theta))?;
    let spec = match g.lambda {
        Some(l) => SpecFormula::new(env.spec.kind.clone(), l)?,
        None => env.spec.clone(),
    };
    io::write_spec(&out.with_extension("spec"), &spec)?;
    println!(
        "{}: {} states, {} actions, {} observations -> {}",
        env.name,
        env.model.num_states(),
        env.model.num_actions(),
        env.model.num_observations(),
        out.display()
    );
    Ok(())
}

fn cmd_validate(g: &Global) -> anyhow::Result<()> {
    let doc = load_model(g)?;
    let m = &doc.model;
    println!("{} states, {} actions, {} observations", m.num_states(), m.num_actions(), m.num_observations());
    if let Some(spec) = load_spec(g)? {
        let rs = compile_spec(m, &spec)?;
        println!("spec {spec}: {} target states ({})", rs.targets.len(), rs.provenance);
    }
    println!("valid");
    Ok(())
}

#[derive(Serialize)]
struct ForwardSummary {
    format_version: u32,
    objective: f64,
    entropy: f64,
    #[serde(rename = "return")]
    ret: f64,
    spec_probability: Option<f64>,
    wall_time: f64,
    iterations: usize,
    stop: String,
    failure: Option<String>,
    memory: usize,
    states: usize,
    observations: usize,
}

fn cmd_solve_forward(g: &Global, theta: Option<&[f64]>) -> anyhow::Result<()> {
    let doc = load_model(g)?;
    let theta = weights(&doc, theta)?;
    let spec = load_spec(g)?;
    let params = scp_params(g)?;
    let dir = out_dir(g)?;
    let l = learner(&doc.model, g.memory)?;
    let reward = l.model.linear_reward(&l.model.feature_names(), &theta)?;
    let compiled = spec.as_ref().map(|s| compile_spec(&l.model, s)).transpose()?;
    let start = Instant::now();
    let res = scp_forward(&l.model, &reward, &initial_policy(&l.model, g.memory, g.seed), &params, compiled.as_ref())?;
    let wall = start.elapsed().as_secs_f64();

    io::write_json(&dir.join("policy.json"), &PolicyFile::new(&l.model, res.policy(), l.product.as_ref()))?;
    io::write_iterations_csv(&dir.join("iters.csv"), &res.log)?;
    let summary = ForwardSummary {
        format_version: FORMAT_VERSION,
        objective: res.best.cost(),
        entropy: res.best.entropy,
        ret: res.best.ret,
        spec_probability: res.best.spec_probability(),
        wall_time: wall,
        iterations: res.log.len() - 1,
        stop: format!("{:?}", res.stop),
        failure: res.failure.clone(),
        memory: g.memory,
        states: l.model.num_states(),
        observations: l.model.num_observations(),
    };
    io::write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "objective {:.4} (entropy {:.4}, return {:.4}) after {} iterations, {:.1}s",
        summary.objective, summary.entropy, summary.ret, summary.iterations, wall
    );
    if res.stop == StopReason::SolverFailure {
        return Err(SolverFailure(format!(
            "solver failed ({}); best verified iterate written",
            res.failure.unwrap_or_default()
        ))
        .into());
    }
    Ok(())
}

fn cmd_demo(g: &Global, kind: Expert, count: usize, horizon: Option<usize>) -> anyhow::Result<()> {
    let doc = load_model(g)?;
    let theta = weights(&doc, None)?;
    let spec = load_spec(g)?;
    let kind = match kind {
        Expert::Mdp => ExpertKind::Mdp,
        Expert::Pomdp => ExpertKind::Pomdp,
    };
    let params = scp_params(g)?;
    let expert = make_expert_with(&doc.model, &theta, kind, g.memory, &params, spec.as_ref())
        .map_err(|e| SolverFailure(format!("expert synthesis failed: {e}")))?;
    let horizon = horizon.unwrap_or_else(|| horizon_for(doc.model.discount, 1e-3, 100));
    let demos = generate_demos(&doc.model, &expert, count, horizon, g.seed)?;
    let path = match &g.out {
        Some(p) if p.extension().is_some() => p.clone(),
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            dir.join("demos.jsonl")
        }
        None => PathBuf::from("demos.jsonl"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_demos(&path, &demos)?;
    println!("{count} demonstrations of {horizon} steps -> {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct IrlSummary {
    format_version: u32,
    theta: Vec<f64>,
    features: Vec<String>,
    outer_iterations: usize,
    converged: bool,
    diagnostic: Option<String>,
    final_grad_norm: f64,
    objective: f64,
    spec_probability: Option<f64>,
    true_return: Option<f64>,
    mean_true_reward: f64,
    wall_time: f64,
}

fn cmd_irl(
    g: &Global,
    demos: &Path,
    outer_iters: usize,
    theta0: Option<&[f64]>,
    tolerance: f64,
    rollouts: usize,
) -> anyhow::Result<()> {
    let doc = load_model(g)?;
    let base = &doc.model;
    let demos_path = PathBuf::from(demos.to_string_lossy().replace("{seed}", &g.seed.to_string()));
    let demos = io::read_demos(&demos_path, base)?;
    let spec = load_spec(g)?;
    let params = IrlParams {
        schedule: StepSchedule::InvSqrt(g.eta0),
        max_outer: outer_iters,
        tolerance,
        forward: scp_params(g)?,
    };
    let dir = out_dir(g)?;
    let l = learner(base, g.memory)?;
    let names = l.model.feature_names();
    let theta0 = theta0.map_or_else(|| vec![1.0; names.len()], <[f64]>::to_vec);
    let compiled = spec.as_ref().map(|s| compile_spec(&l.model, s)).transpose()?;
    let fe = empirical_feature_expectation(&demos, base);
    let start = Instant::now();
    let res = mce_irl(&l.model, &fe, &theta0, &initial_policy(&l.model, g.memory, g.seed), compiled.as_ref(), &params)?;
    let wall = start.elapsed().as_secs_f64();

    io::write_theta_csv(&dir.join("theta.csv"), &names, &res.history)?;
    io::write_json(&dir.join("policy.json"), &PolicyFile::new(&l.model, res.policy(), l.product.as_ref()))?;
    // the curve uses the true weights when the model has them, otherwise the learned ones
    let eval_theta = doc.theta.clone().unwrap_or_else(|| res.theta.clone());
    let true_reward = l.model.linear_reward(&names, &eval_theta)?;
    let horizon = horizon_for(base.discount, 1e-3, 100);
    let curve = reward_curve(&l.model, res.policy(), &true_reward, rollouts, horizon, g.seed);
    io::write_curve_csv(&dir.join("eval.csv"), &curve)?;
    let true_return = doc
        .theta
        .as_ref()
        .map(|_| evaluate(&l.model, &true_reward, res.policy(), None, 0.0).map(|e| e.ret))
        .transpose()?;
    let summary = IrlSummary {
        format_version: FORMAT_VERSION,
        theta: res.theta.clone(),
        features: names,
        outer_iterations: res.history.len(),
        converged: res.converged,
        diagnostic: res.diagnostic.clone(),
        final_grad_norm: res.history.last().map_or(f64::NAN, |h| h.grad_norm),
        objective: res.best.cost(),
        spec_probability: res.best.spec_probability(),
        true_return,
        mean_true_reward: curve.final_mean(),
        wall_time: wall,
    };
    io::write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{} outer iterations, |grad| {:.3e}, mean true reward {:.3}{}",
        summary.outer_iterations,
        summary.final_grad_norm,
        summary.mean_true_reward,
        summary.spec_probability.map(|p| format!(", spec {p:.4}")).unwrap_or_default()
    );
    if let Some(d) = res.diagnostic {
        return Err(SolverFailure(format!("{d}; best iterate written")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    format_version: u32,
    entropy: f64,
    #[serde(rename = "return")]
    ret: f64,
    mean_true_reward: f64,
    spec_probability: Option<f64>,
    spec_monte_carlo: Option<f64>,
    spec_monte_carlo_se: Option<f64>,
}

fn cmd_eval(g: &Global, policy: &Path, rollouts: usize, horizon: Option<usize>) -> anyhow::Result<()> {
    let doc = load_model(g)?;
    let theta = weights(&doc, None)?;
    let file = io::read_policy(policy)?;
    let memory = file.product.as_ref().map_or(1, |p| p.memory_size);
    let l = learner(&doc.model, memory)?;
    if let (Some(p), Some(info)) = (&l.product, &file.product) {
        if p.observation_origin != info.observation_origin || p.action_origin != info.action_origin {
            bail!(Error::Format(format!("{}: product layout does not match the model", policy.display())));
        }
    }
    let pol: Policy = file.policy()?;
    pol.check_shape(&l.model)?;
    let spec = load_spec(g)?;
    let compiled: Option<ReachSpec> = spec.as_ref().map(|s| compile_spec(&l.model, s)).transpose()?;
    let reward = l.model.linear_reward(&l.model.feature_names(), &theta)?;
    let ev = evaluate(&l.model, &reward, &pol, compiled.as_ref(), 0.0)?;
    let horizon = horizon.unwrap_or_else(|| horizon_for(doc.model.discount, 1e-3, 100));
    let curve = reward_curve(&l.model, &pol, &reward, rollouts, horizon, g.seed);
    let dir = out_dir(g)?;
    io::write_curve_csv(&dir.join("eval.csv"), &curve)?;
    let mc = compiled.as_ref().map(|rs| estimate_satisfaction(rs, &pol, rollouts, 100 * horizon, g.seed));
    let summary = EvalSummary {
        format_version: FORMAT_VERSION,
        entropy: ev.entropy,
        ret: ev.ret,
        mean_true_reward: curve.final_mean(),
        spec_probability: ev.spec_probability(),
        spec_monte_carlo: mc.map(|m| m.0),
        spec_monte_carlo_se: mc.map(|m| m.1),
    };
    io::write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "return {:.4}, entropy {:.4}, Monte Carlo mean {:.4}{}",
        ev.ret,
        ev.entropy,
        summary.mean_true_reward,
        ev.spec_probability().map(|p| format!(", spec {p:.4}")).unwrap_or_default()
    );
    Ok(())
}

fn cmd_bench(g: &Global, envs: &[String], memories: &[usize]) -> anyhow::Result<()> {
    let dir = out_dir(g)?;
    let params = scp_params(g)?;
    let mut rows = vec![
        format!("# format_version={FORMAT_VERSION}"),
        "env,memory,states,observations,objective,entropy,return,iterations,stop,seconds".to_string(),
    ];
    for name in envs {
        let env = make_env(&EnvConfig {
            name: name.clone(),
            discount: g.gamma,
            seed: g.seed,
            ..EnvConfig::default()
        })?;
        for &m in memories {
            let l = learner(&env.model, m)?;
            let reward = l.model.linear_reward(&l.model.feature_names(), &env.theta)?;
            let start = Instant::now();
            let res = scp_forward(&l.model, &reward, &initial_policy(&l.model, m, g.seed), &params, None)?;
            let secs = start.elapsed().as_secs_f64();
            let row = format!(
                "{},{m},{},{},{},{},{},{},{:?},{secs:.2}",
                env.name,
                l.model.num_states(),
                l.model.num_observations(),
                res.best.cost(),
                res.best.entropy,
                res.best.ret,
                res.log.len() - 1,
                res.stop
            );
            println!("{row}");
            rows.push(row);
        }
    }
    std::fs::write(dir.join("bench.csv"), rows.join("\n") + "\n")?;
    Ok(())
}
