//! File formats: model JSON, one-line spec files, demonstration JSONL, policy JSON and
//! versioned CSV logs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::IterationRecord;
use crate::irl::{DemoSource, Demonstration, DemonstrationSet, IrlRecord};
use crate::pomdp::{Policy, Pomdp};
use crate::product::ProductPomdp;
use crate::rollout::RewardCurve;
use crate::spec::SpecFormula;

pub const FORMAT_VERSION: u32 = 1;

/// Row sums accepted on load; rows are renormalized afterwards.
pub const LOAD_ROW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NamesOrCount {
    Count(usize),
    Names(Vec<String>),
}

impl NamesOrCount {
    fn resolve(self, prefix: &str) -> Vec<String> {
        match self {
            NamesOrCount::Count(n) => (0..n).map(|i| format!("{prefix}{i}")).collect(),
            NamesOrCount::Names(v) => v,
        }
    }
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub states: NamesOrCount,
    pub actions: NamesOrCount,
    pub observations: NamesOrCount,
    pub discount: f64,
    pub initial: Vec<(usize, f64)>,
    pub transitions: Vec<(usize, usize, usize, f64)>,
    pub observation_fn: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub labels: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub features: BTreeMap<String, Vec<(usize, usize, f64)>>,
    /// Optional reward weights per feature name (ground truth for generated benchmarks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<BTreeMap<String, f64>>,
}

/// A loaded model with the reward weights it carries, aligned with `feature_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDoc {
    pub model: Pomdp,
    pub theta: Option<Vec<f64>>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl ModelFile {
    pub fn from_model(m: &Pomdp) -> Self {
        let na = m.num_actions();
        let mut transitions = Vec::new();
        for s in 0..m.num_states() {
            for a in 0..na {
                transitions.extend(m.transition(s, a).iter().map(|&(t, p)| (s, a, t, p)));
            }
        }
        let observation_fn = m
            .observations
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().map(move |&(z, p)| (s, z, p)))
            .collect();
        let features = m
            .features
            .iter()
            .map(|(name, v)| {
                let entries = v
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(k, &x)| (k / na, k % na, x))
                    .collect();
                (name.clone(), entries)
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            states: NamesOrCount::Names(m.state_names.clone()),
            actions: NamesOrCount::Names(m.action_names.clone()),
            observations: NamesOrCount::Names(m.observation_names.clone()),
            discount: m.discount,
            initial: m.initial.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, &p)| (s, p)).collect(),
            transitions,
            observation_fn,
            labels: m.labels.iter().map(|(k, v)| (k.clone(), v.iter().copied().collect())).collect(),
            features,
            theta: None,
        }
    }

    pub fn with_theta(mut self, names: &[String], theta: &[f64]) -> Self {
        self.theta = Some(names.iter().cloned().zip(theta.iter().copied()).collect());
        self
    }

    pub fn into_doc(mut self) -> Result<ModelDoc> {
        let weights = self.theta.take();
        let model = self.into_model()?;
        let theta = match weights {
            None => None,
            Some(w) => {
                let names = model.feature_names();
                if let Some(k) = w.keys().find(|k| !names.contains(k)) {
                    return Err(fmt_err(format!("theta.{k}: no such feature")));
                }
                let theta = names
                    .iter()
                    .map(|n| w.get(n).copied().ok_or_else(|| fmt_err(format!("theta.{n}: missing weight"))))
                    .collect::<Result<Vec<_>>>()?;
                Some(theta)
            }
        };
        Ok(ModelDoc { model, theta })
    }

    pub fn into_model(self) -> Result<Pomdp> {
        if self.format_version != FORMAT_VERSION {
            return Err(fmt_err(format!("format_version: unsupported version {}", self.format_version)));
        }
        let states = self.states.resolve("s");
        let actions = self.actions.resolve("a");
        let observations = self.observations.resolve("z");
        let (ns, na, nz) = (states.len(), actions.len(), observations.len());
        if ns == 0 || na == 0 || nz == 0 {
            return Err(fmt_err("states/actions/observations: must be nonempty"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(fmt_err(format!("discount: {} outside [0, 1)", self.discount)));
        }
        let mut m = Pomdp::with_sizes(ns, na, nz, self.discount);
        m.state_names = states;
        m.action_names = actions;
        m.observation_names = observations;

        let check_prob = |field: &str, k: usize, p: f64| {
            if (0.0..=1.0 + LOAD_ROW_TOL).contains(&p) {
                Ok(())
            } else {
                Err(fmt_err(format!("{field}[{k}]: probability {p} outside [0, 1]")))
            }
        };
        for (k, &(s, p)) in self.initial.iter().enumerate() {
            if s >= ns {
                return Err(fmt_err(format!("initial[{k}]: state {s} out of range")));
            }
            check_prob("initial", k, p)?;
            m.initial[s] += p;
        }
        let total: f64 = m.initial.iter().sum();
        if (total - 1.0).abs() > LOAD_ROW_TOL {
            return Err(fmt_err(format!("initial: probabilities sum to {total}")));
        }
        m.initial.iter_mut().for_each(|p| *p = renormalized(*p, total));

        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ns * na];
        for (k, &(s, a, t, p)) in self.transitions.iter().enumerate() {
            if s >= ns || a >= na || t >= ns {
                return Err(fmt_err(format!("transitions[{k}]: index ({s}, {a}, {t}) out of range")));
            }
            check_prob("transitions", k, p)?;
            rows[s * na + a].push((t, p));
        }
        for (i, row) in rows.into_iter().enumerate() {
            let total: f64 = row.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > LOAD_ROW_TOL {
                return Err(fmt_err(format!(
                    "transitions: row (state {}, action {}) sums to {total}",
                    i / na,
                    i % na
                )));
            }
            m.set_transition(i / na, i % na, row.into_iter().map(|(t, p)| (t, renormalized(p, total))).collect());
        }

        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ns];
        for (k, &(s, z, p)) in self.observation_fn.iter().enumerate() {
            if s >= ns || z >= nz {
                return Err(fmt_err(format!("observation_fn[{k}]: index ({s}, {z}) out of range")));
            }
            check_prob("observation_fn", k, p)?;
            rows[s].push((z, p));
        }
        for (s, row) in rows.into_iter().enumerate() {
            let total: f64 = row.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > LOAD_ROW_TOL {
                return Err(fmt_err(format!("observation_fn: row for state {s} sums to {total}")));
            }
            m.set_observation(s, row.into_iter().map(|(z, p)| (z, renormalized(p, total))).collect());
        }

        for (name, set) in self.labels {
            if let Some(&s) = set.iter().find(|&&s| s >= ns) {
                return Err(fmt_err(format!("labels.{name}: state {s} out of range")));
            }
            m.add_label(&name, set);
        }
        for (name, entries) in self.features {
            let mut values = vec![0.0; ns * na];
            for (k, &(s, a, v)) in entries.iter().enumerate() {
                if s >= ns || a >= na || !v.is_finite() {
                    return Err(fmt_err(format!("features.{name}[{k}]: bad entry ({s}, {a}, {v})")));
                }
                values[s * na + a] = v;
            }
            m.features.insert(name, values);
        }
        m.ensure_valid()?;
        Ok(m)
    }
}

/// Leaves rows that already sum to one bit-for-bit alone so files round-trip exactly.
fn renormalized(p: f64, total: f64) -> f64 {
    if (total - 1.0).abs() <= 1e-12 {
        p
    } else {
        p / total
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        fmt_err(format!("{path}: {inner}"))
    })
}

pub fn model_from_json(text: &str) -> Result<Pomdp> {
    parse_json::<ModelFile>(text)?.into_model()
}

pub fn model_to_json(m: &Pomdp) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from_model(m))?)
}

pub fn read_model(path: &Path) -> Result<ModelDoc> {
    let text = fs::read_to_string(path)?;
    parse_json::<ModelFile>(&text).and_then(ModelFile::into_doc).map_err(|e| with_path(e, path))
}

pub fn write_model(path: &Path, m: &Pomdp, theta: Option<&[f64]>) -> Result<()> {
    let mut file = ModelFile::from_model(m);
    if let Some(t) = theta {
        file = file.with_theta(&m.feature_names(), t);
    }
    Ok(fs::write(path, serde_json::to_string_pretty(&file)?)?)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

/// Reads the first non-empty, non-comment line of a spec file.
pub fn read_spec(path: &Path) -> Result<SpecFormula> {
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| fmt_err(format!("{}: no specification line", path.display())))?;
    line.parse()
}

pub fn write_spec(path: &Path, spec: &SpecFormula) -> Result<()> {
    Ok(fs::write(path, format!("{spec}\n"))?)
}

#[derive(Serialize, Deserialize)]
struct DemoLine {
    #[serde(default = "default_version")]
    format_version: u32,
    #[serde(default)]
    expert: String,
    #[serde(default)]
    seed: u64,
    #[serde(flatten)]
    trajectory: Demonstration,
}

/// One trajectory per line.
pub fn demos_to_jsonl(demos: &DemonstrationSet) -> Result<String> {
    let mut out = String::new();
    for t in &demos.trajectories {
        let line = DemoLine {
            format_version: FORMAT_VERSION,
            expert: demos.source.expert.clone(),
            seed: demos.source.seed,
            trajectory: t.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn demos_from_jsonl(text: &str, model: &Pomdp) -> Result<DemonstrationSet> {
    let mut set = DemonstrationSet::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DemoLine = parse_json(line).map_err(|e| fmt_err(format!("line {}: {e}", i + 1)))?;
        if parsed.format_version != FORMAT_VERSION {
            return Err(fmt_err(format!("line {}: format_version {}", i + 1, parsed.format_version)));
        }
        if set.trajectories.is_empty() {
            set.source = DemoSource {
                expert: parsed.expert,
                seed: parsed.seed,
            };
        }
        set.trajectories.push(parsed.trajectory);
    }
    set.validate(model)?;
    Ok(set)
}

pub fn read_demos(path: &Path, model: &Pomdp) -> Result<DemonstrationSet> {
    demos_from_jsonl(&fs::read_to_string(path)?, model).map_err(|e| with_path(e, path))
}

pub fn write_demos(path: &Path, demos: &DemonstrationSet) -> Result<()> {
    Ok(fs::write(path, demos_to_jsonl(demos)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductInfo {
    pub memory_size: usize,
    /// `(base observation, memory node)` per product observation.
    pub observation_origin: Vec<(usize, usize)>,
    /// `(base action, next node)` per product action.
    pub action_origin: Vec<(usize, usize)>,
}

/// Policy matrix `σ[z][a]` plus what is needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format_version: u32,
    pub observations: Vec<String>,
    pub actions: Vec<String>,
    pub sigma: Vec<Vec<f64>>,
    pub product: Option<ProductInfo>,
}

impl PolicyFile {
    pub fn new(model: &Pomdp, policy: &Policy, product: Option<&ProductPomdp>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            observations: model.observation_names.clone(),
            actions: model.action_names.clone(),
            sigma: policy.rows().map(<[f64]>::to_vec).collect(),
            product: product.map(|p| ProductInfo {
                memory_size: p.shape.memory_size,
                observation_origin: p.observation_origin.clone(),
                action_origin: p.action_origin.clone(),
            }),
        }
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::from_rows(self.sigma.clone())
    }
}

pub fn read_policy(path: &Path) -> Result<PolicyFile> {
    let file: PolicyFile = parse_json(&fs::read_to_string(path)?).map_err(|e| with_path(e, path))?;
    if file.format_version != FORMAT_VERSION {
        return Err(fmt_err(format!("{}: format_version {}", path.display(), file.format_version)));
    }
    Ok(file)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(fs::write(path, serde_json::to_string_pretty(value)?)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# format_version={FORMAT_VERSION}")?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(e: csv::Error) -> Error {
    fmt_err(format!("csv: {e}"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_iterations_csv(path: &Path, log: &[IterationRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "rho", "linearized_objective", "realized_cost", "spec_probability", "accepted", "wall_time"])
        .map_err(csv_err)?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            r.rho.to_string(),
            r.linearized_objective.to_string(),
            r.realized_cost.to_string(),
            opt(r.spec_probability),
            r.accepted.to_string(),
            r.wall_time.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_theta_csv(path: &Path, features: &[String], history: &[IrlRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(features.iter().map(|f| format!("theta_{f}")));
    header.extend(["grad_norm", "forward_objective", "spec_probability"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in history {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.theta.iter().map(f64::to_string));
        row.extend([r.grad_norm.to_string(), r.forward_objective.to_string(), opt(r.spec_probability)]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, curve: &RewardCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "mean", "std"]).map_err(csv_err)?;
    for (t, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
        w.write_record([t.to_string(), m.to_string(), s.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by this module: header names and rows of raw fields.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    if text.lines().next().map(str::trim) != Some(&format!("# format_version={FORMAT_VERSION}")) {
        return Err(fmt_err(format!("{}: missing format_version header", path.display())));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_maze;
    use crate::irl::{DemoStep, DemonstrationSet};

    #[test]
    fn model_round_trip() {
        let env = make_maze();
        let text = model_to_json(&env.model).unwrap();
        let back = model_from_json(&text).unwrap();
        assert_eq!(back, env.model);
    }

    #[test]
    fn weights_travel_with_the_model() {
        let env = make_maze();
        let file = ModelFile::from_model(&env.model).with_theta(&env.model.feature_names(), &env.theta);
        let text = serde_json::to_string(&file).unwrap();
        let doc = parse_json::<ModelFile>(&text).unwrap().into_doc().unwrap();
        assert_eq!(doc.theta.as_deref(), Some(env.theta.as_slice()));
        let mut missing = file.clone();
        missing.theta.as_mut().unwrap().remove("target");
        let err = missing.into_doc().unwrap_err().to_string();
        assert!(err.contains("theta.target"), "{err}");
        let mut extra = file;
        extra.theta.as_mut().unwrap().insert("nope".into(), 1.0);
        assert!(extra.into_doc().is_err());
    }

    #[test]
    fn counts_instead_of_names() {
        let text = r#"{"states": 1, "actions": 2, "observations": 1, "discount": 0.9,
            "initial": [[0, 1.0]], "transitions": [[0, 0, 0, 1.0], [0, 1, 0, 1.0]],
            "observation_fn": [[0, 0, 1.0]], "features": {"r": [[0, 1, 2.0]]}}"#;
        let m = model_from_json(text).unwrap();
        assert_eq!(m.action_names, vec!["a0", "a1"]);
        assert_eq!(m.feature("r").unwrap(), &[0.0, 2.0]);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let missing = r#"{"states": 1, "actions": 1, "observations": 1, "initial": [[0, 1.0]],
            "transitions": [[0, 0, 0, 1.0]], "observation_fn": [[0, 0, 1.0]]}"#;
        let e = model_from_json(missing).unwrap_err().to_string();
        assert!(e.contains("discount"), "{e}");
        let bad_type = r#"{"states": 1, "actions": 1, "observations": 1, "discount": 0.5, "initial": [[0, "x"]],
            "transitions": [[0, 0, 0, 1.0]], "observation_fn": [[0, 0, 1.0]]}"#;
        let e = model_from_json(bad_type).unwrap_err().to_string();
        assert!(e.contains("initial"), "{e}");
        let bad_row = r#"{"states": 1, "actions": 1, "observations": 1, "discount": 0.5, "initial": [[0, 1.0]],
            "transitions": [[0, 0, 0, 0.9]], "observation_fn": [[0, 0, 1.0]]}"#;
        let e = model_from_json(bad_row).unwrap_err().to_string();
        assert!(e.contains("transitions"), "{e}");
        assert!(model_from_json("{not json").is_err());
    }

    #[test]
    fn near_stochastic_rows_are_renormalized() {
        let text = r#"{"states": 2, "actions": 1, "observations": 1, "discount": 0.5, "initial": [[0, 1.0000005]],
            "transitions": [[0, 0, 1, 0.5], [0, 0, 0, 0.5000004], [1, 0, 1, 1.0]], "observation_fn": [[0, 0, 1.0], [1, 0, 1.0]]}"#;
        let m = model_from_json(text).unwrap();
        assert!(m.validate().is_empty());
    }

    #[test]
    fn demos_round_trip_exactly() {
        let env = make_maze();
        let ns = env.model.num_states();
        let belief: Vec<f64> = (0..ns).map(|s| (s + 1) as f64).collect();
        let total: f64 = belief.iter().sum();
        let belief: Vec<f64> = belief.iter().map(|b| b / total).collect();
        let demos = DemonstrationSet {
            trajectories: vec![Demonstration {
                steps: vec![DemoStep { z: 1, a: 2, belief }],
            }],
            source: DemoSource {
                expert: "mdp".into(),
                seed: 9,
            },
        };
        let text = demos_to_jsonl(&demos).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back = demos_from_jsonl(&text, &env.model).unwrap();
        assert_eq!(back, demos);
    }

    #[test]
    fn csv_carries_the_version_header() {
        let dir = std::env::temp_dir().join(format!("pomirl-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.csv");
        let curve = RewardCurve {
            mean: vec![0.0, 1.5],
            std: vec![0.0, 0.25],
        };
        write_curve_csv(&path, &curve).unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["t", "mean", "std"]);
        assert_eq!(rows[1], vec!["1", "1.5", "0.25"]);
        fs::remove_dir_all(&dir).unwrap();
    }
}
