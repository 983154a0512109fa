//! Reach-avoid specifications reduced to reachability of a target set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pomdp::{Pomdp, TERMINAL_LABEL};

#[derive(Debug, Clone, PartialEq)]
pub enum SpecKind {
    /// `F goal`
    Eventually(String),
    /// `G !bad`
    GloballyNot(String),
    /// `!a U b`
    NotUntil(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecFormula {
    pub kind: SpecKind,
    pub threshold: f64,
}

impl SpecFormula {
    pub fn new(kind: SpecKind, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::SpecSyntax(format!("threshold {threshold} outside [0, 1]")));
        }
        Ok(Self { kind, threshold })
    }

    pub fn labels(&self) -> Vec<&str> {
        match &self.kind {
            SpecKind::Eventually(g) => vec![g],
            SpecKind::GloballyNot(b) => vec![b],
            SpecKind::NotUntil(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for SpecFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SpecKind::Eventually(g) => write!(f, "F {g}")?,
            SpecKind::GloballyNot(b) => write!(f, "G !{b}")?,
            SpecKind::NotUntil(a, b) => write!(f, "!{a} U {b}")?,
        }
        write!(f, " >= {}", self.threshold)
    }
}

fn ident(tok: &str, line: &str) -> Result<String> {
    let ok = !tok.is_empty()
        && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && !tok.starts_with(|c: char| c.is_ascii_digit());
    if ok {
        Ok(tok.to_string())
    } else {
        Err(Error::SpecSyntax(line.to_string()))
    }
}

impl FromStr for SpecFormula {
    type Err = Error;

    /// Parses `F goal >= 0.95`, `G !bad >= 0.9` or `!a U b >= 0.9`.
    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::SpecSyntax(line.to_string());
        let (lhs, rhs) = line.split_once(">=").ok_or_else(bad)?;
        let threshold: f64 = rhs.trim().parse().map_err(|_| bad())?;
        let toks: Vec<&str> = lhs.split_whitespace().collect();
        let kind = match toks.as_slice() {
            ["F", g] => SpecKind::Eventually(ident(g, line)?),
            ["G", b] => SpecKind::GloballyNot(ident(b.strip_prefix('!').ok_or_else(bad)?, line)?),
            ["G", "!", b] => SpecKind::GloballyNot(ident(b, line)?),
            [a, "U", b] => SpecKind::NotUntil(ident(a.strip_prefix('!').ok_or_else(bad)?, line)?, ident(b, line)?),
            _ => return Err(bad()),
        };
        SpecFormula::new(kind, threshold)
    }
}

/// A compiled specification: satisfaction equals the probability of absorption in `targets`
/// on `model`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachSpec {
    pub model: Pomdp,
    pub targets: BTreeSet<usize>,
    /// Absorbing states outside the target set; their outflow is dropped like the targets'.
    pub sinks: BTreeSet<usize>,
    pub threshold: f64,
    pub formula: SpecFormula,
    pub provenance: String,
}

impl ReachSpec {
    pub fn is_stopped(&self, s: usize) -> bool {
        self.targets.contains(&s) || self.sinks.contains(&s)
    }

    /// The same specification on `model.restrict(keep)`.
    pub fn restrict(&self, keep: &[usize]) -> Result<ReachSpec> {
        let remap = |set: &BTreeSet<usize>| -> BTreeSet<usize> {
            keep.iter().enumerate().filter(|(_, s)| set.contains(s)).map(|(i, _)| i).collect()
        };
        Ok(ReachSpec {
            model: self.model.restrict(keep)?,
            targets: remap(&self.targets),
            sinks: remap(&self.sinks),
            threshold: self.threshold,
            formula: self.formula.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

fn label<'m>(model: &'m Pomdp, name: &str) -> Result<&'m BTreeSet<usize>> {
    model.label(name).ok_or_else(|| Error::UnknownLabel(name.to_string()))
}

pub fn compile_spec(model: &Pomdp, formula: &SpecFormula) -> Result<ReachSpec> {
    let mut m = model.clone();
    let (targets, provenance): (BTreeSet<usize>, String) = match &formula.kind {
        SpecKind::Eventually(goal) => {
            let goal = label(model, goal)?.clone();
            goal.iter().for_each(|&s| m.make_absorbing(s));
            (goal, "goal states made absorbing; targets = goal".into())
        }
        SpecKind::GloballyNot(bad) => {
            let bad = label(model, bad)?.clone();
            bad.iter().for_each(|&s| m.make_absorbing(s));
            let safe_ends = m
                .label(TERMINAL_LABEL)
                .map(|t| {
                    t.iter()
                        .copied()
                        .filter(|s| !bad.contains(s) && m.is_absorbing(*s))
                        .collect()
                })
                .unwrap_or_default();
            (safe_ends, "bad states made absorbing; targets = safe absorbing terminals".into())
        }
        SpecKind::NotUntil(a, b) => {
            let avoid = label(model, a)?.clone();
            let goal = label(model, b)?.clone();
            avoid.iter().chain(&goal).for_each(|&s| m.make_absorbing(s));
            let goal: BTreeSet<usize> = goal.difference(&avoid).copied().collect();
            (goal, format!("{a}-states trapped, {b}-states absorbing; targets = {b} minus {a}"))
        }
    };
    if targets.is_empty() {
        return Err(Error::EmptyTarget(formula.to_string()));
    }
    let sinks = (0..m.num_states())
        .filter(|s| !targets.contains(s) && m.is_absorbing(*s))
        .collect();
    Ok(ReachSpec {
        model: m,
        targets,
        sinks,
        threshold: formula.threshold,
        formula: formula.clone(),
        provenance,
    })
}

/// `Σ_{s∈T} μsp(s)`, clamped into `[0, 1]`.
pub fn satisfaction_probability(spec: &ReachSpec, mu_sp: &[f64]) -> f64 {
    let p: f64 = spec.targets.iter().map(|&s| mu_sp[s]).sum();
    if !(-1e-6..=1.0 + 1e-6).contains(&p) {
        log::warn!("satisfaction probability {p} outside [0, 1]; clamping");
    }
    p.clamp(0.0, 1.0)
}
