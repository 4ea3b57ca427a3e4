//! The tunable parameter space and assignments over it.
//!
//! A [`ConfigSpace`] is an ordered list of parameters, each owned by a node,
//! an edge adapter, or a node's merge operator. A [`ConfigAssignment`] maps
//! every parameter name to a value in its domain. The generators here
//! (`default`, `sample`, `mutate`, `inherit`) always return assignments that
//! pass [`ConfigSpace::validate`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Limit on the number of grid points enumerated for oracles.
pub const DEFAULT_FLOAT_GRID: u32 = 11;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Owner {
    Node(String),
    Edge(String),
    Merge(String),
}

impl Owner {
    pub fn node_id(&self) -> Option<&str> {
        match self {
            Owner::Node(id) | Owner::Merge(id) => Some(id),
            Owner::Edge(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamKind {
    Choice {
        values: Vec<String>,
    },
    IntRange {
        lo: i64,
        hi: i64,
    },
    FloatRange {
        lo: f64,
        hi: f64,
        /// When set, values are restricted to this many evenly spaced points.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<u32>,
    },
    Text {
        vocabulary: Vec<String>,
        max_tokens: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        initial: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Choice(String),
    Text(Vec<String>),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_choice(&self) -> Option<&str> {
        match self {
            ParamValue::Choice(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[String]> {
        match self {
            ParamValue::Text(t) => Some(t),
            _ => None,
        }
    }

    /// Text rendering: choices verbatim, token sequences space-joined.
    pub fn as_text(&self) -> Option<String> {
        match self {
            ParamValue::Choice(s) => Some(s.clone()),
            ParamValue::Text(t) => Some(t.join(" ")),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub owner: Owner,
    #[serde(flatten)]
    pub kind: ParamKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("value for {0} outside its domain")]
    OutOfDomain(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid parameter spec {name}: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("discretized space has more than {limit} assignments")]
    SpaceTooLarge { limit: usize },
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, owner: Owner, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            owner,
            kind,
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::InvalidSpec {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(bad("empty name"));
        }
        match &self.kind {
            ParamKind::Choice { values } => {
                if values.is_empty() {
                    return Err(bad("empty choice list"));
                }
                let unique: BTreeSet<_> = values.iter().collect();
                if unique.len() != values.len() {
                    return Err(bad("duplicate choice"));
                }
            }
            ParamKind::IntRange { lo, hi } => {
                if lo > hi {
                    return Err(bad("lo > hi"));
                }
            }
            ParamKind::FloatRange { lo, hi, grid } => {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(bad("invalid float range"));
                }
                if let Some(n) = grid {
                    if *n < 2 && lo != hi {
                        return Err(bad("grid needs at least 2 points"));
                    }
                    if *n == 0 {
                        return Err(bad("grid needs at least 1 point"));
                    }
                }
            }
            ParamKind::Text {
                vocabulary,
                max_tokens,
                initial,
            } => {
                if vocabulary.is_empty() {
                    return Err(bad("empty vocabulary"));
                }
                if initial.len() > *max_tokens || initial.iter().any(|t| !vocabulary.contains(t)) {
                    return Err(bad("initial text outside vocabulary or too long"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::Choice { values }, ParamValue::Choice(v)) => values.contains(v),
            (ParamKind::IntRange { lo, hi }, ParamValue::Int(v)) => lo <= v && v <= hi,
            (ParamKind::FloatRange { lo, hi, grid }, ParamValue::Float(v)) => {
                if !(v.is_finite() && lo <= v && v <= hi) {
                    return false;
                }
                match grid {
                    Some(n) => grid_points(*lo, *hi, *n).iter().any(|p| p == v),
                    None => true,
                }
            }
            (
                ParamKind::Text {
                    vocabulary, max_tokens, ..
                },
                ParamValue::Text(tokens),
            ) => tokens.len() <= *max_tokens && tokens.iter().all(|t| vocabulary.contains(t)),
            _ => false,
        }
    }

    pub fn default_value(&self) -> ParamValue {
        match &self.kind {
            ParamKind::Choice { values } => ParamValue::Choice(values[0].clone()),
            ParamKind::IntRange { lo, .. } => ParamValue::Int(*lo),
            ParamKind::FloatRange { lo, .. } => ParamValue::Float(*lo),
            ParamKind::Text { initial, .. } => ParamValue::Text(initial.clone()),
        }
    }

    /// Finite value list used by exhaustive enumeration. Continuous ranges
    /// are sampled at their grid (or [`DEFAULT_FLOAT_GRID`] points).
    pub fn grid_values(&self) -> Vec<ParamValue> {
        match &self.kind {
            ParamKind::Choice { values } => values.iter().cloned().map(ParamValue::Choice).collect(),
            ParamKind::IntRange { lo, hi } => (*lo..=*hi).map(ParamValue::Int).collect(),
            ParamKind::FloatRange { lo, hi, grid } => grid_points(*lo, *hi, grid.unwrap_or(DEFAULT_FLOAT_GRID))
                .into_iter()
                .map(ParamValue::Float)
                .collect(),
            ParamKind::Text {
                vocabulary, max_tokens, ..
            } => {
                let mut out = vec![Vec::new()];
                let mut frontier = vec![Vec::<String>::new()];
                for _ in 0..*max_tokens {
                    let mut next = Vec::new();
                    for prefix in &frontier {
                        for tok in vocabulary {
                            let mut seq = prefix.clone();
                            seq.push(tok.clone());
                            next.push(seq);
                        }
                    }
                    out.extend(next.iter().cloned());
                    frontier = next;
                }
                out.into_iter().map(ParamValue::Text).collect()
            }
        }
    }

    /// Number of grid values, saturating.
    pub fn grid_len(&self) -> usize {
        match &self.kind {
            ParamKind::Choice { values } => values.len(),
            ParamKind::IntRange { lo, hi } => {
                usize::try_from(hi.saturating_sub(*lo)).map_or(usize::MAX, |n| n.saturating_add(1))
            }
            ParamKind::FloatRange { grid, lo, hi } => {
                if lo == hi {
                    1
                } else {
                    grid.unwrap_or(DEFAULT_FLOAT_GRID) as usize
                }
            }
            ParamKind::Text {
                vocabulary, max_tokens, ..
            } => {
                let v = vocabulary.len();
                let mut total: usize = 1;
                let mut power: usize = 1;
                for _ in 0..*max_tokens {
                    power = power.saturating_mul(v);
                    total = total.saturating_add(power);
                }
                total
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match &self.kind {
            ParamKind::Choice { values } => ParamValue::Choice(values.choose(rng).expect("nonempty").clone()),
            ParamKind::IntRange { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            ParamKind::FloatRange { lo, hi, grid } => match grid {
                Some(n) => {
                    let points = grid_points(*lo, *hi, *n);
                    ParamValue::Float(*points.choose(rng).expect("nonempty grid"))
                }
                None => ParamValue::Float(if lo == hi { *lo } else { rng.random_range(*lo..=*hi) }),
            },
            ParamKind::Text {
                vocabulary, max_tokens, ..
            } => {
                if *max_tokens == 0 {
                    return ParamValue::Text(Vec::new());
                }
                let len = rng.random_range(1..=*max_tokens);
                ParamValue::Text(
                    (0..len)
                        .map(|_| vocabulary.choose(rng).expect("nonempty").clone())
                        .collect(),
                )
            }
        }
    }

    /// One primitive edit. `hint` steers the edit when it names a choice
    /// value or a vocabulary token.
    fn mutate(&self, value: &ParamValue, hint: Option<&str>, rng: &mut ChaCha8Rng) -> ParamValue {
        match (&self.kind, value) {
            (ParamKind::Choice { values }, _) => {
                if let Some(h) = hint.filter(|h| values.iter().any(|v| v == h)) {
                    return ParamValue::Choice(h.to_string());
                }
                ParamValue::Choice(values.choose(rng).expect("nonempty").clone())
            }
            (ParamKind::IntRange { lo, hi }, ParamValue::Int(v)) => {
                let step = ((hi - lo) / 10).max(1);
                let next = if rng.random_bool(0.5) { v + step } else { v - step };
                ParamValue::Int(next.clamp(*lo, *hi))
            }
            (ParamKind::FloatRange { lo, hi, grid }, ParamValue::Float(v)) => {
                let step = (hi - lo) / 10.0;
                let next = if rng.random_bool(0.5) { v + step } else { v - step };
                let next = next.clamp(*lo, *hi);
                ParamValue::Float(match grid {
                    Some(n) => snap(next, *lo, *hi, *n),
                    None => next,
                })
            }
            (
                ParamKind::Text {
                    vocabulary, max_tokens, ..
                },
                ParamValue::Text(tokens),
            ) => {
                let mut tokens = tokens.clone();
                if let Some(h) = hint.filter(|h| vocabulary.iter().any(|v| v == h)) {
                    if !tokens.iter().any(|t| t == h) {
                        if tokens.len() < *max_tokens {
                            tokens.push(h.to_string());
                        } else if !tokens.is_empty() {
                            let at = rng.random_range(0..tokens.len());
                            tokens[at] = h.to_string();
                        }
                        return ParamValue::Text(tokens);
                    }
                }
                text_edit(&mut tokens, vocabulary, *max_tokens, rng);
                ParamValue::Text(tokens)
            }
            // value of the wrong kind: replace with a fresh sample
            _ => self.sample(rng),
        }
    }

    /// Whether a hint would change `value` when applied.
    pub fn hint_applies(&self, value: &ParamValue, hint: &str) -> bool {
        match (&self.kind, value) {
            (ParamKind::Choice { values }, ParamValue::Choice(v)) => values.iter().any(|c| c == hint) && v != hint,
            (
                ParamKind::Text {
                    vocabulary, max_tokens, ..
                },
                ParamValue::Text(tokens),
            ) => *max_tokens > 0 && vocabulary.iter().any(|t| t == hint) && !tokens.iter().any(|t| t == hint),
            _ => false,
        }
    }

    /// Carries `old` into this domain: same-kind values are clamped or
    /// filtered into range, anything else falls back to the default.
    fn inherit(&self, old: &ParamValue) -> ParamValue {
        match (&self.kind, old) {
            (ParamKind::Choice { values }, ParamValue::Choice(v)) if values.contains(v) => old.clone(),
            (ParamKind::IntRange { lo, hi }, ParamValue::Int(v)) => ParamValue::Int((*v).clamp(*lo, *hi)),
            (ParamKind::FloatRange { lo, hi, grid }, ParamValue::Float(v)) if v.is_finite() => {
                let c = v.clamp(*lo, *hi);
                ParamValue::Float(match grid {
                    Some(n) => snap(c, *lo, *hi, *n),
                    None => c,
                })
            }
            (
                ParamKind::Text {
                    vocabulary, max_tokens, ..
                },
                ParamValue::Text(tokens),
            ) => ParamValue::Text(
                tokens
                    .iter()
                    .filter(|t| vocabulary.contains(t))
                    .take(*max_tokens)
                    .cloned()
                    .collect(),
            ),
            _ => self.default_value(),
        }
    }
}

fn text_edit(tokens: &mut Vec<String>, vocabulary: &[String], max_tokens: usize, rng: &mut ChaCha8Rng) {
    #[derive(Clone, Copy)]
    enum Op {
        Insert,
        Delete,
        Replace,
    }
    let mut ops = Vec::with_capacity(3);
    if tokens.len() < max_tokens {
        ops.push(Op::Insert);
    }
    if !tokens.is_empty() {
        ops.push(Op::Delete);
        ops.push(Op::Replace);
    }
    let Some(op) = ops.choose(rng).copied() else {
        return;
    };
    match op {
        Op::Insert => {
            let at = rng.random_range(0..=tokens.len());
            let tok = vocabulary.choose(rng).expect("nonempty").clone();
            tokens.insert(at, tok);
        }
        Op::Delete => {
            let at = rng.random_range(0..tokens.len());
            tokens.remove(at);
        }
        Op::Replace => {
            let at = rng.random_range(0..tokens.len());
            tokens[at] = vocabulary.choose(rng).expect("nonempty").clone();
        }
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn grid_points(lo: f64, hi: f64, n: u32) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    let width = hi - lo;
    let last = f64::from(n - 1);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + width * f64::from(i) / last
            }
        })
        .collect()
}

fn snap(x: f64, lo: f64, hi: f64, n: u32) -> f64 {
    grid_points(lo, hi, n)
        .into_iter()
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
        .unwrap_or(lo)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigAssignment(pub BTreeMap<String, ParamValue>);

impl ConfigAssignment {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: ParamValue) {
        self.0.insert(name.into(), value);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Canonical single-line encoding, used as a dedup key.
    pub fn key(&self) -> String {
        serde_json::to_string(&self.0).expect("assignment serializes")
    }

    /// Names whose values differ between the two assignments.
    pub fn diff(&self, other: &ConfigAssignment) -> Vec<String> {
        let names: BTreeSet<&String> = self.0.keys().chain(other.0.keys()).collect();
        names
            .into_iter()
            .filter(|n| self.0.get(*n) != other.0.get(*n))
            .cloned()
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpace {
    pub params: Vec<ParamSpec>,
}

impl ConfigSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self, ConfigError> {
        let space = Self { params };
        space.check()?;
        Ok(space)
    }

    /// Checks the per-parameter invariants and name uniqueness.
    pub fn check(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for p in &self.params {
            p.check()?;
            if !seen.insert(p.name.as_str()) {
                return Err(ConfigError::InvalidSpec {
                    name: p.name.clone(),
                    reason: "duplicate name".into(),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn validate(&self, a: &ConfigAssignment) -> Result<(), ConfigError> {
        for p in &self.params {
            match a.get(&p.name) {
                None => return Err(ConfigError::MissingParam(p.name.clone())),
                Some(v) if !p.contains(v) => return Err(ConfigError::OutOfDomain(p.name.clone())),
                Some(_) => {}
            }
        }
        if let Some(extra) = a.0.keys().find(|k| !self.contains(k)) {
            return Err(ConfigError::UnknownParam(extra.clone()));
        }
        Ok(())
    }

    pub fn default_assignment(&self) -> ConfigAssignment {
        ConfigAssignment(
            self.params
                .iter()
                .map(|p| (p.name.clone(), p.default_value()))
                .collect(),
        )
    }

    pub fn sample(&self, seed: u64) -> ConfigAssignment {
        let mut rng = seed::rng(seed);
        ConfigAssignment(
            self.params
                .iter()
                .map(|p| (p.name.clone(), p.sample(&mut rng)))
                .collect(),
        )
    }

    /// Applies `intensity` primitive edits, each to a uniformly chosen
    /// parameter.
    pub fn mutate(&self, a: &ConfigAssignment, intensity: usize, seed: u64) -> ConfigAssignment {
        let names: Vec<&str> = self.names().collect();
        self.mutate_among(a, &names, intensity, seed)
    }

    /// Like [`ConfigSpace::mutate`] but only touches the listed parameters.
    pub fn mutate_among(&self, a: &ConfigAssignment, names: &[&str], intensity: usize, seed: u64) -> ConfigAssignment {
        let mut out = a.clone();
        let targets: Vec<&ParamSpec> = names.iter().filter_map(|n| self.get(n)).collect();
        if targets.is_empty() {
            return out;
        }
        let mut rng = seed::rng(seed);
        for _ in 0..intensity {
            let p = targets[rng.random_range(0..targets.len())];
            let current = out.get(&p.name).cloned().unwrap_or_else(|| p.default_value());
            out.set(p.name.clone(), p.mutate(&current, None, &mut rng));
        }
        out
    }

    /// Single edit of one named parameter, optionally steered by a hint.
    pub fn mutate_param(&self, a: &ConfigAssignment, name: &str, hint: Option<&str>, seed: u64) -> ConfigAssignment {
        let mut out = a.clone();
        if let Some(p) = self.get(name) {
            let mut rng = seed::rng(seed);
            let current = out.get(name).cloned().unwrap_or_else(|| p.default_value());
            out.set(name, p.mutate(&current, hint, &mut rng));
        }
        out
    }

    /// Warm-start inheritance: shared names keep (clamped) values, new
    /// names take defaults, removed names are dropped.
    pub fn inherit(&self, old: &ConfigAssignment) -> ConfigAssignment {
        ConfigAssignment(
            self.params
                .iter()
                .map(|p| {
                    let v = match old.get(&p.name) {
                        Some(v) => p.inherit(v),
                        None => p.default_value(),
                    };
                    (p.name.clone(), v)
                })
                .collect(),
        )
    }

    /// Size of the discretized space, saturating.
    pub fn grid_size(&self) -> usize {
        self.params
            .iter()
            .fold(1usize, |acc, p| acc.saturating_mul(p.grid_len()))
    }

    /// Every assignment of the discretized space in mixed-radix order
    /// (last parameter varies fastest).
    pub fn enumerate(&self, limit: usize) -> Result<Vec<ConfigAssignment>, ConfigError> {
        if self.grid_size() > limit {
            return Err(ConfigError::SpaceTooLarge { limit });
        }
        let axes: Vec<Vec<ParamValue>> = self.params.iter().map(|p| p.grid_values()).collect();
        let mut out = Vec::with_capacity(self.grid_size());
        let mut idx = vec![0usize; axes.len()];
        loop {
            out.push(ConfigAssignment(
                self.params
                    .iter()
                    .zip(&idx)
                    .zip(&axes)
                    .map(|((p, &i), axis)| (p.name.clone(), axis[i].clone()))
                    .collect(),
            ));
            let mut k = axes.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Adds and removes parameters. Added names replace same-named ones.
    pub fn with_delta(&self, added: &[ParamSpec], removed: &[String]) -> ConfigSpace {
        let mut params: Vec<ParamSpec> = self
            .params
            .iter()
            .filter(|p| !removed.contains(&p.name) && !added.iter().any(|a| a.name == p.name))
            .cloned()
            .collect();
        params.extend(added.iter().cloned());
        ConfigSpace { params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn choice(name: &str, values: &[&str]) -> ParamSpec {
        ParamSpec::new(
            name,
            Owner::Node("n".into()),
            ParamKind::Choice {
                values: values.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    fn text(name: &str, vocab: &[&str], max: usize, initial: &[&str]) -> ParamSpec {
        ParamSpec::new(
            name,
            Owner::Node("n".into()),
            ParamKind::Text {
                vocabulary: vocab.iter().map(|s| s.to_string()).collect(),
                max_tokens: max,
                initial: initial.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    fn int(name: &str, lo: i64, hi: i64) -> ParamSpec {
        ParamSpec::new(name, Owner::Node("n".into()), ParamKind::IntRange { lo, hi })
    }

    fn float(name: &str, lo: f64, hi: f64, grid: Option<u32>) -> ParamSpec {
        ParamSpec::new(name, Owner::Node("n".into()), ParamKind::FloatRange { lo, hi, grid })
    }

    fn tokens(s: &str) -> ParamValue {
        ParamValue::Text(s.split_whitespace().map(String::from).collect())
    }

    fn mixed_space() -> ConfigSpace {
        ConfigSpace::new(vec![
            choice("model", &["a", "b", "c"]),
            int("k", 1, 6),
            float("temp", 0.0, 1.0, None),
            float("gain", 0.0, 2.0, Some(11)),
            text("prompt", &["answer", "briefly", "validate", "check"], 3, &["answer"]),
        ])
        .unwrap()
    }

    #[test]
    fn empty_space_accepts_empty_assignment() {
        let space = ConfigSpace::default();
        assert_eq!(space.validate(&ConfigAssignment::default()), Ok(()));
        assert!(space.default_assignment().is_empty());
    }

    #[test]
    fn int_out_of_range_is_rejected() {
        let space = ConfigSpace::new(vec![int("k", 1, 6)]).unwrap();
        let mut a = ConfigAssignment::default();
        a.set("k", ParamValue::Int(7));
        assert_eq!(space.validate(&a), Err(ConfigError::OutOfDomain("k".into())));
        let empty = ConfigAssignment::default();
        assert_eq!(space.validate(&empty), Err(ConfigError::MissingParam("k".into())));
    }

    #[test]
    fn model_choice_accepts_listed_model() {
        let space = ConfigSpace::new(vec![choice(
            "model",
            &[
                "gpt-4o-mini-2024-07-18",
                "gpt-4.1-mini-2025-04-14",
                "gpt-4.1-nano-2025-04-14",
            ],
        )])
        .unwrap();
        let mut a = ConfigAssignment::default();
        a.set("model", ParamValue::Choice("gpt-4.1-mini-2025-04-14".into()));
        assert_eq!(space.validate(&a), Ok(()));
    }

    #[test]
    fn spec_invariants() {
        assert!(ConfigSpace::new(vec![int("k", 3, 1)]).is_err());
        assert!(ConfigSpace::new(vec![choice("c", &[])]).is_err());
        assert!(ConfigSpace::new(vec![choice("c", &["a", "a"])]).is_err());
        assert!(ConfigSpace::new(vec![text("t", &[], 2, &[])]).is_err());
        assert!(ConfigSpace::new(vec![int("k", 1, 2), int("k", 1, 2)]).is_err());
    }

    #[test]
    fn defaults() {
        let space = ConfigSpace::new(vec![
            choice("c", &["A", "B"]),
            float("f", 0.0, 1.0, None),
            int("i", -2, 5),
            text("t", &["x"], 2, &["x"]),
        ])
        .unwrap();
        let a = space.default_assignment();
        assert_eq!(a.get("c"), Some(&ParamValue::Choice("A".into())));
        assert_eq!(a.get("f"), Some(&ParamValue::Float(0.0)));
        assert_eq!(a.get("i"), Some(&ParamValue::Int(-2)));
        assert_eq!(a.get("t"), Some(&tokens("x")));
    }

    #[test]
    fn sampling_is_seeded() {
        let space = mixed_space();
        assert_eq!(space.sample(17), space.sample(17));
        let single = ConfigSpace::new(vec![choice("c", &["A"])]).unwrap();
        for s in 0..50 {
            assert_eq!(single.sample(s).get("c"), Some(&ParamValue::Choice("A".into())));
        }
    }

    #[test]
    fn sampling_frequencies_are_uniform() {
        // Oracle: each of 4 choices has probability 1/4; over 10k draws the
        // binomial standard error is ~0.43%, so +-2% is a >4 sigma band.
        let space = ConfigSpace::new(vec![choice("c", &["a", "b", "c", "d"])]).unwrap();
        let mut counts = BTreeMap::new();
        let n = 10_000;
        for s in 0..n {
            let v = space.sample(s).get("c").unwrap().as_choice().unwrap().to_string();
            *counts.entry(v).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        let mut chi2 = 0.0;
        for c in counts.values() {
            let freq = *c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
            let expected = n as f64 / 4.0;
            chi2 += (*c as f64 - expected).powi(2) / expected;
        }
        // chi-square 3 dof, p = 0.001 critical value
        assert!(chi2 < 16.27, "chi2 {chi2}");
    }

    #[test]
    fn zero_intensity_is_identity() {
        let space = mixed_space();
        let a = space.sample(3);
        assert_eq!(space.mutate(&a, 0, 99), a);
    }

    #[test]
    fn single_choice_never_changes() {
        let space = ConfigSpace::new(vec![choice("c", &["only"])]).unwrap();
        let a = space.default_assignment();
        for s in 0..100 {
            assert_eq!(space.mutate(&a, 3, s), a);
        }
    }

    #[test]
    fn one_replace_edit_reaches_expected_neighbor() {
        // Enumerate every 1-edit neighbor of "answer briefly" by hand and
        // check that mutation only lands in that set and does reach the
        // replacement "answer validate".
        let vocab = ["answer", "briefly", "validate"];
        let space = ConfigSpace::new(vec![text("p", &vocab, 3, &[])]).unwrap();
        let start = tokens("answer briefly");
        let mut neighbors = BTreeSet::new();
        let base: Vec<String> = vec!["answer".into(), "briefly".into()];
        for i in 0..=base.len() {
            for t in vocab {
                let mut s = base.clone();
                s.insert(i, t.to_string());
                neighbors.insert(s);
            }
        }
        for i in 0..base.len() {
            let mut s = base.clone();
            s.remove(i);
            neighbors.insert(s);
            for t in vocab {
                let mut s = base.clone();
                s[i] = t.to_string();
                neighbors.insert(s);
            }
        }
        let mut a = ConfigAssignment::default();
        a.set("p", start);
        let mut reached = false;
        for s in 0..2000 {
            let m = space.mutate(&a, 1, s);
            let toks = m.get("p").unwrap().as_tokens().unwrap().to_vec();
            assert!(neighbors.contains(&toks), "{toks:?}");
            reached |= toks == ["answer", "validate"];
        }
        assert!(reached);
    }

    #[test]
    fn numeric_steps() {
        let space = ConfigSpace::new(vec![int("k", 0, 100), float("g", 0.0, 2.0, Some(11))]).unwrap();
        let mut a = ConfigAssignment::default();
        a.set("k", ParamValue::Int(50));
        a.set("g", ParamValue::Float(1.0));
        for s in 0..200 {
            let m = space.mutate_param(&a, "k", None, s);
            let k = m.get("k").unwrap();
            assert!(k == &ParamValue::Int(60) || k == &ParamValue::Int(40));
            let m = space.mutate_param(&a, "g", None, s);
            let g = m.get("g").unwrap().as_f64().unwrap();
            assert!((g - 1.2).abs() < 1e-12 || (g - 0.8).abs() < 1e-12, "{g}");
            assert!(space.validate(&m).is_ok());
        }
    }

    #[test]
    fn hinted_text_edit_inserts_token() {
        let space = ConfigSpace::new(vec![text("p", &["a", "b", "c"], 2, &[])]).unwrap();
        let mut a = ConfigAssignment::default();
        a.set("p", tokens("a"));
        let m = space.mutate_param(&a, "p", Some("c"), 1);
        assert_eq!(m.get("p"), Some(&tokens("a c")));
        a.set("p", tokens("a b"));
        let m = space.mutate_param(&a, "p", Some("c"), 1);
        let t = m.get("p").unwrap().as_tokens().unwrap();
        assert!(t.contains(&"c".to_string()) && t.len() == 2);
        assert!(!space.get("p").unwrap().hint_applies(&tokens("c"), "c"));
    }

    #[test]
    fn inherit_identical_space_is_identity() {
        let space = mixed_space();
        let a = space.sample(5);
        assert_eq!(space.inherit(&a), a);
    }

    #[test]
    fn inherit_new_prompt_param_takes_initial_text() {
        let old_space = ConfigSpace::new(vec![
            choice("model", &["a", "b"]),
            text("prompt_ensure_correct_response", &["fix", "all"], 2, &[]),
        ])
        .unwrap();
        let mut old = old_space.default_assignment();
        old.set("model", ParamValue::Choice("b".into()));
        old.set("prompt_ensure_correct_response", tokens("fix all"));
        let mut params = old_space.params.clone();
        params.push(text(
            "prompt_validate_constraints",
            &["you", "are", "a", "validator"],
            8,
            &["you", "are", "a", "validator"],
        ));
        let new_space = ConfigSpace::new(params).unwrap();
        let inherited = new_space.inherit(&old);
        assert_eq!(
            inherited.get("prompt_validate_constraints"),
            Some(&tokens("you are a validator"))
        );
        assert_eq!(inherited.get("model"), old.get("model"));
        assert_eq!(
            inherited.get("prompt_ensure_correct_response"),
            old.get("prompt_ensure_correct_response")
        );
    }

    #[test]
    fn inherit_clamps_and_drops() {
        let old_space = ConfigSpace::new(vec![int("k", 0, 10), int("gone", 0, 1)]).unwrap();
        let mut old = old_space.default_assignment();
        old.set("k", ParamValue::Int(9));
        let new_space = ConfigSpace::new(vec![int("k", 1, 6)]).unwrap();
        let inherited = new_space.inherit(&old);
        assert_eq!(inherited.get("k"), Some(&ParamValue::Int(6)));
        assert!(inherited.get("gone").is_none());
    }

    #[test]
    fn grid_enumeration() {
        let space = ConfigSpace::new(vec![
            choice("c", &["a", "b"]),
            float("g", 0.0, 2.0, Some(11)),
            text("t", &["x", "y"], 2, &[]),
        ])
        .unwrap();
        assert_eq!(space.grid_size(), 2 * 11 * 7);
        let all = space.enumerate(10_000).unwrap();
        assert_eq!(all.len(), 154);
        let keys: BTreeSet<String> = all.iter().map(|a| a.key()).collect();
        assert_eq!(keys.len(), 154);
        assert!(all.iter().all(|a| space.validate(a).is_ok()));
        assert!(matches!(space.enumerate(100), Err(ConfigError::SpaceTooLarge { .. })));
        let pts = grid_points(0.0, 2.0, 11);
        assert_eq!(pts[5], 1.0);
        assert_eq!(pts[10], 2.0);
    }

    proptest! {
        #[test]
        fn generators_are_closed(seed in any::<u64>(), intensity in 0usize..6) {
            let space = mixed_space();
            let a = space.sample(seed);
            prop_assert!(space.validate(&a).is_ok());
            let m = space.mutate(&a, intensity, seed ^ 1);
            prop_assert!(space.validate(&m).is_ok());
            prop_assert!(a.diff(&m).len() <= intensity);
            let narrower = ConfigSpace::new(vec![
                choice("model", &["a", "b"]),
                int("k", 2, 4),
                float("temp", 0.2, 0.4, None),
                text("prompt", &["answer", "check"], 1, &[]),
                int("fresh", 0, 3),
            ]).unwrap();
            let inherited = narrower.inherit(&m);
            prop_assert!(narrower.validate(&inherited).is_ok());
        }
    }
}
