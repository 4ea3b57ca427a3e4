//! Text documents for graphs, spaces, assignments, run specs and task
//! bundles. Output is pretty JSON with sorted keys, so equal values give
//! equal bytes.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{self, TaskBundle};
use crate::config::{ConfigAssignment, ConfigSpace};
use crate::eval::TaskInstance;
use crate::graph::GraphSpec;
use crate::maestro::RunSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocError {
    #[error("malformed document: {0}")]
    Json(String),
    #[error("invalid document: {0}")]
    Invalid(String),
}

/// Pretty JSON with object keys sorted, followed by a newline.
pub fn to_canonical<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("document serializes");
    let mut s = serde_json::to_string_pretty(&v).expect("document serializes");
    s.push('\n');
    s
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T, DocError> {
    serde_json::from_str(text).map_err(|e| DocError::Json(e.to_string()))
}

/// A graph in canonical node and edge order.
pub fn parse_graph(text: &str) -> Result<GraphSpec, DocError> {
    let g: GraphSpec = parse(text)?;
    for n in &g.nodes {
        n.input_schema.check().map_err(DocError::Invalid)?;
        n.output_schema.check().map_err(DocError::Invalid)?;
    }
    Ok(g.canonical())
}

pub fn parse_space(text: &str) -> Result<ConfigSpace, DocError> {
    let s: ConfigSpace = parse(text)?;
    s.check().map_err(|e| DocError::Invalid(e.to_string()))?;
    Ok(s)
}

pub fn parse_assignment(text: &str) -> Result<ConfigAssignment, DocError> {
    parse(text)
}

pub fn parse_run_spec(text: &str) -> Result<RunSpec, DocError> {
    let spec: RunSpec = parse(text)?;
    spec.check().map_err(|e| DocError::Invalid(e.to_string()))?;
    Ok(spec)
}

fn default_kinds() -> usize {
    4
}
fn default_dim() -> usize {
    8
}
fn default_noise() -> f64 {
    0.05
}

/// A built-in bundle family with optional overrides of its design and
/// task sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleDoc {
    /// `constraintsat`, `noisychain` or `identity`.
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kinds")]
    pub constraint_kinds: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<ConfigSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<ConfigAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Vec<TaskInstance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Vec<TaskInstance>>,
}

pub fn parse_bundle_doc(text: &str) -> Result<BundleDoc, DocError> {
    let d: BundleDoc = parse(text)?;
    if !(2..=6).contains(&d.constraint_kinds) {
        return Err(DocError::Invalid("constraint_kinds must be in [2, 6]".into()));
    }
    if d.dim == 0 || !d.noise.is_finite() || d.noise < 0.0 {
        return Err(DocError::Invalid("dim must be positive and noise non-negative".into()));
    }
    Ok(d)
}

/// Builds the bundle a document describes and checks that it validates.
pub fn load_bundle(doc: &BundleDoc) -> Result<TaskBundle, DocError> {
    let mut b = match doc.kind.as_str() {
        "constraintsat" => bench::make_constraintsat(doc.constraint_kinds, doc.seed),
        "noisychain" => bench::make_noisychain(doc.dim, doc.noise, doc.seed),
        "identity" => bench::make_identity(doc.seed),
        other => return Err(DocError::Invalid(format!("unknown bundle kind {other:?}"))),
    };
    if let Some(g) = &doc.graph {
        b.graph = g.clone().canonical();
    }
    if let Some(s) = &doc.space {
        b.space = s.clone();
        if doc.assignment.is_none() {
            b.assignment = b.space.inherit(&b.assignment);
        }
    }
    if let Some(a) = &doc.assignment {
        b.assignment = a.clone();
    }
    if let Some(t) = &doc.train {
        b.train = t.clone();
    }
    if let Some(t) = &doc.test {
        b.test = t.clone();
    }
    b.check().map_err(|e| DocError::Invalid(e.to_string()))?;
    Ok(b)
}
