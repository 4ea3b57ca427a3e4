use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::NodeParams;
use super::validate::ValidatedGraph;
use super::{AdapterSpec, EdgeSpec, GraphMode, MergeStrategy, NodeSpec, Transform};
use crate::budget::{BudgetExceeded, BudgetLedger};
use crate::config::ConfigAssignment;
use crate::seed;
use crate::value::Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    BudgetExceeded(#[from] BudgetExceeded),
    #[error("no input provided for input node {0}")]
    MissingInput(String),
    #[error("input for node {0} does not conform to its schema")]
    InvalidInput(String),
    #[error("config has no value for parameter {0}")]
    MissingParam(String),
    #[error("graph mode does not match the requested execution")]
    WrongMode,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("incoming values do not cover the in-edges of node {0}")]
    IncomingMismatch(String),
    #[error("adapter failure on edge {edge}: {detail}")]
    AdapterFailure { edge: String, detail: String },
}

/// Why a rollout stopped early. Visible to evaluators as the designated
/// failure output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<String>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRun {
    pub node: String,
    pub step: u32,
    pub input: Value,
    /// `None` when the node failed.
    pub output: Option<Value>,
    pub seed: u64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeActivation {
    pub edge: String,
    pub step: u32,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub seed: u64,
    pub steps: u32,
    pub order: Vec<String>,
    pub nodes: Vec<NodeRun>,
    pub edges: Vec<EdgeActivation>,
    /// Outputs of the designated output nodes at the final step. Empty on
    /// failure.
    pub outputs: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub cost: f64,
    /// `(node, note)` pairs emitted by node functions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<(String, String)>,
}

impl ExecutionTrace {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn output(&self, node: &str) -> Option<&Value> {
        self.outputs.get(node)
    }
}

fn node_params(node: &NodeSpec, config: &ConfigAssignment) -> Result<NodeParams, ExecError> {
    node.params
        .iter()
        .map(|(role, name)| {
            config
                .get(name)
                .cloned()
                .map(|v| (role.clone(), v))
                .ok_or_else(|| ExecError::MissingParam(name.clone()))
        })
        .collect::<Result<_, _>>()
        .map(NodeParams)
}

fn param_f64(params: &BTreeMap<String, String>, role: &str, config: &ConfigAssignment) -> Option<f64> {
    params.get(role).and_then(|n| config.get(n)).and_then(|v| v.as_f64())
}

fn param_text(params: &BTreeMap<String, String>, role: &str, config: &ConfigAssignment) -> Option<String> {
    params.get(role).and_then(|n| config.get(n)).and_then(|v| v.as_text())
}

fn render_template(template: &str, value: &Value) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let key = &after[..close];
        if key.is_empty() {
            out.push_str(&value.render());
        } else {
            let field = value
                .get_path(key)
                .ok_or_else(|| format!("template placeholder {{{key}}} missing"))?;
            out.push_str(&field.render());
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn apply_adapter(adapter: &AdapterSpec, value: &Value, config: &ConfigAssignment) -> Result<Value, String> {
    match &adapter.transform {
        Transform::Identity => Ok(value.clone()),
        Transform::FieldProject { path } => value
            .get_path(path)
            .cloned()
            .ok_or_else(|| format!("path {path:?} missing")),
        Transform::TemplateRender { template } => {
            let template = param_text(&adapter.params, "template", config).unwrap_or_else(|| template.clone());
            render_template(&template, value).map(Value::Text)
        }
        Transform::ScalarAffine { a, b } => {
            let a = param_f64(&adapter.params, "a", config).unwrap_or(*a);
            let b = param_f64(&adapter.params, "b", config).unwrap_or(*b);
            match value {
                Value::Number(x) => Ok(Value::Number(a * x + b)),
                Value::Vector(xs) => Ok(Value::Vector(xs.iter().map(|x| a * x + b).collect())),
                _ => Err("scalar-affine needs a number or vector".into()),
            }
        }
    }
}

fn merge(node: &NodeSpec, present: Vec<Value>, config: &ConfigAssignment) -> Result<Value, String> {
    if present.is_empty() {
        return Ok(node.default_input.clone());
    }
    match &node.merge.strategy {
        MergeStrategy::Identity => {
            let mut present = present;
            if present.len() != 1 {
                return Err("identity merge with several inputs".into());
            }
            Ok(present.pop().expect("one value"))
        }
        MergeStrategy::RecordUnion => {
            let mut out: BTreeMap<String, Value> = BTreeMap::new();
            for v in present {
                let Value::Record(fields) = v else {
                    return Err("record-union over a non-record".into());
                };
                for (k, v) in fields {
                    if !v.is_absent() || !out.contains_key(&k) {
                        out.insert(k, v);
                    }
                }
            }
            Ok(Value::Record(out))
        }
        MergeStrategy::ConcatText { separator } => {
            let sep = param_text(&node.merge.params, "separator", config).unwrap_or_else(|| separator.clone());
            let parts: Vec<&str> = present
                .iter()
                .map(|v| v.as_text().ok_or("concat-text over a non-text"))
                .collect::<Result<_, _>>()?;
            Ok(Value::Text(parts.join(&sep)))
        }
        MergeStrategy::SumVectors => {
            let mut iter = present.into_iter();
            let first = iter.next().expect("nonempty");
            iter.try_fold(first, |acc, v| match (acc, v) {
                (Value::Number(a), Value::Number(b)) => Ok(Value::Number(a + b)),
                (Value::Vector(a), Value::Vector(b)) if a.len() == b.len() => {
                    Ok(Value::Vector(a.iter().zip(&b).map(|(x, y)| x + y).collect()))
                }
                _ => Err("sum over mismatched values".to_string()),
            })
        }
    }
}

/// Adapts every present incoming value, then merges. `incoming` is in
/// edge-id order and already gated (absent where the gate was off).
fn resolve(
    node: &NodeSpec,
    incoming: &[(&EdgeSpec, Option<&Value>)],
    config: &ConfigAssignment,
) -> Result<Value, Failure> {
    let mut present = Vec::with_capacity(incoming.len());
    for (edge, value) in incoming {
        let Some(value) = value else { continue };
        let adapted = apply_adapter(&edge.adapter, value, config).map_err(|detail| Failure {
            node: node.id.clone(),
            edge: Some(edge.id.clone()),
            detail,
        })?;
        if !adapted.is_absent() {
            present.push(adapted);
        }
    }
    let merged = merge(node, present, config).map_err(|detail| Failure {
        node: node.id.clone(),
        edge: None,
        detail,
    })?;
    if !node.input_schema.conforms(&merged) {
        return Err(Failure {
            node: node.id.clone(),
            edge: None,
            detail: "resolved input does not conform to the input schema".into(),
        });
    }
    Ok(merged)
}

/// Resolves one node's input from `(edge-id, value-or-absent)` pairs
/// covering exactly its in-edges.
pub fn resolve_inputs(
    graph: &ValidatedGraph,
    node: &str,
    incoming: &[(String, Option<Value>)],
    config: &ConfigAssignment,
) -> Result<Value, ExecError> {
    let idx = graph
        .node_index(node)
        .ok_or_else(|| ExecError::UnknownNode(node.to_string()))?;
    let spec = graph.spec();
    let in_edges = graph.in_edges(idx);
    if incoming.len() != in_edges.len() {
        return Err(ExecError::IncomingMismatch(node.to_string()));
    }
    let mut pairs = Vec::with_capacity(in_edges.len());
    for &ei in in_edges {
        let edge = &spec.edges[ei];
        let value = incoming
            .iter()
            .find(|(id, _)| id == &edge.id)
            .ok_or_else(|| ExecError::IncomingMismatch(node.to_string()))?;
        pairs.push((edge, value.1.as_ref()));
    }
    resolve(&spec.nodes[idx], &pairs, config).map_err(|f| ExecError::AdapterFailure {
        edge: f.edge.unwrap_or_default(),
        detail: f.detail,
    })
}

fn run_steps(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    input: &BTreeMap<String, Value>,
    master_seed: u64,
    steps: u32,
) -> Result<ExecutionTrace, ExecError> {
    let spec = graph.spec();
    let n = spec.nodes.len();
    let mut params = Vec::with_capacity(n);
    for node in &spec.nodes {
        params.push(node_params(node, config)?);
    }
    for id in &spec.inputs {
        let node = spec.node(id).expect("validated");
        let v = input.get(id).ok_or_else(|| ExecError::MissingInput(id.clone()))?;
        if !node.input_schema.conforms(v) {
            return Err(ExecError::InvalidInput(id.clone()));
        }
    }

    let mut trace = ExecutionTrace {
        seed: master_seed,
        steps,
        order: graph.order_ids(),
        nodes: Vec::with_capacity(n * steps as usize),
        edges: Vec::new(),
        outputs: BTreeMap::new(),
        failure: None,
        cost: 0.0,
        notes: Vec::new(),
    };
    let mut prev: Vec<Option<Value>> = vec![None; n];

    'steps: for step in 0..steps {
        let mut cur: Vec<Option<Value>> = vec![None; n];
        for &i in graph.order() {
            let node = &spec.nodes[i];
            let resolved = if graph.is_input(i) {
                Ok(input[&node.id].clone())
            } else {
                let mut incoming = Vec::with_capacity(graph.in_edges(i).len());
                for &ei in graph.in_edges(i) {
                    let edge = &spec.edges[ei];
                    let src = graph.node_index(&edge.source).expect("validated");
                    let upstream = if edge.is_recurrent() {
                        prev[src].as_ref()
                    } else {
                        cur[src].as_ref()
                    };
                    let active = match (upstream, &edge.gate) {
                        (None, _) => false,
                        (Some(_), None) => true,
                        (Some(v), Some(g)) => g.holds(v),
                    };
                    trace.edges.push(EdgeActivation {
                        edge: edge.id.clone(),
                        step,
                        active,
                    });
                    incoming.push((edge, if active { upstream } else { None }));
                }
                resolve(node, &incoming, config)
            };
            let node_seed = seed::node_seed(master_seed, &node.id, step);
            let x = match resolved {
                Ok(x) => x,
                Err(failure) => {
                    trace.nodes.push(NodeRun {
                        node: node.id.clone(),
                        step,
                        input: Value::Absent,
                        output: None,
                        seed: node_seed,
                        cost: 0.0,
                    });
                    trace.failure = Some(failure);
                    break 'steps;
                }
            };
            match graph.function(i).call(&x, &params[i], node_seed) {
                Ok(out) if node.output_schema.conforms(&out.value) && out.cost.is_finite() && out.cost >= 0.0 => {
                    trace.cost += out.cost;
                    trace
                        .notes
                        .extend(out.notes.into_iter().map(|note| (node.id.clone(), note)));
                    trace.nodes.push(NodeRun {
                        node: node.id.clone(),
                        step,
                        input: x,
                        output: Some(out.value.clone()),
                        seed: node_seed,
                        cost: out.cost,
                    });
                    cur[i] = Some(out.value);
                }
                result => {
                    let (detail, cost) = match result {
                        Ok(out) => (
                            "output violates the declared schema or cost".to_string(),
                            if out.cost.is_finite() { out.cost.max(0.0) } else { 0.0 },
                        ),
                        Err(fault) => (fault.0, 0.0),
                    };
                    trace.cost += cost;
                    trace.nodes.push(NodeRun {
                        node: node.id.clone(),
                        step,
                        input: x,
                        output: None,
                        seed: node_seed,
                        cost,
                    });
                    trace.failure = Some(Failure {
                        node: node.id.clone(),
                        edge: None,
                        detail,
                    });
                    break 'steps;
                }
            }
        }
        prev = cur;
    }

    if trace.failure.is_none() {
        for id in &spec.outputs {
            let i = graph.node_index(id).expect("validated");
            if let Some(v) = &prev[i] {
                trace.outputs.insert(id.clone(), v.clone());
            }
        }
    }
    Ok(trace)
}

/// Runs a validated graph in its declared mode without touching any ledger.
/// Callers are responsible for charging the rollout.
pub(crate) fn run_uncharged(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    input: &BTreeMap<String, Value>,
    seed: u64,
) -> Result<ExecutionTrace, ExecError> {
    let steps = match graph.spec().mode {
        GraphMode::Dag => 1,
        GraphMode::Unrolled { steps } => steps,
    };
    run_steps(graph, config, input, seed, steps)
}

/// One rollout of a dag: charges exactly one rollout, then runs every node
/// in topological order with per-node seeds derived from `seed`.
pub fn execute(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    input: &BTreeMap<String, Value>,
    seed: u64,
    ledger: &BudgetLedger,
) -> Result<ExecutionTrace, ExecError> {
    if graph.spec().mode != GraphMode::Dag {
        return Err(ExecError::WrongMode);
    }
    ledger.charge(1)?;
    let trace = run_steps(graph, config, input, seed, 1)?;
    ledger.record_cost(trace.cost);
    Ok(trace)
}

/// One rollout of an unrolled graph over its declared number of steps.
/// Recurrent edges read the previous step's outputs and are absent at the
/// first step. Charges one rollout in total.
pub fn execute_unrolled(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    input: &BTreeMap<String, Value>,
    seed: u64,
    ledger: &BudgetLedger,
) -> Result<ExecutionTrace, ExecError> {
    let GraphMode::Unrolled { steps } = graph.spec().mode else {
        return Err(ExecError::WrongMode);
    };
    ledger.charge(1)?;
    let trace = run_steps(graph, config, input, seed, steps)?;
    ledger.record_cost(trace.cost);
    Ok(trace)
}

/// Executes in whichever mode the graph declares. Charges one rollout.
pub fn run_graph(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    input: &BTreeMap<String, Value>,
    seed: u64,
    ledger: &BudgetLedger,
) -> Result<ExecutionTrace, ExecError> {
    ledger.charge(1)?;
    let trace = run_uncharged(graph, config, input, seed)?;
    ledger.record_cost(trace.cost);
    Ok(trace)
}
