//! Typed stochastic computation graphs.
//!
//! A [`GraphSpec`] is plain data: nodes with declared schemas and a
//! registered function, edges carrying an adapter and an optional gate, and
//! designated input/output node sets. [`validate_graph`] turns it into an
//! immutable [`ValidatedGraph`] that can be executed any number of times,
//! concurrently, with seed-replayable results.

mod dot;
mod exec;
mod registry;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::value::{Value, ValueSchema};

pub use dot::{to_dot, to_dot_diff};
pub(crate) use exec::run_uncharged;
pub use exec::{
    execute, execute_unrolled, resolve_inputs, run_graph, EdgeActivation, ExecError, ExecutionTrace, Failure, NodeRun,
};
pub use registry::{NodeFault, NodeFunction, NodeOutput, NodeParams, NodeRegistry};
pub use validate::{topological_order, validate_graph, GraphError, TieBreak, ValidatedGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    FieldProject {
        path: String,
    },
    /// Renders `{field}` placeholders from a record source, `{}` for the
    /// whole value.
    TemplateRender {
        template: String,
    },
    ScalarAffine {
        a: f64,
        b: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    #[serde(flatten)]
    pub transform: Transform,
    /// Local role (`a`, `b`, `template`) to config parameter name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl AdapterSpec {
    pub fn identity() -> Self {
        Self {
            transform: Transform::Identity,
            params: BTreeMap::new(),
        }
    }

    pub fn new(transform: Transform) -> Self {
        Self {
            transform,
            params: BTreeMap::new(),
        }
    }
}

impl Default for AdapterSpec {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum MergeStrategy {
    Identity,
    /// Present fields of later inputs (edge-id order) overwrite earlier ones.
    RecordUnion,
    ConcatText {
        separator: String,
    },
    /// Elementwise sum of numbers or vectors.
    SumVectors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    #[serde(flatten)]
    pub strategy: MergeStrategy,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl MergeSpec {
    pub fn new(strategy: MergeStrategy) -> Self {
        Self {
            strategy,
            params: BTreeMap::new(),
        }
    }
}

impl Default for MergeSpec {
    fn default() -> Self {
        Self::new(MergeStrategy::Identity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub function: String,
    pub input_schema: ValueSchema,
    pub output_schema: ValueSchema,
    /// Input used when every incoming edge is absent.
    pub default_input: Value,
    /// Local parameter role to config parameter name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub merge: MergeSpec,
}

impl NodeSpec {
    /// A node whose input and output share `schema`, defaulting to the
    /// schema's zero value.
    pub fn new(id: impl Into<String>, function: impl Into<String>, schema: ValueSchema) -> Self {
        Self {
            id: id.into(),
            function: function.into(),
            default_input: schema.zero_value(),
            input_schema: schema.clone(),
            output_schema: schema,
            params: BTreeMap::new(),
            role: String::new(),
            merge: MergeSpec::default(),
        }
    }

    pub fn with_param(mut self, role: &str, param: &str) -> Self {
        self.params.insert(role.to_string(), param.to_string());
        self
    }

    pub fn with_role(mut self, role: &str) -> Self {
        self.role = role.to_string();
        self
    }

    pub fn with_merge(mut self, strategy: MergeStrategy) -> Self {
        self.merge = MergeSpec::new(strategy);
        self
    }

    pub fn with_default(mut self, value: Value) -> Self {
        self.default_input = value;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparator {
    Equals,
    NotEquals,
    GreaterThan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePredicate {
    #[serde(default)]
    pub path: String,
    pub comparator: Comparator,
    pub value: Value,
}

impl GatePredicate {
    pub fn new(path: &str, comparator: Comparator, value: Value) -> Self {
        Self {
            path: path.to_string(),
            comparator,
            value,
        }
    }

    /// Evaluates the predicate on a realized upstream output.
    pub fn holds(&self, output: &Value) -> bool {
        let Some(v) = output.get_path(&self.path) else {
            return false;
        };
        match self.comparator {
            Comparator::Equals => v == &self.value,
            Comparator::NotEquals => v != &self.value,
            Comparator::GreaterThan => match (v.as_number(), self.value.as_number()) {
                (Some(x), Some(y)) => x > y,
                _ => false,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: String,
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub adapter: AdapterSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GatePredicate>,
    /// Reads the source's output from the previous unroll step. Self-loops
    /// are always recurrent.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recurrent: bool,
}

impl EdgeSpec {
    pub fn new(id: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            target: target.into(),
            adapter: AdapterSpec::identity(),
            gate: None,
            recurrent: false,
        }
    }

    pub fn with_adapter(mut self, adapter: AdapterSpec) -> Self {
        self.adapter = adapter;
        self
    }

    pub fn with_gate(mut self, gate: GatePredicate) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn recurrent(mut self) -> Self {
        self.recurrent = true;
        self
    }

    pub fn is_recurrent(&self) -> bool {
        self.recurrent || self.source == self.target
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphMode {
    #[default]
    Dag,
    Unrolled {
        steps: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub id: String,
    #[serde(default)]
    pub mode: GraphMode,
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

impl GraphSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            mode: GraphMode::Dag,
            inputs: BTreeSet::new(),
            outputs: BTreeSet::new(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn edge(&self, id: &str) -> Option<&EdgeSpec> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn edge_mut(&mut self, id: &str) -> Option<&mut EdgeSpec> {
        self.edges.iter_mut().find(|e| e.id == id)
    }

    pub fn in_edges<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a EdgeSpec> + 'a {
        self.edges.iter().filter(move |e| e.target == node)
    }

    pub fn out_edges<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a EdgeSpec> + 'a {
        self.edges.iter().filter(move |e| e.source == node)
    }

    /// Sorts nodes and edges by id so equal graphs serialize identically.
    pub fn canonicalize(&mut self) {
        self.nodes.sort_by(|a, b| a.id.cmp(&b.id));
        self.edges.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalize();
        self
    }

    /// Canonical single-line encoding, used as a dedup key.
    pub fn key(&self) -> String {
        let mut g = self.clone();
        g.canonicalize();
        g.id.clear();
        serde_json::to_string(&g).expect("graph serializes")
    }

    /// A fresh node id derived from `base`.
    pub fn fresh_node_id(&self, base: &str) -> String {
        if self.node(base).is_none() {
            return base.to_string();
        }
        (2..)
            .map(|i| format!("{base}_{i}"))
            .find(|id| self.node(id).is_none())
            .expect("unbounded")
    }

    /// A fresh edge id for `source -> target`.
    pub fn fresh_edge_id(&self, source: &str, target: &str) -> String {
        let base = format!("{source}->{target}");
        if self.edge(&base).is_none() {
            return base;
        }
        (2..)
            .map(|i| format!("{base}#{i}"))
            .find(|id| self.edge(id).is_none())
            .expect("unbounded")
    }

    /// Every config parameter name referenced by nodes, merges and adapters.
    pub fn param_refs(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for n in &self.nodes {
            out.extend(n.params.values().map(String::as_str));
            out.extend(n.merge.params.values().map(String::as_str));
        }
        for e in &self.edges {
            out.extend(e.adapter.params.values().map(String::as_str));
        }
        out
    }
}
