use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::registry::{NodeFunction, NodeRegistry};
use super::{AdapterSpec, Comparator, GraphMode, GraphSpec, MergeStrategy, Transform};
use crate::config::{ConfigSpace, Owner, ParamKind};
use crate::value::ValueSchema;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge relation has a cycle in dag mode")]
    CycleInDagMode,
    #[error("cycle without a recurrent edge in unrolled mode")]
    UnbrokenCycle,
    #[error("graph is not a dag")]
    NotADag,
    #[error("adapter output schema does not match target input schema on edge {0}")]
    SchemaMismatch(String),
    #[error("unknown node function for node {0}")]
    UnknownFunction(String),
    #[error("unresolved config parameter {0}")]
    UnresolvedParam(String),
    #[error("edge {0} references a missing node")]
    DanglingEdge(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(String),
    #[error("invalid schema on node {node}: {reason}")]
    InvalidSchema { node: String, reason: String },
    #[error("default input of node {0} does not conform to its input schema")]
    InvalidDefault(String),
    #[error("input and output node sets must be nonempty")]
    EmptyIo,
    #[error("input/output set names unknown node {0}")]
    UnknownIoNode(String),
    #[error("input node {0} has incoming edges")]
    InputHasIncoming(String),
    #[error("non-input node {0} has no incoming edge")]
    MissingIncoming(String),
    #[error("merge strategy of node {0} does not fit its inputs")]
    MergeMismatch(String),
    #[error("invalid gate on edge {0}")]
    InvalidGate(String),
    #[error("parameter {0} has the wrong kind for its role")]
    ParamKindMismatch(String),
    #[error("parameter {0} is owned by a missing node or edge")]
    OrphanParam(String),
    #[error("unrolled mode needs at least one step")]
    InvalidSteps,
}

/// Tie-break among ready nodes when computing the execution order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    #[default]
    Lexicographic,
    ReverseLexicographic,
}

struct Inner {
    spec: GraphSpec,
    order: Vec<usize>,
    /// Per node: incoming edge indices sorted by edge id.
    in_edges: Vec<Vec<usize>>,
    node_index: BTreeMap<String, usize>,
    functions: Vec<Arc<dyn NodeFunction>>,
    is_input: Vec<bool>,
}

/// An immutable, executable graph. Cheap to clone and share across threads.
#[derive(Clone)]
pub struct ValidatedGraph {
    inner: Arc<Inner>,
}

impl fmt::Debug for ValidatedGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValidatedGraph")
            .field("id", &self.inner.spec.id)
            .field("order", &self.order_ids())
            .finish()
    }
}

impl ValidatedGraph {
    pub fn spec(&self) -> &GraphSpec {
        &self.inner.spec
    }

    pub fn order_ids(&self) -> Vec<String> {
        self.inner
            .order
            .iter()
            .map(|&i| self.inner.spec.nodes[i].id.clone())
            .collect()
    }

    pub(crate) fn order(&self) -> &[usize] {
        &self.inner.order
    }

    pub(crate) fn in_edges(&self, node: usize) -> &[usize] {
        &self.inner.in_edges[node]
    }

    pub(crate) fn node_index(&self, id: &str) -> Option<usize> {
        self.inner.node_index.get(id).copied()
    }

    pub(crate) fn function(&self, node: usize) -> &Arc<dyn NodeFunction> {
        &self.inner.functions[node]
    }

    pub(crate) fn is_input(&self, node: usize) -> bool {
        self.inner.is_input[node]
    }

    /// Same graph, executed under a different topological tie-break.
    pub fn with_tie_break(&self, tie: TieBreak) -> ValidatedGraph {
        let spec = &self.inner.spec;
        let order = compute_order(spec, &self.inner.node_index, tie).expect("validated graph is ordered");
        ValidatedGraph {
            inner: Arc::new(Inner {
                spec: spec.clone(),
                order,
                in_edges: self.inner.in_edges.clone(),
                node_index: self.inner.node_index.clone(),
                functions: self.inner.functions.clone(),
                is_input: self.inner.is_input.clone(),
            }),
        }
    }
}

/// Static output schema of an adapter fed by `source`.
pub(crate) fn adapter_output(adapter: &AdapterSpec, source: &ValueSchema) -> Option<ValueSchema> {
    match &adapter.transform {
        Transform::Identity => Some(source.clone()),
        Transform::FieldProject { path } => source.at_path(path).cloned(),
        Transform::TemplateRender { .. } => Some(ValueSchema::Text),
        Transform::ScalarAffine { .. } => match source {
            ValueSchema::Number | ValueSchema::Vector { .. } => Some(source.clone()),
            _ => None,
        },
    }
}

fn compute_order(spec: &GraphSpec, index: &BTreeMap<String, usize>, tie: TieBreak) -> Option<Vec<usize>> {
    let n = spec.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in spec.edges.iter().filter(|e| !e.is_recurrent()) {
        let (s, t) = (index[&e.source], index[&e.target]);
        indegree[t] += 1;
        succ[s].push(t);
    }
    // Ready set keyed by node id so the tie-break is by id, not position.
    let mut ready: BTreeSet<(&str, usize)> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (spec.nodes[i].id.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(n);
    loop {
        let next = match tie {
            TieBreak::Lexicographic => ready.pop_first(),
            TieBreak::ReverseLexicographic => ready.pop_last(),
        };
        let Some((_, i)) = next else { break };
        order.push(i);
        for &t in &succ[i] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.insert((spec.nodes[t].id.as_str(), t));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Checks every structural, schema and parameter invariant of `spec`
/// against the function registry and the config space.
pub fn validate_graph(
    spec: &GraphSpec,
    registry: &NodeRegistry,
    space: &ConfigSpace,
) -> Result<ValidatedGraph, GraphError> {
    let mut spec = spec.clone();
    spec.canonicalize();
    let dag = match spec.mode {
        GraphMode::Dag => true,
        GraphMode::Unrolled { steps } => {
            if steps == 0 {
                return Err(GraphError::InvalidSteps);
            }
            false
        }
    };

    let mut node_index = BTreeMap::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.id.is_empty() || node_index.insert(n.id.clone(), i).is_some() {
            return Err(GraphError::DuplicateNode(n.id.clone()));
        }
    }
    let mut functions = Vec::with_capacity(spec.nodes.len());
    for n in &spec.nodes {
        let bad = |reason: String| GraphError::InvalidSchema {
            node: n.id.clone(),
            reason,
        };
        n.input_schema.check().map_err(&bad)?;
        n.output_schema.check().map_err(&bad)?;
        if !n.input_schema.conforms(&n.default_input) {
            return Err(GraphError::InvalidDefault(n.id.clone()));
        }
        functions.push(
            registry
                .get(&n.function)
                .ok_or_else(|| GraphError::UnknownFunction(n.id.clone()))?,
        );
    }

    if spec.inputs.is_empty() || spec.outputs.is_empty() {
        return Err(GraphError::EmptyIo);
    }
    for id in spec.inputs.iter().chain(&spec.outputs) {
        if !node_index.contains_key(id) {
            return Err(GraphError::UnknownIoNode(id.clone()));
        }
    }

    let mut edge_ids = BTreeSet::new();
    for e in &spec.edges {
        if e.id.is_empty() || !edge_ids.insert(e.id.as_str()) {
            return Err(GraphError::DuplicateEdge(e.id.clone()));
        }
        if !node_index.contains_key(&e.source) || !node_index.contains_key(&e.target) {
            return Err(GraphError::DanglingEdge(e.id.clone()));
        }
        if dag && e.is_recurrent() {
            return Err(GraphError::CycleInDagMode);
        }
    }

    let n = spec.nodes.len();
    let mut in_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ei, e) in spec.edges.iter().enumerate() {
        in_edges[node_index[&e.target]].push(ei);
    }
    // edges are sorted by id already, so each list is too
    let is_input: Vec<bool> = spec.nodes.iter().map(|n| spec.inputs.contains(&n.id)).collect();

    for (i, node) in spec.nodes.iter().enumerate() {
        let incoming = in_edges[i].len();
        if is_input[i] {
            if incoming > 0 {
                return Err(GraphError::InputHasIncoming(node.id.clone()));
            }
            continue;
        }
        if incoming == 0 {
            return Err(GraphError::MissingIncoming(node.id.clone()));
        }
        let fits = match &node.merge.strategy {
            MergeStrategy::Identity => incoming == 1,
            MergeStrategy::RecordUnion => matches!(node.input_schema, ValueSchema::Record { .. }),
            MergeStrategy::ConcatText { .. } => node.input_schema == ValueSchema::Text,
            MergeStrategy::SumVectors => matches!(node.input_schema, ValueSchema::Number | ValueSchema::Vector { .. }),
        };
        if !fits {
            return Err(GraphError::MergeMismatch(node.id.clone()));
        }
    }

    for e in &spec.edges {
        let source = &spec.nodes[node_index[&e.source]];
        let target = &spec.nodes[node_index[&e.target]];
        match adapter_output(&e.adapter, &source.output_schema) {
            Some(s) if s == target.input_schema => {}
            _ => return Err(GraphError::SchemaMismatch(e.id.clone())),
        }
        if let Some(gate) = &e.gate {
            let at = source
                .output_schema
                .at_path(&gate.path)
                .ok_or_else(|| GraphError::InvalidGate(e.id.clone()))?;
            if gate.comparator == Comparator::GreaterThan {
                let numeric = match at {
                    ValueSchema::Number => true,
                    ValueSchema::Optional { inner } => **inner == ValueSchema::Number,
                    _ => false,
                };
                if !numeric || gate.value.as_number().is_none() {
                    return Err(GraphError::InvalidGate(e.id.clone()));
                }
            }
        }
    }

    check_params(&spec, space)?;

    let order = compute_order(&spec, &node_index, TieBreak::Lexicographic).ok_or(if dag {
        GraphError::CycleInDagMode
    } else {
        GraphError::UnbrokenCycle
    })?;

    Ok(ValidatedGraph {
        inner: Arc::new(Inner {
            spec,
            order,
            in_edges,
            node_index,
            functions,
            is_input,
        }),
    })
}

fn check_params(spec: &GraphSpec, space: &ConfigSpace) -> Result<(), GraphError> {
    let numeric = |name: &str| -> Result<(), GraphError> {
        match space.get(name).map(|p| &p.kind) {
            None => Err(GraphError::UnresolvedParam(name.to_string())),
            Some(ParamKind::IntRange { .. } | ParamKind::FloatRange { .. }) => Ok(()),
            Some(_) => Err(GraphError::ParamKindMismatch(name.to_string())),
        }
    };
    let textual = |name: &str| -> Result<(), GraphError> {
        match space.get(name).map(|p| &p.kind) {
            None => Err(GraphError::UnresolvedParam(name.to_string())),
            Some(ParamKind::Choice { .. } | ParamKind::Text { .. }) => Ok(()),
            Some(_) => Err(GraphError::ParamKindMismatch(name.to_string())),
        }
    };
    for node in &spec.nodes {
        for name in node.params.values() {
            if !space.contains(name) {
                return Err(GraphError::UnresolvedParam(name.clone()));
            }
        }
        for (role, name) in &node.merge.params {
            match role.as_str() {
                "separator" => textual(name)?,
                _ => {
                    if !space.contains(name) {
                        return Err(GraphError::UnresolvedParam(name.clone()));
                    }
                }
            }
        }
    }
    for e in &spec.edges {
        for (role, name) in &e.adapter.params {
            match role.as_str() {
                "a" | "b" => numeric(name)?,
                "template" => textual(name)?,
                _ => {
                    if !space.contains(name) {
                        return Err(GraphError::UnresolvedParam(name.clone()));
                    }
                }
            }
        }
    }
    for p in &space.params {
        let exists = match &p.owner {
            Owner::Node(id) | Owner::Merge(id) => spec.node(id).is_some(),
            Owner::Edge(id) => spec.edge(id).is_some(),
        };
        if !exists {
            return Err(GraphError::OrphanParam(p.name.clone()));
        }
    }
    Ok(())
}

/// Execution order of a dag: every edge's source precedes its target, ties
/// broken by lexicographic node id.
pub fn topological_order(graph: &ValidatedGraph) -> Result<Vec<String>, GraphError> {
    match graph.spec().mode {
        GraphMode::Dag => Ok(graph.order_ids()),
        GraphMode::Unrolled { .. } => Err(GraphError::NotADag),
    }
}
