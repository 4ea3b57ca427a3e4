use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigSpace, Owner, ParamKind, ParamSpec};
use crate::graph::{
    validate_graph, AdapterSpec, EdgeSpec, GatePredicate, GraphError, GraphMode, GraphSpec, MergeSpec, MergeStrategy,
    NodeRegistry, NodeSpec, ValidatedGraph,
};
use crate::value::{Value, ValueSchema};

/// Wildcard target: expands to every node or edge id.
pub const ANY: &str = "*";

/// A parameter contributed by a template node: either a fresh parameter
/// named `<node>.<role>` or a reference to an existing one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateParam {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ParamKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<String>,
}

impl TemplateParam {
    pub fn new(role: &str, kind: ParamKind) -> Self {
        Self {
            role: role.into(),
            kind: Some(kind),
            share: None,
        }
    }

    pub fn shared(role: &str, param: &str) -> Self {
        Self {
            role: role.into(),
            kind: None,
            share: Some(param.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateNode {
    pub name: String,
    pub function: String,
    pub input_schema: ValueSchema,
    pub output_schema: ValueSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_input: Option<Value>,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub merge: MergeSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<TemplateParam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateEdge {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GatePredicate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateExit {
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GatePredicate>,
}

/// A library entry that insert-node splices into an edge. The first node
/// receives the spliced edge; `exits` feed the old edge's target. Most
/// templates are a single node; a validator with its conditional rewrite
/// is two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTemplate {
    pub name: String,
    pub role: String,
    /// Feedback keywords this template answers (e.g. "entities").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
    pub nodes: Vec<TemplateNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<TemplateEdge>,
    pub exits: Vec<TemplateExit>,
}

impl NodeTemplate {
    /// Single-node template with the same schema in and out.
    pub fn single(name: &str, function: &str, role: &str, schema: ValueSchema) -> Self {
        Self {
            name: name.into(),
            role: role.into(),
            keywords: Vec::new(),
            nodes: vec![TemplateNode {
                name: name.into(),
                function: function.into(),
                input_schema: schema.clone(),
                output_schema: schema,
                default_input: None,
                role: role.into(),
                merge: MergeSpec::default(),
                params: Vec::new(),
            }],
            edges: Vec::new(),
            exits: vec![TemplateExit {
                node: name.into(),
                gate: None,
            }],
        }
    }

    pub fn with_param(mut self, param: TemplateParam) -> Self {
        self.nodes[0].params.push(param);
        self
    }

    pub fn with_keywords(mut self, words: &[&str]) -> Self {
        self.keywords = words.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum OperatorKind {
    InsertNode {
        template: String,
        edge: String,
    },
    RemoveNode {
        node: String,
    },
    RewireEdge {
        edge: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
    AddEdge {
        source: String,
        target: String,
        #[serde(default)]
        adapter: AdapterSpec,
    },
    RemoveEdge {
        edge: String,
    },
    ChangeNodeType {
        node: String,
        function: String,
    },
    AddGate {
        edge: String,
        gate: GatePredicate,
    },
    AddStateLoop {
        node: String,
        field: String,
    },
}

fn default_cost() -> u32 {
    1
}

/// A structural operator from the catalog. Targets may be [`ANY`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphOperator {
    pub id: String,
    #[serde(flatten)]
    pub kind: OperatorKind,
    #[serde(default = "default_cost")]
    pub cost: u32,
}

impl GraphOperator {
    pub fn new(id: &str, kind: OperatorKind) -> Self {
        Self {
            id: id.into(),
            kind,
            cost: 1,
        }
    }
}

/// A concrete operator application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "kebab-case")]
pub enum Edit {
    InsertNode {
        template: String,
        edge: String,
    },
    RemoveNode {
        node: String,
    },
    RewireEdge {
        edge: String,
        source: String,
        target: String,
    },
    AddEdge {
        source: String,
        target: String,
        adapter: AdapterSpec,
    },
    RemoveEdge {
        edge: String,
    },
    ChangeNodeType {
        node: String,
        function: String,
    },
    AddGate {
        edge: String,
        gate: GatePredicate,
    },
    AddStateLoop {
        node: String,
        field: String,
    },
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edit::InsertNode { template, edge } => write!(f, "insert {template} on {edge}"),
            Edit::RemoveNode { node } => write!(f, "remove {node}"),
            Edit::RewireEdge { edge, source, target } => write!(f, "rewire {edge} to {source}->{target}"),
            Edit::AddEdge { source, target, .. } => write!(f, "add edge {source}->{target}"),
            Edit::RemoveEdge { edge } => write!(f, "remove edge {edge}"),
            Edit::ChangeNodeType { node, function } => write!(f, "retype {node} as {function}"),
            Edit::AddGate { edge, .. } => write!(f, "gate {edge}"),
            Edit::AddStateLoop { node, field } => write!(f, "state loop {node}.{field}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedEdit {
    pub operator: String,
    pub cost: u32,
    #[serde(flatten)]
    pub edit: Edit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditSequence {
    pub edits: Vec<AppliedEdit>,
}

impl EditSequence {
    /// Operational edit distance: the sum of unit costs.
    pub fn distance(&self) -> u32 {
        self.edits.iter().map(|e| e.cost).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn describe(&self) -> String {
        if self.edits.is_empty() {
            return "no edit".into();
        }
        self.edits
            .iter()
            .map(|e| e.edit.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn then(&self, edit: AppliedEdit) -> EditSequence {
        let mut edits = self.edits.clone();
        edits.push(edit);
        EditSequence { edits }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("edit {index} is inapplicable: {reason}")]
    InapplicableEdit { index: usize, reason: String },
}

/// Parameters added to and removed from the space by a sequence of edits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigDelta {
    pub added: Vec<ParamSpec>,
    pub removed: Vec<String>,
}

impl ConfigDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Everything needed to apply edits and validate the results.
#[derive(Clone, Debug, Default)]
pub struct EditContext {
    pub registry: NodeRegistry,
    pub library: BTreeMap<String, NodeTemplate>,
    pub catalog: Vec<GraphOperator>,
}

impl EditContext {
    pub fn new(registry: NodeRegistry, library: Vec<NodeTemplate>, catalog: Vec<GraphOperator>) -> Self {
        Self {
            registry,
            library: library.into_iter().map(|t| (t.name.clone(), t)).collect(),
            catalog,
        }
    }
}

/// The outcome of applying an edit sequence.
#[derive(Clone, Debug)]
pub struct EditedGraph {
    pub graph: GraphSpec,
    pub space: ConfigSpace,
    pub validated: ValidatedGraph,
    pub delta: ConfigDelta,
}

fn remove_params(space: &mut ConfigSpace, delta: &mut ConfigDelta, pred: impl Fn(&ParamSpec) -> bool) {
    let (gone, kept): (Vec<ParamSpec>, Vec<ParamSpec>) =
        std::mem::take(&mut space.params).into_iter().partition(|p| pred(p));
    space.params = kept;
    for p in gone {
        let was_added = delta.added.iter().position(|a| a.name == p.name);
        match was_added {
            Some(i) => {
                delta.added.remove(i);
            }
            None => delta.removed.push(p.name),
        }
    }
}

fn add_param(space: &mut ConfigSpace, delta: &mut ConfigDelta, p: ParamSpec) -> Result<(), String> {
    if space.contains(&p.name) {
        return Err(format!("parameter {} already exists", p.name));
    }
    if let Some(i) = delta.removed.iter().position(|n| n == &p.name) {
        delta.removed.remove(i);
    }
    delta.added.push(p.clone());
    space.params.push(p);
    Ok(())
}

fn insert_template(
    g: &mut GraphSpec,
    space: &mut ConfigSpace,
    delta: &mut ConfigDelta,
    template: &NodeTemplate,
    edge_id: &str,
) -> Result<(), String> {
    let edge = g.edge(edge_id).cloned().ok_or("no such edge")?;
    if edge.is_recurrent() {
        return Err("cannot splice into a recurrent edge".into());
    }
    let first = template.nodes.first().ok_or("empty template")?;
    let mut ids: BTreeMap<&str, String> = BTreeMap::new();
    for tn in &template.nodes {
        let id = g.fresh_node_id(&tn.name);
        let mut node = NodeSpec::new(id.clone(), tn.function.clone(), tn.input_schema.clone());
        node.output_schema = tn.output_schema.clone();
        node.default_input = tn.default_input.clone().unwrap_or_else(|| tn.input_schema.zero_value());
        node.role = tn.role.clone();
        node.merge = tn.merge.clone();
        for p in &tn.params {
            let name = match (&p.kind, &p.share) {
                (_, Some(shared)) => shared.clone(),
                (Some(kind), None) => {
                    let name = format!("{id}.{}", p.role);
                    add_param(
                        space,
                        delta,
                        ParamSpec::new(name.clone(), Owner::Node(id.clone()), kind.clone()),
                    )?;
                    name
                }
                (None, None) => return Err(format!("template parameter {} has no kind", p.role)),
            };
            node.params.insert(p.role.clone(), name);
        }
        g.nodes.push(node);
        ids.insert(tn.name.as_str(), id);
    }
    let local = |name: &str| {
        ids.get(name)
            .cloned()
            .ok_or_else(|| format!("unknown template node {name}"))
    };

    // the spliced edge keeps its adapter and gate
    let entry = local(&first.name)?;
    g.edge_mut(edge_id).expect("edge exists").target = entry;
    rename_edge(g, space, delta, edge_id)?;

    for te in &template.edges {
        let (s, t) = (local(&te.source)?, local(&te.target)?);
        let mut e = EdgeSpec::new(g.fresh_edge_id(&s, &t), s, t);
        e.gate = te.gate.clone();
        g.edges.push(e);
    }
    for exit in &template.exits {
        let s = local(&exit.node)?;
        let mut e = EdgeSpec::new(g.fresh_edge_id(&s, &edge.target), s, edge.target.clone());
        e.gate = exit.gate.clone();
        g.edges.push(e);
    }
    Ok(())
}

/// Gives an edge the canonical id for its current endpoints; parameters it
/// owns follow it.
fn rename_edge(
    g: &mut GraphSpec,
    space: &mut ConfigSpace,
    delta: &mut ConfigDelta,
    edge_id: &str,
) -> Result<(), String> {
    let e = g.edge(edge_id).expect("edge exists");
    let (source, target) = (e.source.clone(), e.target.clone());
    let base = format!("{source}->{target}");
    if edge_id == base {
        return Ok(());
    }
    let new_id = g.fresh_edge_id(&source, &target);
    g.edge_mut(edge_id).expect("edge exists").id = new_id.clone();
    let owner = Owner::Edge(edge_id.to_string());
    let moved: Vec<ParamSpec> = space.params.iter().filter(|p| p.owner == owner).cloned().collect();
    if !moved.is_empty() {
        remove_params(space, delta, |p| p.owner == owner);
        for mut p in moved {
            p.owner = Owner::Edge(new_id.clone());
            add_param(space, delta, p)?;
        }
    }
    Ok(())
}

fn remove_edge(g: &mut GraphSpec, space: &mut ConfigSpace, delta: &mut ConfigDelta, edge_id: &str) {
    g.edges.retain(|e| e.id != edge_id);
    remove_params(space, delta, |p| p.owner == Owner::Edge(edge_id.to_string()));
}

fn apply_one(
    g: &mut GraphSpec,
    space: &mut ConfigSpace,
    delta: &mut ConfigDelta,
    edit: &Edit,
    ctx: &EditContext,
) -> Result<(), String> {
    match edit {
        Edit::InsertNode { template, edge } => {
            let t = ctx
                .library
                .get(template)
                .ok_or_else(|| format!("unknown template {template}"))?;
            insert_template(g, space, delta, t, edge)
        }
        Edit::RemoveNode { node } => {
            if g.inputs.contains(node) || g.outputs.contains(node) {
                return Err("cannot remove an input or output node".into());
            }
            g.node(node).ok_or("no such node")?;
            let incoming: Vec<EdgeSpec> = g.in_edges(node).filter(|e| !e.is_recurrent()).cloned().collect();
            let [only] = incoming.as_slice() else {
                return Err("bypass needs exactly one incoming edge".into());
            };
            let upstream = only.source.clone();
            let self_loops: Vec<String> = g
                .edges
                .iter()
                .filter(|e| e.source == *node && e.target == *node)
                .map(|e| e.id.clone())
                .collect();
            for id in self_loops.iter().chain(std::iter::once(&only.id)) {
                remove_edge(g, space, delta, id);
            }
            let moved: Vec<String> = g
                .edges
                .iter()
                .filter(|e| e.source == *node)
                .map(|e| e.id.clone())
                .collect();
            for id in &moved {
                g.edge_mut(id).expect("edge exists").source = upstream.clone();
            }
            for id in &moved {
                rename_edge(g, space, delta, id)?;
            }
            g.nodes.retain(|n| n.id != *node);
            remove_params(space, delta, |p| p.owner.node_id() == Some(node.as_str()));
            Ok(())
        }
        Edit::RewireEdge { edge, source, target } => {
            let e = g.edge_mut(edge).ok_or("no such edge")?;
            if &e.source == source && &e.target == target {
                return Err("rewire is a no-op".into());
            }
            e.source = source.clone();
            e.target = target.clone();
            rename_edge(g, space, delta, edge)
        }
        Edit::AddEdge {
            source,
            target,
            adapter,
        } => {
            if g.edges.iter().any(|e| &e.source == source && &e.target == target) {
                return Err("edge already present".into());
            }
            let id = g.fresh_edge_id(source, target);
            g.edges
                .push(EdgeSpec::new(id, source.clone(), target.clone()).with_adapter(adapter.clone()));
            Ok(())
        }
        Edit::RemoveEdge { edge } => {
            g.edge(edge).ok_or("no such edge")?;
            remove_edge(g, space, delta, edge);
            Ok(())
        }
        Edit::ChangeNodeType { node, function } => {
            let n = g.node_mut(node).ok_or("no such node")?;
            if &n.function == function {
                return Err("node already has this function".into());
            }
            n.function = function.clone();
            Ok(())
        }
        Edit::AddGate { edge, gate } => {
            let e = g.edge_mut(edge).ok_or("no such edge")?;
            if e.gate.is_some() {
                return Err("edge already gated".into());
            }
            e.gate = Some(gate.clone());
            Ok(())
        }
        Edit::AddStateLoop { node, field } => {
            if g.mode == GraphMode::Dag {
                return Err("state loops need unrolled mode".into());
            }
            let n = g.node(node).ok_or("no such node")?;
            if n.output_schema.at_path(field).is_none() {
                return Err(format!("output has no field {field}"));
            }
            if g.edges.iter().any(|e| &e.source == node && &e.target == node) {
                return Err("node already has a state loop".into());
            }
            let id = g.fresh_edge_id(node, node);
            g.edges.push(EdgeSpec::new(id, node.clone(), node.clone()).recurrent());
            g.node_mut(node).expect("node exists").merge = MergeSpec::new(MergeStrategy::RecordUnion);
            Ok(())
        }
    }
}

/// Applies `edits` in order, validating after each one. The returned delta
/// lists parameters created or dropped relative to `space`.
pub fn apply_edits(
    graph: &GraphSpec,
    space: &ConfigSpace,
    edits: &EditSequence,
    ctx: &EditContext,
) -> Result<EditedGraph, EditError> {
    let mut g = graph.clone();
    let mut s = space.clone();
    let mut delta = ConfigDelta::default();
    let mut validated = None;
    for (index, applied) in edits.edits.iter().enumerate() {
        let fail = |reason: String| EditError::InapplicableEdit { index, reason };
        apply_one(&mut g, &mut s, &mut delta, &applied.edit, ctx).map_err(fail)?;
        validated = Some(validate_graph(&g, &ctx.registry, &s).map_err(|e: GraphError| fail(e.to_string()))?);
    }
    let validated = match validated {
        Some(v) => v,
        None => validate_graph(&g, &ctx.registry, &s).map_err(|e| EditError::InapplicableEdit {
            index: 0,
            reason: e.to_string(),
        })?,
    };
    g.canonicalize();
    Ok(EditedGraph {
        graph: g,
        space: s,
        validated,
        delta,
    })
}

fn expand<'a>(pattern: &'a str, ids: &'a [String]) -> Vec<&'a str> {
    if pattern == ANY {
        ids.iter().map(String::as_str).collect()
    } else if ids.iter().any(|i| i == pattern) {
        vec![pattern]
    } else {
        Vec::new()
    }
}

/// Every concrete edit an operator denotes on `graph`, in target-id order.
/// Applicability is not checked here.
pub fn concrete_edits(op: &GraphOperator, graph: &GraphSpec) -> Vec<AppliedEdit> {
    let mut nodes: Vec<String> = graph.nodes.iter().map(|n| n.id.clone()).collect();
    let mut edges: Vec<String> = graph.edges.iter().map(|e| e.id.clone()).collect();
    nodes.sort();
    edges.sort();
    let wrap = |edit: Edit| AppliedEdit {
        operator: op.id.clone(),
        cost: op.cost,
        edit,
    };
    let mut out = Vec::new();
    match &op.kind {
        OperatorKind::InsertNode { template, edge } => {
            for e in expand(edge, &edges) {
                out.push(wrap(Edit::InsertNode {
                    template: template.clone(),
                    edge: e.into(),
                }));
            }
        }
        OperatorKind::RemoveNode { node } => {
            for n in expand(node, &nodes) {
                out.push(wrap(Edit::RemoveNode { node: n.into() }));
            }
        }
        OperatorKind::RewireEdge { edge, source, target } => {
            for e in expand(edge, &edges) {
                let spec = graph.edge(e).expect("edge listed");
                let sources = match source {
                    Some(p) => expand(p, &nodes),
                    None => vec![spec.source.as_str()],
                };
                let targets = match target {
                    Some(p) => expand(p, &nodes),
                    None => vec![spec.target.as_str()],
                };
                for s in &sources {
                    for t in &targets {
                        if *s == spec.source && *t == spec.target {
                            continue;
                        }
                        out.push(wrap(Edit::RewireEdge {
                            edge: e.into(),
                            source: (*s).into(),
                            target: (*t).into(),
                        }));
                    }
                }
            }
        }
        OperatorKind::AddEdge {
            source,
            target,
            adapter,
        } => {
            for s in expand(source, &nodes) {
                for t in expand(target, &nodes) {
                    out.push(wrap(Edit::AddEdge {
                        source: s.into(),
                        target: t.into(),
                        adapter: adapter.clone(),
                    }));
                }
            }
        }
        OperatorKind::RemoveEdge { edge } => {
            for e in expand(edge, &edges) {
                out.push(wrap(Edit::RemoveEdge { edge: e.into() }));
            }
        }
        OperatorKind::ChangeNodeType { node, function } => {
            for n in expand(node, &nodes) {
                out.push(wrap(Edit::ChangeNodeType {
                    node: n.into(),
                    function: function.clone(),
                }));
            }
        }
        OperatorKind::AddGate { edge, gate } => {
            for e in expand(edge, &edges) {
                out.push(wrap(Edit::AddGate {
                    edge: e.into(),
                    gate: gate.clone(),
                }));
            }
        }
        OperatorKind::AddStateLoop { node, field } => {
            for n in expand(node, &nodes) {
                out.push(wrap(Edit::AddStateLoop {
                    node: n.into(),
                    field: field.clone(),
                }));
            }
        }
    }
    out
}
