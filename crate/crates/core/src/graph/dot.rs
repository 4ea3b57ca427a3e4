use std::collections::BTreeSet;
use std::fmt::Write;

use super::{Comparator, EdgeSpec, GraphSpec, NodeSpec};

fn quote(s: &str) -> String {
    format!(
        "\"{}\"",
        s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
    )
}

fn node_label(n: &NodeSpec) -> String {
    if n.role.is_empty() {
        format!("{}\n{}", n.id, n.function)
    } else {
        format!("{}\n{} [{}]", n.id, n.function, n.role)
    }
}

fn edge_label(e: &EdgeSpec) -> Option<String> {
    let gate = e.gate.as_ref().map(|g| {
        let op = match g.comparator {
            Comparator::Equals => "==",
            Comparator::NotEquals => "!=",
            Comparator::GreaterThan => ">",
        };
        let path = if g.path.is_empty() { "out" } else { g.path.as_str() };
        format!("{path} {op} {}", g.value)
    });
    match (gate, e.recurrent) {
        (Some(g), true) => Some(format!("{g} (t-1)")),
        (Some(g), false) => Some(g),
        (None, true) => Some("t-1".into()),
        (None, false) => None,
    }
}

fn write_edge(out: &mut String, e: &EdgeSpec, extra: &str) {
    let mut attrs = Vec::new();
    if let Some(l) = edge_label(e) {
        attrs.push(format!("label={}", quote(&l)));
    }
    if e.gate.is_some() {
        attrs.push("style=dashed".to_string());
    }
    if !extra.is_empty() {
        attrs.push(extra.to_string());
    }
    let _ = write!(out, "  {} -> {}", quote(&e.source), quote(&e.target));
    if !attrs.is_empty() {
        let _ = write!(out, " [{}]", attrs.join(", "));
    }
    out.push_str(";\n");
}

/// Graphviz rendering of nodes, edges and gates.
pub fn to_dot(graph: &GraphSpec) -> String {
    let g = graph.clone().canonical();
    let mut out = format!("digraph {} {{\n  rankdir=TB;\n", quote(&g.id));
    for n in &g.nodes {
        let shape = if g.inputs.contains(&n.id) || g.outputs.contains(&n.id) {
            "doublecircle"
        } else {
            "box"
        };
        let _ = writeln!(
            out,
            "  {} [label={}, shape={shape}];",
            quote(&n.id),
            quote(&node_label(n))
        );
    }
    for e in &g.edges {
        write_edge(&mut out, e, "");
    }
    out.push_str("}\n");
    out
}

/// Rendering of `after` with nodes and edges added since `before`
/// highlighted and removed ones drawn faded.
pub fn to_dot_diff(before: &GraphSpec, after: &GraphSpec) -> String {
    let before = before.clone().canonical();
    let after = after.clone().canonical();
    let old_nodes: BTreeSet<&str> = before.nodes.iter().map(|n| n.id.as_str()).collect();
    let new_nodes: BTreeSet<&str> = after.nodes.iter().map(|n| n.id.as_str()).collect();
    let old_edges: BTreeSet<(&str, &str)> = before
        .edges
        .iter()
        .map(|e| (e.source.as_str(), e.target.as_str()))
        .collect();
    let new_edges: BTreeSet<(&str, &str)> = after
        .edges
        .iter()
        .map(|e| (e.source.as_str(), e.target.as_str()))
        .collect();

    let mut out = format!("digraph {} {{\n  rankdir=TB;\n", quote(&after.id));
    for n in &after.nodes {
        let style = if old_nodes.contains(n.id.as_str()) {
            ""
        } else {
            ", color=blue, fontcolor=blue, penwidth=2"
        };
        let _ = writeln!(
            out,
            "  {} [label={}, shape=box{style}];",
            quote(&n.id),
            quote(&node_label(n))
        );
    }
    for n in before.nodes.iter().filter(|n| !new_nodes.contains(n.id.as_str())) {
        let _ = writeln!(
            out,
            "  {} [label={}, shape=box, style=dotted, color=gray];",
            quote(&n.id),
            quote(&node_label(n))
        );
    }
    for e in &after.edges {
        let old = old_edges.contains(&(e.source.as_str(), e.target.as_str()));
        let old_gate = before
            .edges
            .iter()
            .find(|b| b.source == e.source && b.target == e.target)
            .map(|b| b.gate.is_some());
        let changed = old && old_gate != Some(e.gate.is_some());
        let extra = if !old || changed { "color=blue, penwidth=2" } else { "" };
        write_edge(&mut out, e, extra);
    }
    for e in before
        .edges
        .iter()
        .filter(|e| !new_edges.contains(&(e.source.as_str(), e.target.as_str())))
    {
        write_edge(&mut out, e, "color=gray, style=dotted");
    }
    out.push_str("}\n");
    out
}
