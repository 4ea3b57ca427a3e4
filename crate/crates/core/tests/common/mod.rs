#![allow(dead_code)]

use std::collections::BTreeMap;

use maestro_core::config::{ConfigAssignment, ConfigSpace, Owner, ParamKind, ParamSpec, ParamValue};
use maestro_core::graph::{
    AdapterSpec, EdgeSpec, GraphSpec, MergeStrategy, NodeFault, NodeOutput, NodeParams, NodeRegistry, NodeSpec,
    Transform,
};
use maestro_core::seed;
use maestro_core::value::{Value, ValueSchema};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn number(v: &Value) -> Result<f64, NodeFault> {
    v.as_number().ok_or_else(|| NodeFault("expected a number".into()))
}

/// Deterministic numeric mocks plus a seeded noisy one and text stand-ins.
pub fn mock_registry() -> NodeRegistry {
    let mut r = NodeRegistry::with_identity();
    r.register("affine", |x: &Value, p: &NodeParams, _| {
        let x = number(x)?;
        Ok(NodeOutput::new(
            Value::Number(p.f64_or("a", 1.0) * x + p.f64_or("b", 0.0)),
            1.0,
        ))
    });
    r.register("clip", |x: &Value, p: &NodeParams, _| {
        let x = number(x)?;
        Ok(NodeOutput::new(
            Value::Number(x.max(p.f64_or("lo", -1.0)).min(p.f64_or("hi", 1.0))),
            1.0,
        ))
    });
    r.register("inc", |x: &Value, _: &NodeParams, _| {
        Ok(NodeOutput::new(Value::Number(number(x)? + 1.0), 1.0))
    });
    r.register("noisy", |x: &Value, _: &NodeParams, s: u64| {
        let z: f64 = StandardNormal.sample(&mut seed::rng(s));
        Ok(NodeOutput::new(Value::Number(number(x)? + z), 1.0))
    });
    r.register("fail", |_: &Value, _: &NodeParams, _| {
        Err(NodeFault("mock failure".into()))
    });
    for name in ["retrieve", "summarize", "create_query", "answer"] {
        r.register(name, move |x: &Value, _: &NodeParams, _| {
            let t = x.as_text().unwrap_or_default();
            Ok(NodeOutput::new(Value::text(format!("{name}({t})")), 1.0))
        });
    }
    r
}

pub fn num_node(id: &str, function: &str) -> NodeSpec {
    NodeSpec::new(id, function, ValueSchema::Number)
}

pub fn float_param(name: &str, owner: &str, lo: f64, hi: f64) -> ParamSpec {
    ParamSpec::new(
        name,
        Owner::Node(owner.into()),
        ParamKind::FloatRange { lo, hi, grid: None },
    )
}

pub enum MockKind {
    Affine { a: f64, b: f64 },
    Clip { lo: f64, hi: f64 },
}

pub struct RandomDag {
    pub graph: GraphSpec,
    pub space: ConfigSpace,
    pub config: ConfigAssignment,
    pub kinds: Vec<MockKind>,
    /// Per node: `(parent, a, b)` edge adapters in edge-id order.
    pub parents: Vec<Vec<(usize, f64, f64)>>,
}

/// A 4-node dag: `n0` is the input, every later node draws a nonempty
/// parent set among earlier nodes, sums its adapted inputs and applies an
/// affine or clip mock. Every node without children is an output.
pub fn random_dag(seed: u64) -> RandomDag {
    let mut rng = seed::rng(seed);
    let mut graph = GraphSpec::new(format!("dag-{seed}"));
    let mut params = Vec::new();
    let mut config = ConfigAssignment::default();
    let mut kinds = Vec::new();
    let mut parents = Vec::new();
    let mut has_child = [false; 4];
    for j in 0..4usize {
        let id = format!("n{j}");
        let kind = if rng.random_bool(0.6) {
            MockKind::Affine {
                a: rng.random_range(-2.0..2.0),
                b: rng.random_range(-2.0..2.0),
            }
        } else {
            MockKind::Clip {
                lo: rng.random_range(-3.0..0.0),
                hi: rng.random_range(0.0..3.0),
            }
        };
        let mut node = match &kind {
            MockKind::Affine { a, b } => {
                params.push(float_param(&format!("{id}.a"), &id, -2.0, 2.0));
                params.push(float_param(&format!("{id}.b"), &id, -2.0, 2.0));
                config.set(format!("{id}.a"), ParamValue::Float(*a));
                config.set(format!("{id}.b"), ParamValue::Float(*b));
                num_node(&id, "affine")
                    .with_param("a", &format!("{id}.a"))
                    .with_param("b", &format!("{id}.b"))
            }
            MockKind::Clip { lo, hi } => {
                params.push(float_param(&format!("{id}.lo"), &id, -3.0, 0.0));
                params.push(float_param(&format!("{id}.hi"), &id, 0.0, 3.0));
                config.set(format!("{id}.lo"), ParamValue::Float(*lo));
                config.set(format!("{id}.hi"), ParamValue::Float(*hi));
                num_node(&id, "clip")
                    .with_param("lo", &format!("{id}.lo"))
                    .with_param("hi", &format!("{id}.hi"))
            }
        };
        let mut mine = Vec::new();
        if j > 0 {
            let mut chosen: Vec<usize> = (0..j).filter(|_| rng.random_bool(0.5)).collect();
            if chosen.is_empty() {
                chosen.push(rng.random_range(0..j));
            }
            for p in chosen {
                let (a, b) = (rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
                graph.edges.push(
                    EdgeSpec::new(format!("n{p}->{id}"), format!("n{p}"), &id)
                        .with_adapter(AdapterSpec::new(Transform::ScalarAffine { a, b })),
                );
                has_child[p] = true;
                mine.push((p, a, b));
            }
            if mine.len() > 1 {
                node = node.with_merge(MergeStrategy::SumVectors);
            }
        }
        graph.nodes.push(node);
        kinds.push(kind);
        parents.push(mine);
    }
    graph.inputs.insert("n0".into());
    for (j, c) in has_child.iter().enumerate() {
        if !c {
            graph.outputs.insert(format!("n{j}"));
        }
    }
    RandomDag {
        graph: graph.canonical(),
        space: ConfigSpace::new(params).expect("valid space"),
        config,
        kinds,
        parents,
    }
}

/// Direct functional composition of a [`RandomDag`] on input `x`.
pub fn compose(dag: &RandomDag, x: f64) -> BTreeMap<String, f64> {
    let mut values = [0.0f64; 4];
    for j in 0..4 {
        let input = if j == 0 {
            x
        } else {
            let mut terms = dag.parents[j].iter().map(|&(p, a, b)| a * values[p] + b);
            let first = terms.next().expect("every later node has a parent");
            terms.fold(first, |acc, t| acc + t)
        };
        values[j] = match dag.kinds[j] {
            MockKind::Affine { a, b } => a * input + b,
            MockKind::Clip { lo, hi } => input.max(lo).min(hi),
        };
    }
    dag.graph
        .outputs
        .iter()
        .map(|o| (o.clone(), values[o[1..].parse::<usize>().expect("node index")]))
        .collect()
}

pub fn input(node: &str, v: Value) -> BTreeMap<String, Value> {
    BTreeMap::from([(node.to_string(), v)])
}

/// Two-hop retrieval agent: question fans out to every stage after the
/// first retrieval.
pub fn two_hop_retrieval() -> GraphSpec {
    let mut g = GraphSpec::new("two-hop");
    g.inputs.insert("question".into());
    g.outputs.insert("final_answer".into());
    let concat = MergeStrategy::ConcatText { separator: "\n".into() };
    g.nodes = vec![
        NodeSpec::new("question", "identity", ValueSchema::Text),
        NodeSpec::new("retrieve1", "retrieve", ValueSchema::Text),
        NodeSpec::new("summarize1", "summarize", ValueSchema::Text).with_merge(concat.clone()),
        NodeSpec::new("create_query_hop2", "create_query", ValueSchema::Text).with_merge(concat.clone()),
        NodeSpec::new("retrieve2", "retrieve", ValueSchema::Text),
        NodeSpec::new("summarize2", "summarize", ValueSchema::Text).with_merge(concat.clone()),
        NodeSpec::new("final_answer", "answer", ValueSchema::Text).with_merge(concat),
    ];
    for (s, t) in [
        ("question", "retrieve1"),
        ("retrieve1", "summarize1"),
        ("question", "summarize1"),
        ("summarize1", "create_query_hop2"),
        ("question", "create_query_hop2"),
        ("create_query_hop2", "retrieve2"),
        ("retrieve2", "summarize2"),
        ("question", "summarize2"),
        ("summarize1", "final_answer"),
        ("summarize2", "final_answer"),
        ("question", "final_answer"),
    ] {
        g.edges.push(EdgeSpec::new(format!("{s}->{t}"), s, t));
    }
    g
}
