//! Numeric pipelines over vectors. Targets are
//! `y = clip(normalize(x)) · g*` for a hidden gain; the initial design is
//! a lone scale node.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ConfigAssignment, ConfigSpace, Owner, ParamKind, ParamSpec, ParamValue};
use crate::eval::{Metric, TaskInstance};
use crate::feedback::{FeedbackItem, FeedbackKind};
use crate::graph::{EdgeSpec, GraphSpec, NodeFault, NodeOutput, NodeParams, NodeRegistry, NodeSpec};
use crate::gstep::{GraphOperator, NodeTemplate, OperatorKind, TemplateParam, ANY};
use crate::seed;
use crate::value::{Value, ValueSchema};

use super::TaskBundle;

pub const TRUE_GAIN: f64 = 2.0;
pub const TRUE_LIMIT: f64 = 1.5;
pub const GAIN_RANGE: (f64, f64) = (0.0, 4.0);
pub const LIMIT_RANGE: (f64, f64) = (0.5, 3.0);
pub const GRID: u32 = 11;
pub const INITIAL_GAIN: f64 = 1.2;
/// Mean gap between prediction and target that triggers centering feedback.
pub const OFFSET_FEEDBACK: f64 = 0.5;

pub const TRAIN_TASKS: usize = 30;
pub const TEST_TASKS: usize = 30;

fn vector(x: &Value) -> Result<&[f64], NodeFault> {
    x.as_vector().ok_or_else(|| NodeFault("expected a vector".into()))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// `center` subtracts the mean; `standard` also divides by the
/// population standard deviation (zeros when it vanishes).
pub fn normalize(xs: &[f64], kernel: &str) -> Vec<f64> {
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    if kernel != "standard" {
        return centered;
    }
    let sd = (centered.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64).sqrt();
    if sd == 0.0 {
        return vec![0.0; xs.len()];
    }
    centered.iter().map(|x| x / sd).collect()
}

/// `hard` clamps to `[-limit, limit]`; `soft` is `limit · tanh(x / limit)`.
pub fn clip(xs: &[f64], kernel: &str, limit: f64) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            if kernel == "soft" {
                limit * (x / limit).tanh()
            } else {
                x.clamp(-limit, limit)
            }
        })
        .collect()
}

/// `linear` is `gain · x`; `tanh` is `gain · tanh(x)`.
pub fn scale(xs: &[f64], kernel: &str, gain: f64) -> Vec<f64> {
    xs.iter()
        .map(|&x| if kernel == "tanh" { gain * x.tanh() } else { gain * x })
        .collect()
}

fn add_noise(xs: &mut [f64], sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = seed::rng(seed);
    for x in xs {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += sigma * z;
    }
}

/// The hidden ground truth.
pub fn target(x: &[f64]) -> Vec<f64> {
    scale(
        &clip(&normalize(x, "standard"), "hard", TRUE_LIMIT),
        "linear",
        TRUE_GAIN,
    )
}

pub fn registry(noise: f64) -> NodeRegistry {
    let mut r = NodeRegistry::with_identity();
    r.register("nc.normalize", |x: &Value, p: &NodeParams, _| {
        let out = normalize(vector(x)?, p.choice_or("kernel", "center"));
        Ok(NodeOutput::new(Value::Vector(out), 1.0))
    });
    r.register("nc.clip", |x: &Value, p: &NodeParams, _| {
        let limit = p.f64_or("limit", TRUE_LIMIT);
        let out = clip(vector(x)?, p.choice_or("kernel", "hard"), limit);
        Ok(NodeOutput::new(Value::Vector(out), 1.0))
    });
    r.register("nc.scale", move |x: &Value, p: &NodeParams, seed| {
        let mut out = scale(vector(x)?, p.choice_or("kernel", "linear"), p.f64_or("gain", 1.0));
        add_noise(&mut out, noise, seed);
        Ok(NodeOutput::new(Value::Vector(out), 1.0))
    });
    r.register("nc.noise", move |x: &Value, _: &NodeParams, seed| {
        let mut out = vector(x)?.to_vec();
        add_noise(&mut out, 1.0 + noise, seed);
        Ok(NodeOutput::new(Value::Vector(out), 1.0))
    });
    r
}

/// `100 · max(0, 1 − ‖pred − y‖ / ‖y‖)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ChainMetric;

fn parts<'a>(outputs: &'a BTreeMap<String, Value>, meta: &'a Value) -> Option<(&'a [f64], &'a [f64])> {
    let pred = outputs.get("scale").and_then(Value::as_vector)?;
    let y = meta.field("target").and_then(Value::as_vector)?;
    (pred.len() == y.len()).then_some((pred, y))
}

impl Metric for ChainMetric {
    fn id(&self) -> &str {
        "relative-error"
    }

    fn score(&self, outputs: &BTreeMap<String, Value>, meta: &Value) -> f64 {
        let Some((pred, y)) = parts(outputs, meta) else {
            return 0.0;
        };
        let err = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
        let at_zero = y.iter().map(|t| t * t).sum::<f64>().sqrt();
        if at_zero == 0.0 {
            return if err == 0.0 { 100.0 } else { 0.0 };
        }
        100.0 * (1.0 - err / at_zero).max(0.0)
    }

    fn feedback(&self, outputs: &BTreeMap<String, Value>, meta: &Value, task: &str) -> Vec<FeedbackItem> {
        let Some((pred, y)) = parts(outputs, meta) else {
            return Vec::new();
        };
        if (mean(pred) - mean(y)).abs() > OFFSET_FEEDBACK {
            vec![FeedbackItem {
                kind: FeedbackKind::MissingInformation,
                subject: None,
                payload: "centering".into(),
                task: task.into(),
                token: None,
            }]
        } else {
            Vec::new()
        }
    }
}

fn choice(values: &[&str]) -> ParamKind {
    ParamKind::Choice {
        values: values.iter().map(|s| s.to_string()).collect(),
    }
}

fn float(range: (f64, f64)) -> ParamKind {
    ParamKind::FloatRange {
        lo: range.0,
        hi: range.1,
        grid: Some(GRID),
    }
}

pub fn normalize_kind() -> ParamKind {
    choice(&["center", "standard"])
}
pub fn clip_kind() -> ParamKind {
    choice(&["hard", "soft"])
}
pub fn scale_kind() -> ParamKind {
    choice(&["linear", "tanh"])
}

pub fn schema(dim: usize) -> ValueSchema {
    ValueSchema::Vector { dim }
}

/// x → scale.
pub fn initial_graph(dim: usize) -> GraphSpec {
    let s = schema(dim);
    let mut g = GraphSpec::new("noisychain");
    g.inputs.insert("x".into());
    g.outputs.insert("scale".into());
    g.nodes = vec![
        NodeSpec::new("x", "identity", s.clone()).with_role("input"),
        NodeSpec::new("scale", "nc.scale", s)
            .with_role("scale")
            .with_param("gain", "scale.gain")
            .with_param("kernel", "scale.kernel"),
    ];
    g.edges = vec![EdgeSpec::new("x->scale", "x", "scale")];
    g.canonical()
}

pub fn initial_space() -> ConfigSpace {
    ConfigSpace::new(vec![
        ParamSpec::new("scale.gain", Owner::Node("scale".into()), float(GAIN_RANGE)),
        ParamSpec::new("scale.kernel", Owner::Node("scale".into()), scale_kind()),
    ])
    .expect("static space is valid")
}

pub fn initial_assignment() -> ConfigAssignment {
    let mut a = initial_space().default_assignment();
    a.set("scale.gain", ParamValue::Float(INITIAL_GAIN));
    a
}

/// x → normalize → clip → scale, the ground-truth topology.
pub fn composed_graph(dim: usize) -> GraphSpec {
    let s = schema(dim);
    let mut g = initial_graph(dim);
    g.nodes.push(
        NodeSpec::new("normalize", "nc.normalize", s.clone())
            .with_role("normalize")
            .with_param("kernel", "normalize.kernel"),
    );
    g.nodes.push(
        NodeSpec::new("clip", "nc.clip", s)
            .with_role("clip")
            .with_param("kernel", "clip.kernel")
            .with_param("limit", "clip.limit"),
    );
    g.edges = vec![
        EdgeSpec::new("x->normalize", "x", "normalize"),
        EdgeSpec::new("normalize->clip", "normalize", "clip"),
        EdgeSpec::new("clip->scale", "clip", "scale"),
    ];
    g.canonical()
}

pub fn composed_space() -> ConfigSpace {
    ConfigSpace::new(vec![
        ParamSpec::new("clip.kernel", Owner::Node("clip".into()), clip_kind()),
        ParamSpec::new("clip.limit", Owner::Node("clip".into()), float(LIMIT_RANGE)),
        ParamSpec::new("normalize.kernel", Owner::Node("normalize".into()), normalize_kind()),
        ParamSpec::new("scale.gain", Owner::Node("scale".into()), float(GAIN_RANGE)),
        ParamSpec::new("scale.kernel", Owner::Node("scale".into()), scale_kind()),
    ])
    .expect("static space is valid")
}

/// The ground-truth assignment for [`composed_graph`].
pub fn true_assignment() -> ConfigAssignment {
    ConfigAssignment(BTreeMap::from([
        ("clip.kernel".into(), ParamValue::Choice("hard".into())),
        ("clip.limit".into(), ParamValue::Float(TRUE_LIMIT)),
        ("normalize.kernel".into(), ParamValue::Choice("standard".into())),
        ("scale.gain".into(), ParamValue::Float(TRUE_GAIN)),
        ("scale.kernel".into(), ParamValue::Choice("linear".into())),
    ]))
}

pub fn library(dim: usize) -> Vec<NodeTemplate> {
    let s = schema(dim);
    vec![
        NodeTemplate::single("normalize", "nc.normalize", "normalize", s.clone())
            .with_param(TemplateParam::new("kernel", normalize_kind()))
            .with_keywords(&["centering"]),
        NodeTemplate::single("clip", "nc.clip", "clip", s.clone())
            .with_param(TemplateParam::new("kernel", clip_kind()))
            .with_param(TemplateParam::new("limit", float(LIMIT_RANGE)))
            .with_keywords(&["outliers"]),
        NodeTemplate::single("noise", "nc.noise", "noise", s),
    ]
}

pub fn catalog() -> Vec<GraphOperator> {
    let insert = |id: &str, template: &str| {
        GraphOperator::new(
            id,
            OperatorKind::InsertNode {
                template: template.into(),
                edge: ANY.into(),
            },
        )
    };
    vec![
        insert("insert-clip", "clip"),
        insert("insert-noise", "noise"),
        insert("insert-normalize", "normalize"),
        GraphOperator::new("remove-node", OperatorKind::RemoveNode { node: ANY.into() }),
    ]
}

/// Inputs `x = offset + spread · z` with offset in `[2, 5]` and spread in
/// `[0.5, 2]`; targets from [`target`].
pub fn generate_tasks(dim: usize, count: usize, seed: u64, prefix: &str) -> Vec<TaskInstance> {
    let mut rng = seed::rng(seed);
    (0..count)
        .map(|i| {
            let offset = rng.random_range(2.0..=5.0);
            let spread = rng.random_range(0.5..=2.0);
            let x: Vec<f64> = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    offset + spread * z
                })
                .collect();
            let y = target(&x);
            TaskInstance {
                id: format!("{prefix}{i:03}"),
                inputs: BTreeMap::from([("x".to_string(), Value::Vector(x))]),
                meta: Value::record([("target", Value::Vector(y))]),
            }
        })
        .collect()
}

/// The NoisyChain bundle. `dim` is raised to at least 1.
pub fn make_noisychain(dim: usize, noise: f64, seed: u64) -> TaskBundle {
    let dim = dim.max(1);
    TaskBundle {
        name: "noisychain".into(),
        graph: initial_graph(dim),
        space: initial_space(),
        assignment: initial_assignment(),
        library: library(dim),
        catalog: catalog(),
        registry: registry(noise.max(0.0)),
        metric: Arc::new(ChainMetric),
        train: generate_tasks(dim, TRAIN_TASKS, seed::derive(seed, "train", 0), "train-"),
        test: generate_tasks(dim, TEST_TASKS, seed::derive(seed, "test", 0), "test-"),
    }
}
