//! A one-node echo design scored by exact match: every task scores 100.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::TaskBundle;
use crate::config::{ConfigAssignment, ConfigSpace};
use crate::eval::{ExactMatch, TaskInstance};
use crate::graph::{EdgeSpec, GraphSpec, NodeRegistry, NodeSpec};
use crate::seed;
use crate::value::{Value, ValueSchema};

pub const TASKS: usize = 10;

pub fn initial_graph() -> GraphSpec {
    let mut g = GraphSpec::new("identity");
    g.inputs.insert("x".into());
    g.outputs.insert("echo".into());
    g.nodes = vec![
        NodeSpec::new("x", "identity", ValueSchema::Text).with_role("input"),
        NodeSpec::new("echo", "identity", ValueSchema::Text),
    ];
    g.edges = vec![EdgeSpec::new("x->echo", "x", "echo")];
    g.canonical()
}

pub fn generate_tasks(count: usize, seed: u64, prefix: &str) -> Vec<TaskInstance> {
    (0..count)
        .map(|i| {
            let word = format!("w{:016x}", seed::derive(seed, "word", i as u64));
            TaskInstance {
                id: format!("{prefix}{i:03}"),
                inputs: BTreeMap::from([("x".to_string(), Value::text(word.clone()))]),
                meta: Value::record([("reference", Value::text(word))]),
            }
        })
        .collect()
}

pub fn make_identity(seed: u64) -> TaskBundle {
    TaskBundle {
        name: "identity".into(),
        graph: initial_graph(),
        space: ConfigSpace::new(Vec::new()).expect("empty space is valid"),
        assignment: ConfigAssignment::default(),
        library: Vec::new(),
        catalog: Vec::new(),
        registry: NodeRegistry::with_identity(),
        metric: Arc::new(ExactMatch),
        train: generate_tasks(TASKS, seed::derive(seed, "train", 0), "train-"),
        test: generate_tasks(TASKS, seed::derive(seed, "test", 0), "test-"),
    }
}
