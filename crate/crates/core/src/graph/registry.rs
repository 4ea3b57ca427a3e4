use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::config::ParamValue;
use crate::value::Value;

/// The resolved configuration a node function sees, keyed by local role.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeParams(pub BTreeMap<String, ParamValue>);

impl NodeParams {
    pub fn get(&self, role: &str) -> Option<&ParamValue> {
        self.0.get(role)
    }

    pub fn f64_or(&self, role: &str, default: f64) -> f64 {
        self.get(role).and_then(ParamValue::as_f64).unwrap_or(default)
    }

    pub fn choice_or<'a>(&'a self, role: &str, default: &'a str) -> &'a str {
        self.get(role).and_then(ParamValue::as_choice).unwrap_or(default)
    }

    pub fn tokens(&self, role: &str) -> &[String] {
        self.get(role).and_then(ParamValue::as_tokens).unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeOutput {
    pub value: Value,
    pub cost: f64,
    /// Free-text notes surfaced as feedback.
    pub notes: Vec<String>,
}

impl NodeOutput {
    pub fn new(value: Value, cost: f64) -> Self {
        Self {
            value,
            cost,
            notes: Vec::new(),
        }
    }
}

/// A node function signalling failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeFault(pub String);

impl fmt::Display for NodeFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A node's stochastic function. Implementations must be deterministic in
/// `(input, params, seed)`: all randomness comes from `seed`.
pub trait NodeFunction: Send + Sync {
    fn call(&self, input: &Value, params: &NodeParams, seed: u64) -> Result<NodeOutput, NodeFault>;
}

impl<F> NodeFunction for F
where
    F: Fn(&Value, &NodeParams, u64) -> Result<NodeOutput, NodeFault> + Send + Sync,
{
    fn call(&self, input: &Value, params: &NodeParams, seed: u64) -> Result<NodeOutput, NodeFault> {
        self(input, params, seed)
    }
}

#[derive(Clone, Default)]
pub struct NodeRegistry {
    functions: BTreeMap<String, Arc<dyn NodeFunction>>,
}

impl NodeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding only `identity`.
    pub fn with_identity() -> Self {
        let mut r = Self::new();
        r.register("identity", |x: &Value, _: &NodeParams, _| {
            Ok(NodeOutput::new(x.clone(), 0.0))
        });
        r
    }

    pub fn register<F: NodeFunction + 'static>(&mut self, name: impl Into<String>, f: F) {
        self.functions.insert(name.into(), Arc::new(f));
    }

    pub fn register_arc(&mut self, name: impl Into<String>, f: Arc<dyn NodeFunction>) {
        self.functions.insert(name.into(), f);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn NodeFunction>> {
        self.functions.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    /// Adds every function of `other`, replacing same-named entries.
    pub fn extend(&mut self, other: &NodeRegistry) {
        for (k, v) in &other.functions {
            self.functions.insert(k.clone(), v.clone());
        }
    }
}

impl fmt::Debug for NodeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.functions.keys()).finish()
    }
}
