//! Rollouts, utility estimates, the structure regularizer and the history
//! log.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::budget::{BudgetExceeded, BudgetLedger};
use crate::config::ConfigAssignment;
use crate::feedback::{FeedbackItem, FeedbackKind};
use crate::graph::{run_uncharged, ExecError, ExecutionTrace, GraphError, GraphSpec, ValidatedGraph};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    /// Values for the graph's input nodes.
    pub inputs: BTreeMap<String, Value>,
    /// Evaluation context: references, constraints, rubric.
    #[serde(default)]
    pub meta: Value,
}

/// Maps final outputs and task metadata to a score in `[0, 100]`.
pub trait Metric: Send + Sync {
    fn id(&self) -> &str;

    fn score(&self, outputs: &BTreeMap<String, Value>, meta: &Value) -> f64;

    fn feedback(&self, _outputs: &BTreeMap<String, Value>, _meta: &Value, _task: &str) -> Vec<FeedbackItem> {
        Vec::new()
    }
}

/// 100 when the single output (or the record of all outputs) equals
/// `meta.reference`, else 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactMatch;

impl Metric for ExactMatch {
    fn id(&self) -> &str {
        "exact-match"
    }

    fn score(&self, outputs: &BTreeMap<String, Value>, meta: &Value) -> f64 {
        let Some(reference) = meta.field("reference") else {
            return 0.0;
        };
        let got = if outputs.len() == 1 {
            outputs.values().next().cloned()
        } else {
            Some(Value::Record(outputs.clone()))
        };
        if got.as_ref() == Some(reference) {
            100.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    BudgetExceeded(#[from] BudgetExceeded),
    #[error("execution error: {0}")]
    Exec(ExecError),
    #[error("invalid graph: {0}")]
    InvalidGraph(#[from] GraphError),
    #[error("minibatch and seed list must be nonempty and of equal length")]
    BadSchedule,
}

impl From<ExecError> for EvalError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::BudgetExceeded(b) => EvalError::BudgetExceeded(b),
            other => EvalError::Exec(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub task: String,
    pub seed: u64,
    pub trace: ExecutionTrace,
    pub score: f64,
    pub cost: f64,
    pub feedback: Vec<FeedbackItem>,
}

/// Charges one rollout, executes, scores and extracts feedback. A node
/// failure scores 0 and yields a node-failure feedback item.
pub fn run_rollout(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    task: &TaskInstance,
    metric: &dyn Metric,
    seed: u64,
    ledger: &BudgetLedger,
) -> Result<RolloutRecord, EvalError> {
    ledger.charge(1)?;
    let trace = run_uncharged(graph, config, &task.inputs, seed)?;
    ledger.record_cost(trace.cost);
    let (score, feedback) = match &trace.failure {
        Some(f) => (
            0.0,
            vec![FeedbackItem {
                kind: FeedbackKind::NodeFailure,
                subject: Some(f.node.clone()),
                payload: f.detail.clone(),
                task: task.id.clone(),
                token: None,
            }],
        ),
        None => {
            let s = metric.score(&trace.outputs, &task.meta);
            let s = if s.is_finite() { s.clamp(0.0, 100.0) } else { 0.0 };
            (s, metric.feedback(&trace.outputs, &task.meta, &task.id))
        }
    };
    Ok(RolloutRecord {
        task: task.id.clone(),
        seed,
        cost: trace.cost,
        trace,
        score,
        feedback,
    })
}

/// Mean score and cost over a minibatch evaluated with a fixed seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub count: usize,
    pub mean_cost: f64,
    pub seeds: Vec<u64>,
    pub tasks: Vec<String>,
    /// The budget ran out before the minibatch was complete.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl UtilityEstimate {
    pub fn from_records(records: &[RolloutRecord], partial: bool) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            mean: records.iter().map(|r| r.score).sum::<f64>() / n,
            count: records.len(),
            mean_cost: records.iter().map(|r| r.cost).sum::<f64>() / n,
            seeds: records.iter().map(|r| r.seed).collect(),
            tasks: records.iter().map(|r| r.task.clone()).collect(),
            partial,
        }
    }

    /// Whether both estimates were taken on the same tasks and seeds.
    pub fn same_schedule(&self, other: &UtilityEstimate) -> bool {
        self.seeds == other.seeds && self.tasks == other.tasks
    }
}

/// Minibatch estimate. Fails only when not even one rollout can be charged;
/// a budget running out mid-batch yields a partial estimate.
pub fn estimate_utility(
    graph: &ValidatedGraph,
    config: &ConfigAssignment,
    minibatch: &[TaskInstance],
    seeds: &[u64],
    metric: &dyn Metric,
    ledger: &BudgetLedger,
) -> Result<(UtilityEstimate, Vec<RolloutRecord>), EvalError> {
    if minibatch.is_empty() || minibatch.len() != seeds.len() {
        return Err(EvalError::BadSchedule);
    }
    let mut records = Vec::with_capacity(minibatch.len());
    for (task, &seed) in minibatch.iter().zip(seeds) {
        match run_rollout(graph, config, task, metric, seed, ledger) {
            Ok(r) => records.push(r),
            Err(EvalError::BudgetExceeded(e)) if records.is_empty() => return Err(EvalError::BudgetExceeded(e)),
            Err(EvalError::BudgetExceeded(_)) => return Ok((UtilityEstimate::from_records(&records, true), records)),
            Err(e) => return Err(e),
        }
    }
    Ok((UtilityEstimate::from_records(&records, false), records))
}

/// Ω(G) = w_nodes·|V| + w_edges·|E|.
pub fn structure_complexity(graph: &GraphSpec, weights: (f64, f64)) -> f64 {
    weights.0 * graph.nodes.len() as f64 + weights.1 * graph.edges.len() as f64
}

/// Tasks and seeds shared by every candidate compared within a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub tasks: Vec<TaskInstance>,
    pub seeds: Vec<u64>,
}

impl Schedule {
    pub fn new(tasks: Vec<TaskInstance>, seeds: Vec<u64>) -> Self {
        assert_eq!(tasks.len(), seeds.len(), "one seed per task");
        Self { tasks, seeds }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Append-only, line-delimited JSON log. Keys are emitted in sorted order
/// and no timestamps are recorded, so identical runs give identical bytes.
#[derive(Debug, Default)]
pub struct HistoryLog {
    lines: Mutex<Vec<String>>,
}

impl HistoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, row: serde_json::Value) {
        let line = serde_json::to_string(&row).expect("history row serializes");
        self.lines.lock().expect("history lock").push(line);
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("history lock").clone()
    }

    pub fn rows(&self) -> Vec<serde_json::Value> {
        self.lines()
            .iter()
            .map(|l| serde_json::from_str(l).expect("history row parses"))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in self.lines() {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    /// Number of rollout rows.
    pub fn rollout_count(&self) -> usize {
        self.rows().iter().filter(|r| r["kind"] == "rollout").count()
    }
}

/// Where a rollout happened, for history rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowTag {
    pub iter: u32,
    pub step: &'static str,
    pub candidate: String,
}

impl RowTag {
    pub fn new(iter: u32, step: &'static str, candidate: impl Into<String>) -> Self {
        Self {
            iter,
            step,
            candidate: candidate.into(),
        }
    }
}

/// Metric, ledger and history bundled for the optimizer's steps.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub metric: &'a dyn Metric,
    pub ledger: &'a BudgetLedger,
    pub history: &'a HistoryLog,
}

impl<'a> Evaluator<'a> {
    pub fn new(metric: &'a dyn Metric, ledger: &'a BudgetLedger, history: &'a HistoryLog) -> Self {
        Self {
            metric,
            ledger,
            history,
        }
    }

    /// Estimates on `schedule` without logging.
    pub fn estimate_quiet(
        &self,
        graph: &ValidatedGraph,
        config: &ConfigAssignment,
        schedule: &Schedule,
    ) -> Result<(UtilityEstimate, Vec<RolloutRecord>), EvalError> {
        estimate_utility(
            graph,
            config,
            &schedule.tasks,
            &schedule.seeds,
            self.metric,
            self.ledger,
        )
    }

    /// Appends one history row per rollout.
    pub fn log(&self, tag: &RowTag, records: &[RolloutRecord]) {
        for r in records {
            self.history.push(json!({
                "kind": "rollout",
                "iter": tag.iter,
                "step": tag.step,
                "candidate": tag.candidate,
                "task": r.task,
                "seed": r.seed,
                "score": r.score,
                "cost": r.cost,
                "feedback": r.feedback,
            }));
        }
    }

    /// Estimates on `schedule` and logs every rollout under `tag`.
    pub fn estimate(
        &self,
        graph: &ValidatedGraph,
        config: &ConfigAssignment,
        schedule: &Schedule,
        tag: &RowTag,
    ) -> Result<(UtilityEstimate, Vec<RolloutRecord>), EvalError> {
        let out = self.estimate_quiet(graph, config, schedule)?;
        self.log(tag, &out.1);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedEstimate {
    pub estimate: UtilityEstimate,
    pub feedback: Vec<FeedbackItem>,
}

/// Estimates already paid for, keyed by graph and assignment. Only valid
/// while the schedule they were taken on stays fixed.
#[derive(Clone, Debug, Default)]
pub struct EvalCache {
    entries: BTreeMap<String, CachedEstimate>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(graph: &GraphSpec, config: &ConfigAssignment) -> String {
        format!("{}#{}", graph.key(), config.key())
    }

    pub fn get(&self, graph: &GraphSpec, config: &ConfigAssignment) -> Option<&CachedEstimate> {
        self.entries.get(&Self::key(graph, config))
    }

    pub fn insert(&mut self, graph: &GraphSpec, config: &ConfigAssignment, value: CachedEstimate) {
        self.entries.insert(Self::key(graph, config), value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
