//! Synthetic task bundles and the brute-force oracles that check the
//! optimizer against them.

pub mod constraintsat;
pub mod identity;
pub mod noisychain;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::budget::BudgetLedger;
use crate::config::{ConfigAssignment, ConfigError, ConfigSpace};
use crate::eval::{estimate_utility, structure_complexity, EvalError, Metric, Schedule, TaskInstance, UtilityEstimate};
use crate::graph::{validate_graph, GraphError, GraphSpec, NodeRegistry};
use crate::gstep::{
    apply_edits, concrete_edits, warm_start, warm_start_seed, EditContext, EditSequence, GraphOperator, Limits,
    NodeTemplate,
};
use crate::maestro::Problem;
use crate::seed;

pub use constraintsat::make_constraintsat;
pub use identity::make_identity;
pub use noisychain::make_noisychain;

/// Largest search an oracle agrees to run.
pub const ORACLE_LIMIT: usize = 10_000;

/// An initial design with everything needed to optimize and check it.
#[derive(Clone)]
pub struct TaskBundle {
    pub name: String,
    pub graph: GraphSpec,
    pub space: ConfigSpace,
    pub assignment: ConfigAssignment,
    pub library: Vec<NodeTemplate>,
    pub catalog: Vec<GraphOperator>,
    pub registry: NodeRegistry,
    pub metric: Arc<dyn Metric>,
    pub train: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

impl std::fmt::Debug for TaskBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskBundle")
            .field("name", &self.name)
            .field("graph", &self.graph.id)
            .field("train", &self.train.len())
            .field("test", &self.test.len())
            .finish()
    }
}

impl TaskBundle {
    pub fn edit_context(&self) -> EditContext {
        EditContext::new(self.registry.clone(), self.library.clone(), self.catalog.clone())
    }

    pub fn problem<'a>(&'a self, ctx: &'a EditContext) -> Problem<'a> {
        Problem {
            graph: &self.graph,
            space: &self.space,
            assignment: &self.assignment,
            ctx,
            metric: self.metric.as_ref(),
            tasks: &self.train,
        }
    }

    /// Checks that the initial design validates.
    pub fn check(&self) -> Result<(), OracleError> {
        self.space.check()?;
        self.space.validate(&self.assignment)?;
        validate_graph(&self.graph, &self.registry, &self.space)?;
        Ok(())
    }

    /// Scores a design on every test task, one rollout each, with seeds
    /// derived from `seed`.
    pub fn score_test(
        &self,
        graph: &GraphSpec,
        space: &ConfigSpace,
        assignment: &ConfigAssignment,
        seed: u64,
    ) -> Result<UtilityEstimate, OracleError> {
        let schedule = task_schedule(&self.test, seed::derive(seed, "holdout", 0));
        score_design(
            &self.registry,
            self.metric.as_ref(),
            graph,
            space,
            assignment,
            &schedule,
        )
    }
}

/// Looks a built-in bundle up by name.
pub fn by_name(name: &str, seed: u64) -> Option<TaskBundle> {
    match name {
        "constraintsat" => Some(make_constraintsat(4, seed)),
        "noisychain" => Some(make_noisychain(8, 0.05, seed)),
        "identity" => Some(make_identity(seed)),
        _ => None,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("search space of {size} exceeds {limit}")]
    SpaceTooLarge { size: usize, limit: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One rollout seed per task, derived from `seed`.
pub fn task_schedule(tasks: &[TaskInstance], seed: u64) -> Schedule {
    let seeds = (0..tasks.len())
        .map(|i| seed::derive(seed, "rollout", i as u64))
        .collect();
    Schedule::new(tasks.to_vec(), seeds)
}

/// Scores a fixed design on `schedule` against a private, unbounded
/// ledger.
pub fn score_design(
    registry: &NodeRegistry,
    metric: &dyn Metric,
    graph: &GraphSpec,
    space: &ConfigSpace,
    assignment: &ConfigAssignment,
    schedule: &Schedule,
) -> Result<UtilityEstimate, OracleError> {
    let validated = validate_graph(graph, registry, space)?;
    let ledger = BudgetLedger::unbounded();
    let (est, _) = estimate_utility(
        &validated,
        assignment,
        &schedule.tasks,
        &schedule.seeds,
        metric,
        &ledger,
    )?;
    Ok(est)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigOracle {
    pub best: ConfigAssignment,
    pub best_mean: f64,
    pub evaluated: usize,
    /// Mean per assignment, in enumeration order.
    pub scores: Vec<(ConfigAssignment, f64)>,
}

/// Exhaustive evaluation of the discretized space. The first maximum in
/// enumeration order wins.
pub fn oracle_enumerate_configs(
    registry: &NodeRegistry,
    metric: &dyn Metric,
    graph: &GraphSpec,
    space: &ConfigSpace,
    schedule: &Schedule,
) -> Result<ConfigOracle, OracleError> {
    let size = space.grid_size();
    if size > ORACLE_LIMIT {
        return Err(OracleError::SpaceTooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }
    let validated = validate_graph(graph, registry, space)?;
    let ledger = BudgetLedger::unbounded();
    let mut scores = Vec::with_capacity(size);
    for a in space.enumerate(ORACLE_LIMIT)? {
        let (est, _) = estimate_utility(&validated, &a, &schedule.tasks, &schedule.seeds, metric, &ledger)?;
        scores.push((a, est.mean));
    }
    let (best, best_mean) = scores
        .iter()
        .fold(None::<&(ConfigAssignment, f64)>, |acc, s| match acc {
            Some(b) if b.1 >= s.1 => Some(b),
            _ => Some(s),
        })
        .cloned()
        .expect("a space has at least one assignment");
    Ok(ConfigOracle {
        best,
        best_mean,
        evaluated: scores.len(),
        scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphOracleEntry {
    pub graph: GraphSpec,
    pub assignment: ConfigAssignment,
    pub mean: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphOracle {
    /// Canonical keys of every feasible graph attaining the maximum.
    pub argmax: BTreeSet<String>,
    pub best_mean: f64,
    pub incumbent_mean: f64,
    pub entries: Vec<GraphOracleEntry>,
}

/// Every graph within `radius` catalog edits of `graph`, found by plain
/// breadth-first search over graph keys.
fn reachable(graph: &GraphSpec, space: &ConfigSpace, ctx: &EditContext, radius: u32) -> Vec<(GraphSpec, ConfigSpace)> {
    let mut seen = BTreeSet::from([graph.key()]);
    let mut out = Vec::new();
    let mut queue = VecDeque::from([(graph.clone(), space.clone(), 0u32)]);
    while let Some((g, s, d)) = queue.pop_front() {
        for op in &ctx.catalog {
            if d + op.cost > radius {
                continue;
            }
            for edit in concrete_edits(op, &g) {
                let seq = EditSequence { edits: vec![edit] };
                if let Ok(e) = apply_edits(&g, &s, &seq, ctx) {
                    if seen.insert(e.graph.key()) {
                        out.push((e.graph.clone(), e.space.clone()));
                        queue.push_back((e.graph, e.space, d + op.cost));
                    }
                }
            }
        }
    }
    out
}

/// Scores the incumbent and every neighbor within `radius` at its
/// warm-start assignment on `schedule`, and returns the feasible argmax.
#[allow(clippy::too_many_arguments)]
pub fn oracle_enumerate_graphs(
    ctx: &EditContext,
    metric: &dyn Metric,
    graph: &GraphSpec,
    space: &ConfigSpace,
    assignment: &ConfigAssignment,
    radius: u32,
    schedule: &Schedule,
    step_seed: u64,
    limits: &Limits,
) -> Result<GraphOracle, OracleError> {
    let neighbors = reachable(graph, space, ctx, radius);
    let size = (neighbors.len() + 1) * schedule.len();
    if size > ORACLE_LIMIT {
        return Err(OracleError::SpaceTooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }
    let incumbent_mean = score_design(&ctx.registry, metric, graph, space, assignment, schedule)?.mean;
    let mut entries = vec![GraphOracleEntry {
        graph: graph.clone().canonical(),
        assignment: assignment.clone(),
        mean: incumbent_mean,
        feasible: true,
    }];
    for (g, s) in neighbors {
        let a = warm_start(&s, assignment, warm_start_seed(step_seed, &g));
        let omega = structure_complexity(&g, limits.weights);
        if omega > limits.tau {
            entries.push(GraphOracleEntry {
                graph: g,
                assignment: a,
                mean: f64::NAN,
                feasible: false,
            });
            continue;
        }
        let est = score_design(&ctx.registry, metric, &g, &s, &a, schedule)?;
        let feasible = limits.kappa.is_none_or(|k| est.mean_cost <= k);
        entries.push(GraphOracleEntry {
            graph: g,
            assignment: a,
            mean: est.mean,
            feasible,
        });
    }
    let best_mean = entries
        .iter()
        .filter(|e| e.feasible)
        .map(|e| e.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let argmax = entries
        .iter()
        .filter(|e| e.feasible && e.mean == best_mean)
        .map(|e| e.graph.key())
        .collect();
    Ok(GraphOracle {
        argmax,
        best_mean,
        incumbent_mean,
        entries,
    })
}

/// Fewest catalog operator applications turning `from` into a graph with
/// the same canonical key as `to`, searching up to `max_depth`.
pub fn oracle_edit_distance(
    from: &GraphSpec,
    space: &ConfigSpace,
    to: &GraphSpec,
    ctx: &EditContext,
    max_depth: u32,
) -> Option<u32> {
    let goal = to.key();
    let mut dist: BTreeMap<String, u32> = BTreeMap::from([(from.key(), 0)]);
    if from.key() == goal {
        return Some(0);
    }
    let mut queue = VecDeque::from([(from.clone(), space.clone())]);
    while let Some((g, s)) = queue.pop_front() {
        let d = dist[&g.key()];
        for op in &ctx.catalog {
            let nd = d + op.cost;
            if nd > max_depth {
                continue;
            }
            for edit in concrete_edits(op, &g) {
                let seq = EditSequence { edits: vec![edit] };
                let Ok(e) = apply_edits(&g, &s, &seq, ctx) else {
                    continue;
                };
                let k = e.graph.key();
                if k == goal {
                    return Some(nd);
                }
                if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(k) {
                    slot.insert(nd);
                    queue.push_back((e.graph, e.space));
                }
            }
        }
    }
    None
}
