//! The outer block-coordinate loop: a C-step on the incumbent graph, a
//! G-step with the new configuration carried over, and a guarded
//! acceptance test on one shared seed schedule.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::budget::{BudgetLedger, LedgerSnapshot};
use crate::config::{ConfigAssignment, ConfigError, ConfigSpace};
use crate::cstep::{run_c_step, CStepError, CStepInput, CStepParams, CStepReport, Strategy};
use crate::eval::{
    structure_complexity, CachedEstimate, EvalCache, EvalError, Evaluator, HistoryLog, Metric, RowTag, Schedule,
    TaskInstance, UtilityEstimate,
};
use crate::feedback::{collect, distill, FeedbackItem};
use crate::graph::{validate_graph, GraphError, GraphSpec};
use crate::gstep::{run_g_step, EditContext, EditSequence, GStepInput, GStepReport, Limits};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Joint,
    ConfigOnly,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Mode::Joint),
            "config-only" => Ok(Mode::ConfigOnly),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Acceptance tolerance ξ_t: one value for every iteration, or one per
/// iteration with the last repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tolerance {
    Constant(f64),
    PerIteration(Vec<f64>),
}

impl Tolerance {
    pub fn at(&self, iter: u32) -> f64 {
        match self {
            Tolerance::Constant(x) => *x,
            Tolerance::PerIteration(xs) => {
                let i = (iter.max(1) - 1) as usize;
                xs.get(i).or(xs.last()).copied().unwrap_or(0.0)
            }
        }
    }

    fn check(&self) -> bool {
        match self {
            Tolerance::Constant(x) => x.is_finite() && *x >= 0.0,
            Tolerance::PerIteration(xs) => xs.iter().all(|x| x.is_finite() && *x >= 0.0),
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Constant(2.0)
    }
}

fn default_split() -> (u32, u32) {
    (2, 1)
}
fn default_minibatch() -> usize {
    5
}
fn default_radius() -> u32 {
    1
}
fn default_weights() -> (f64, f64) {
    (1.0, 1.0)
}
fn default_strategy() -> Strategy {
    Strategy::Smbo
}
fn default_mode() -> Mode {
    Mode::Joint
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// Total rollout budget B.
    pub budget: u64,
    pub iterations: u32,
    /// Ratio B_t : B'_t of each iteration's share.
    #[serde(default = "default_split")]
    pub split: (u32, u32),
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    /// Trust radius r_t, constant across iterations.
    #[serde(default = "default_radius")]
    pub radius: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default = "default_weights")]
    pub weights: (f64, f64),
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub xi: Tolerance,
    #[serde(default)]
    pub cstep: CStepParams,
}

impl RunSpec {
    pub fn new(budget: u64, iterations: u32, seed: u64) -> Self {
        Self {
            budget,
            iterations,
            split: default_split(),
            minibatch: default_minibatch(),
            radius: default_radius(),
            tau: None,
            kappa: None,
            weights: default_weights(),
            strategy: default_strategy(),
            mode: default_mode(),
            seed,
            xi: Tolerance::default(),
            cstep: CStepParams::default(),
        }
    }

    pub fn check(&self) -> Result<(), MaestroError> {
        let bad = |m: &str| Err(MaestroError::InvalidRunSpec(m.into()));
        if self.minibatch == 0 {
            return bad("minibatch must be positive");
        }
        if self.radius == 0 {
            return bad("radius must be at least 1");
        }
        if self.split.0 + self.split.1 == 0 {
            return bad("split must not be 0:0");
        }
        if !self.xi.check() {
            return bad("tolerance must be finite and non-negative");
        }
        if self.tau.is_some_and(|t| t.is_nan()) || self.kappa.is_some_and(|k| k.is_nan()) {
            return bad("tau and kappa must be numbers");
        }
        if self.cstep.population == 0 || self.cstep.wave == 0 {
            return bad("population and wave must be positive");
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits {
            tau: self.tau.unwrap_or(f64::INFINITY),
            kappa: self.kappa,
            weights: self.weights,
        }
    }

    /// Splits one iteration's share into (B_t, B'_t).
    pub fn split_budget(&self, share: u64) -> (u64, u64) {
        if self.mode == Mode::ConfigOnly {
            return (share, 0);
        }
        let (c, g) = (self.split.0 as u64, self.split.1 as u64);
        let b_c = share * c / (c + g);
        (b_c, share - b_c)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaestroError {
    #[error("invalid run spec: {0}")]
    InvalidRunSpec(String),
    #[error("budget {budget} cannot pay for one minibatch of {minibatch}")]
    BudgetExhausted { budget: u64, minibatch: usize },
    #[error("estimates were taken on different seed schedules")]
    ScheduleMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    CStep(#[from] CStepError),
}

/// Guarded improvement: `candidate.mean >= base.mean + xi`.
pub fn accept(candidate: &UtilityEstimate, base: &UtilityEstimate, xi: f64) -> Result<bool, MaestroError> {
    if !candidate.same_schedule(base) {
        return Err(MaestroError::ScheduleMismatch);
    }
    Ok(candidate.mean >= base.mean + xi)
}

/// Everything a run needs besides its spec.
pub struct Problem<'a> {
    pub graph: &'a GraphSpec,
    pub space: &'a ConfigSpace,
    pub assignment: &'a ConfigAssignment,
    pub ctx: &'a EditContext,
    pub metric: &'a dyn Metric,
    pub tasks: &'a [TaskInstance],
}

/// A seeded sample of `minibatch` training tasks with one rollout seed each.
pub fn run_schedule(tasks: &[TaskInstance], minibatch: usize, master: u64) -> Schedule {
    let mut picked: Vec<TaskInstance> = tasks.to_vec();
    picked.shuffle(&mut seed::rng(seed::derive(master, "schedule", 0)));
    picked.truncate(minibatch);
    let seeds = (0..picked.len())
        .map(|i| seed::derive(master, "rollout", i as u64))
        .collect();
    Schedule::new(picked, seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub iteration: u32,
    pub graph: GraphSpec,
    pub space: ConfigSpace,
    pub assignment: ConfigAssignment,
    pub estimate: UtilityEstimate,
    pub omega: f64,
}

/// One row of the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: u32,
    pub step: String,
    pub proposed: usize,
    pub scored: usize,
    pub rollouts: u64,
    pub budget: u64,
    pub incumbent: f64,
    pub accepted: bool,
    pub edit: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub rollouts: u64,
    pub budget: u64,
    pub cost: f64,
    pub final_score: f64,
    pub iterations: u32,
    pub accepted_edits: Vec<String>,
}

/// Full step reports of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub t: u32,
    pub budget_c: u64,
    pub budget_g: u64,
    pub cstep: CStepReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gstep: Option<GStepReport>,
    pub accepted: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub state: OptimizerState,
    pub initial_estimate: UtilityEstimate,
    pub history: HistoryLog,
    pub report: RunReport,
    pub iterations: Vec<IterationTrace>,
    pub ledger: LedgerSnapshot,
    pub schedule: Schedule,
}

fn est_json(e: &UtilityEstimate) -> serde_json::Value {
    json!({ "mean": e.mean, "mean_cost": e.mean_cost })
}

/// Runs the loop until the iteration limit or the budget runs out.
pub fn run(spec: &RunSpec, problem: &Problem<'_>) -> Result<RunOutcome, MaestroError> {
    spec.check()?;
    problem.space.check()?;
    problem.space.validate(problem.assignment)?;
    let limits = spec.limits();
    let graph = problem.graph.clone().canonical();
    let validated = validate_graph(&graph, &problem.ctx.registry, problem.space)?;
    let omega = structure_complexity(&graph, limits.weights);
    if omega > limits.tau {
        return Err(MaestroError::InvalidRunSpec(format!(
            "initial graph has complexity {omega} above tau {}",
            limits.tau
        )));
    }
    if problem.tasks.len() < spec.minibatch {
        return Err(MaestroError::InvalidRunSpec(format!(
            "{} training tasks for a minibatch of {}",
            problem.tasks.len(),
            spec.minibatch
        )));
    }
    if spec.budget < spec.minibatch as u64 {
        return Err(MaestroError::BudgetExhausted {
            budget: spec.budget,
            minibatch: spec.minibatch,
        });
    }

    let ledger = BudgetLedger::new(spec.budget);
    let history = HistoryLog::new();
    let evaluator = Evaluator::new(problem.metric, &ledger, &history);
    let schedule = run_schedule(problem.tasks, spec.minibatch, spec.seed);
    let mut cache = EvalCache::new();

    history.push(json!({
        "kind": "run",
        "budget": spec.budget,
        "iterations": spec.iterations,
        "mode": spec.mode,
        "strategy": spec.strategy,
        "seed": spec.seed,
        "tasks": schedule.tasks.iter().map(|t| t.id.clone()).collect::<Vec<_>>(),
        "seeds": schedule.seeds,
    }));
    let (baseline, records) = evaluator.estimate(
        &validated,
        problem.assignment,
        &schedule,
        &RowTag::new(0, "baseline", "t0/initial"),
    )?;
    cache.insert(
        &graph,
        problem.assignment,
        CachedEstimate {
            estimate: baseline.clone(),
            feedback: collect(&records),
        },
    );
    history.push(json!({
        "kind": "incumbent",
        "iter": 0,
        "j": baseline.mean,
        "mean_cost": baseline.mean_cost,
        "omega": omega,
        "graph": graph.key(),
    }));

    let mut state = OptimizerState {
        iteration: 0,
        graph: graph.clone(),
        space: problem.space.clone(),
        assignment: problem.assignment.clone(),
        estimate: baseline.clone(),
        omega,
    };
    let mut report = RunReport {
        budget: spec.budget,
        ..RunReport::default()
    };
    report.rows.push(ReportRow {
        t: 0,
        step: "baseline".into(),
        proposed: 1,
        scored: 1,
        rollouts: ledger.used(),
        budget: spec.minibatch as u64,
        incumbent: baseline.mean,
        accepted: true,
        edit: String::new(),
    });
    let mut traces = Vec::new();
    let mb = spec.minibatch as u64;
    log::info!("baseline j={:.3} on {} tasks", baseline.mean, schedule.len());

    for t in 1..=spec.iterations {
        let remaining = ledger.remaining();
        if remaining < mb {
            break;
        }
        let share = remaining / u64::from(spec.iterations - t + 1);
        let (b_c, b_g) = spec.split_budget(share);
        let used_before = ledger.used();

        // C-step on the incumbent graph
        let validated = validate_graph(&state.graph, &problem.ctx.registry, &state.space)?;
        let feedback = cached_feedback(&cache, &state.graph, &state.assignment);
        let proposals = distill(&feedback, &state.space, &state.graph, problem.ctx);
        let c_input = CStepInput {
            graph: &validated,
            space: &state.space,
            incumbent: &state.assignment,
            strategy: spec.strategy,
            budget: b_c,
            seed: seed::derive(spec.seed, "c-step", u64::from(t)),
            proposals: &proposals,
            schedule: &schedule,
            kappa: spec.kappa,
            params: spec.cstep,
            iter: t,
        };
        let c_out = run_c_step(&c_input, &evaluator, &mut cache)?;
        let c_rollouts = c_out.report.rollouts;
        let carried = c_out.best.assignment.clone();
        let base = c_out.best.estimate.clone().expect("best candidate is evaluated");
        history.push(json!({
            "kind": "decision",
            "iter": t,
            "step": "c-step",
            "candidate": c_out.best.id,
            "changed": state.assignment.diff(&carried),
            "estimate": est_json(&base),
            "infeasible_step": c_out.report.infeasible_step,
        }));
        report.rows.push(ReportRow {
            t,
            step: "c-step".into(),
            proposed: c_out.report.candidates.len(),
            scored: c_out.report.candidates.iter().filter(|c| c.estimate.is_some()).count(),
            rollouts: c_rollouts,
            budget: b_c,
            incumbent: base.mean,
            accepted: carried != state.assignment,
            edit: state.assignment.diff(&carried).join(", "),
        });
        state.assignment = carried;
        state.estimate = base.clone();

        // G-step with the new configuration carried
        let mut g_report = None;
        let mut accepted = false;
        if spec.mode == Mode::Joint {
            let feedback = cached_feedback(&cache, &state.graph, &state.assignment);
            let proposals = distill(&feedback, &state.space, &state.graph, problem.ctx);
            let g_input = GStepInput {
                graph: &state.graph,
                space: &state.space,
                assignment: &state.assignment,
                incumbent: &base,
                ctx: problem.ctx,
                radius: spec.radius,
                budget: b_g,
                limits,
                seed: seed::derive(spec.seed, "g-step", u64::from(t)),
                proposals: &proposals,
                schedule: &schedule,
                iter: t,
            };
            let g_out = run_g_step(&g_input, &evaluator, &mut cache)?;
            let xi = spec.xi.at(t);
            let cand = &g_out.best;
            let cand_est = cand.estimate.clone().expect("best candidate is evaluated");
            if !g_out.best_is_incumbent {
                accepted = cand.feasible() && accept(&cand_est, &base, xi)?;
                history.push(json!({
                    "kind": "decision",
                    "iter": t,
                    "step": "accept",
                    "candidate": cand.id,
                    "edits": cand.edits.describe(),
                    "sequence": cand.edits,
                    "omega": cand.omega,
                    "candidate_estimate": est_json(&cand_est),
                    "base_estimate": est_json(&base),
                    "xi": xi,
                    "accepted": accepted,
                }));
            }
            report.rows.push(ReportRow {
                t,
                step: "g-step".into(),
                proposed: g_out.report.candidates.len(),
                scored: g_out.report.candidates.iter().filter(|c| c.scored).count(),
                rollouts: g_out.report.rollouts,
                budget: b_g,
                incumbent: if accepted { cand_est.mean } else { base.mean },
                accepted,
                edit: if g_out.best_is_incumbent {
                    String::new()
                } else {
                    cand.edits.describe()
                },
            });
            if accepted {
                report.accepted_edits.push(cand.edits.describe());
                state.graph = cand.graph.clone();
                state.space = cand.space.clone();
                state.assignment = cand.assignment.clone();
                state.estimate = cand_est;
                state.omega = cand.omega;
            }
            g_report = Some(g_out.report);
        }
        state.iteration = t;
        let used = ledger.used() - used_before;
        log::info!(
            "iteration {t}: j={:.3} rollouts={used} (B_t={b_c}, B'_t={b_g}) accepted={accepted}",
            state.estimate.mean
        );
        history.push(json!({
            "kind": "incumbent",
            "iter": t,
            "j": state.estimate.mean,
            "mean_cost": state.estimate.mean_cost,
            "omega": state.omega,
            "graph": state.graph.key(),
            "budget_c": b_c,
            "budget_g": b_g,
            "rollouts": used,
        }));
        traces.push(IterationTrace {
            t,
            budget_c: b_c,
            budget_g: b_g,
            cstep: c_out.report,
            gstep: g_report,
            accepted,
        });
    }

    report.rollouts = ledger.used();
    report.cost = ledger.cost_sum();
    report.final_score = state.estimate.mean;
    report.iterations = state.iteration;
    Ok(RunOutcome {
        state,
        initial_estimate: baseline,
        history,
        report,
        iterations: traces,
        ledger: ledger.snapshot(),
        schedule,
    })
}

fn cached_feedback(cache: &EvalCache, graph: &GraphSpec, assignment: &ConfigAssignment) -> Vec<FeedbackItem> {
    cache
        .get(graph, assignment)
        .map(|c| c.feedback.clone())
        .unwrap_or_default()
}

/// The edit sequence recorded for each accepted G-step, in order.
pub fn accepted_sequences(history: &HistoryLog) -> Vec<EditSequence> {
    history
        .rows()
        .into_iter()
        .filter(|r| r["kind"] == "decision" && r["step"] == "accept" && r["accepted"] == true)
        .filter_map(|r| serde_json::from_value(r["sequence"].clone()).ok())
        .collect()
}
