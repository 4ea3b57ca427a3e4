//! Structure search: edit neighborhoods inside a trust region, warm-started
//! configurations, and budgeted scoring of candidate graphs.

mod ops;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigAssignment, ConfigSpace};
use crate::eval::{
    structure_complexity, CachedEstimate, EvalCache, EvalError, Evaluator, RowTag, Schedule, UtilityEstimate,
};
use crate::feedback::{collect, operator_priority, EditProposal};
use crate::graph::GraphSpec;
use crate::seed;

pub use ops::{
    apply_edits, concrete_edits, AppliedEdit, ConfigDelta, Edit, EditContext, EditError, EditSequence, EditedGraph,
    GraphOperator, NodeTemplate, OperatorKind, TemplateEdge, TemplateExit, TemplateNode, TemplateParam, ANY,
};

/// One member of a neighborhood: the edits and their result.
#[derive(Clone, Debug)]
pub struct Neighbor {
    pub edits: EditSequence,
    pub edited: EditedGraph,
}

#[derive(Clone, Debug, Default)]
pub struct Neighborhood {
    pub members: Vec<Neighbor>,
    /// Concrete edits that failed to apply or validate.
    pub inapplicable: usize,
}

/// Every graph reachable from `graph` by catalog edits of total distance at
/// most `radius`, deduplicated by canonical serialization. Shorter
/// sequences come first; within a level, operator id then target ids.
pub fn neighborhood(graph: &GraphSpec, space: &ConfigSpace, ctx: &EditContext, radius: u32) -> Neighborhood {
    let mut out = Neighborhood::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(graph.key());
    let mut catalog: Vec<_> = ctx.catalog.iter().collect();
    catalog.sort_by(|a, b| a.id.cmp(&b.id));

    // frontier of (sequence, graph, space) reached so far
    let mut frontier: Vec<(EditSequence, GraphSpec, ConfigSpace)> =
        vec![(EditSequence::default(), graph.clone(), space.clone())];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (seq, g, s) in &frontier {
            for op in &catalog {
                if seq.distance() + op.cost > radius {
                    continue;
                }
                for edit in concrete_edits(op, g) {
                    let single = EditSequence {
                        edits: vec![edit.clone()],
                    };
                    let Ok(edited) = apply_edits(g, s, &single, ctx) else {
                        out.inapplicable += 1;
                        continue;
                    };
                    if !seen.insert(edited.graph.key()) {
                        continue;
                    }
                    let full = seq.then(edit);
                    // recompute the delta relative to the incumbent
                    let edited = apply_edits(graph, space, &full, ctx).expect("sequence replays");
                    next.push((full.clone(), edited.graph.clone(), edited.space.clone()));
                    out.members.push(Neighbor { edits: full, edited });
                }
            }
        }
        frontier = next;
    }
    out
}

/// Inherits the incumbent assignment into `new_space`, then spends one
/// mutation wave of size min(3, #new params) on the newly created params.
pub fn warm_start(new_space: &ConfigSpace, incumbent: &ConfigAssignment, seed: u64) -> ConfigAssignment {
    let inherited = new_space.inherit(incumbent);
    let fresh: Vec<&str> = new_space.names().filter(|n| incumbent.get(n).is_none()).collect();
    if fresh.is_empty() {
        return inherited;
    }
    new_space.mutate_among(&inherited, &fresh, fresh.len().min(3), seed)
}

/// Seed used for a candidate's warm start; independent of enumeration
/// order so oracles can reproduce it.
pub fn warm_start_seed(step_seed: u64, graph: &GraphSpec) -> u64 {
    seed::derive(step_seed, &graph.key(), 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateGraph {
    pub id: String,
    pub graph: GraphSpec,
    pub space: ConfigSpace,
    pub edits: EditSequence,
    pub assignment: ConfigAssignment,
    pub omega: f64,
    pub estimate: Option<UtilityEstimate>,
    pub structure_feasible: bool,
    pub cost_feasible: bool,
    pub priority: f64,
}

impl CandidateGraph {
    pub fn feasible(&self) -> bool {
        self.structure_feasible && self.cost_feasible && self.estimate.is_some()
    }

    pub fn mean(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.mean)
    }
}

/// Scoring knobs shared by the G-step and its oracles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    pub tau: f64,
    pub kappa: Option<f64>,
    pub weights: (f64, f64),
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            tau: f64::INFINITY,
            kappa: None,
            weights: (1.0, 1.0),
        }
    }
}

/// Result of [`score_candidate`], with the number of rollouts it charged.
#[derive(Clone, Debug)]
pub struct Scored {
    pub candidate: CandidateGraph,
    pub charged: u64,
    pub feedback: Vec<crate::feedback::FeedbackItem>,
}

/// Checks Ω ≤ τ first (infeasible candidates are never run), then estimates
/// on the common schedule unless the estimate is cached. `budget` bounds
/// the rollouts this call may charge; when it is too small the candidate
/// comes back unscored.
#[allow(clippy::too_many_arguments)]
pub fn score_candidate(
    mut candidate: CandidateGraph,
    schedule: &Schedule,
    evaluator: &Evaluator<'_>,
    limits: &Limits,
    budget: u64,
    cache: &mut EvalCache,
    tag: &RowTag,
    ctx: &EditContext,
) -> Result<Scored, EvalError> {
    candidate.omega = structure_complexity(&candidate.graph, limits.weights);
    candidate.structure_feasible = candidate.omega <= limits.tau;
    if !candidate.structure_feasible {
        return Ok(Scored {
            candidate,
            charged: 0,
            feedback: Vec::new(),
        });
    }
    let (estimate, feedback, charged) = match cache.get(&candidate.graph, &candidate.assignment) {
        Some(hit) => (hit.estimate.clone(), hit.feedback.clone(), 0),
        None => {
            let mb = schedule.len() as u64;
            if budget < mb || evaluator.ledger.remaining() < mb {
                return Ok(Scored {
                    candidate,
                    charged: 0,
                    feedback: Vec::new(),
                });
            }
            let validated = crate::graph::validate_graph(&candidate.graph, &ctx.registry, &candidate.space)?;
            let (est, records) = evaluator.estimate(&validated, &candidate.assignment, schedule, tag)?;
            let feedback = collect(&records);
            cache.insert(
                &candidate.graph,
                &candidate.assignment,
                CachedEstimate {
                    estimate: est.clone(),
                    feedback: feedback.clone(),
                },
            );
            (est, feedback, mb)
        }
    };
    candidate.cost_feasible = limits.kappa.is_none_or(|k| estimate.mean_cost <= k);
    candidate.estimate = Some(estimate);
    Ok(Scored {
        candidate,
        charged,
        feedback,
    })
}

pub struct GStepInput<'a> {
    pub graph: &'a GraphSpec,
    pub space: &'a ConfigSpace,
    pub assignment: &'a ConfigAssignment,
    /// Ĵ of the incumbent pair on `schedule`.
    pub incumbent: &'a UtilityEstimate,
    pub ctx: &'a EditContext,
    pub radius: u32,
    pub budget: u64,
    pub limits: Limits,
    pub seed: u64,
    pub proposals: &'a [EditProposal],
    pub schedule: &'a Schedule,
    pub iter: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GStepRow {
    pub id: String,
    pub edits: String,
    pub distance: u32,
    pub omega: f64,
    pub priority: f64,
    pub scored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cost: Option<f64>,
    pub structure_feasible: bool,
    pub cost_feasible: bool,
    /// The structured edit list, for replay.
    pub sequence: EditSequence,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GStepReport {
    pub radius: u32,
    pub rollouts: u64,
    pub inapplicable: usize,
    pub candidates: Vec<GStepRow>,
}

#[derive(Clone, Debug)]
pub struct GStepOutcome {
    /// The incumbent itself when no feasible candidate beat it.
    pub best: CandidateGraph,
    pub best_is_incumbent: bool,
    pub report: GStepReport,
}

/// Enumerates the neighborhood, orders it by feedback priority (then
/// enumeration order), scores candidates until the budget is spent and
/// returns the best feasible one, or the incumbent.
pub fn run_g_step(
    input: &GStepInput<'_>,
    evaluator: &Evaluator<'_>,
    cache: &mut EvalCache,
) -> Result<GStepOutcome, EvalError> {
    let incumbent = CandidateGraph {
        id: format!("t{}/g/incumbent", input.iter),
        graph: input.graph.clone().canonical(),
        space: input.space.clone(),
        edits: EditSequence::default(),
        assignment: input.assignment.clone(),
        omega: structure_complexity(input.graph, input.limits.weights),
        estimate: Some(input.incumbent.clone()),
        structure_feasible: true,
        cost_feasible: true,
        priority: 0.0,
    };
    let mut report = GStepReport {
        radius: input.radius,
        ..GStepReport::default()
    };
    let hood = neighborhood(input.graph, input.space, input.ctx, input.radius);
    report.inapplicable = hood.inapplicable;
    log::debug!(
        "g-step {}: {} neighbors, {} inapplicable edits",
        input.iter,
        hood.members.len(),
        hood.inapplicable
    );
    let mut ordered: Vec<(f64, Neighbor)> = hood
        .members
        .into_iter()
        .map(|n| {
            let p = n
                .edits
                .edits
                .iter()
                .map(|e| operator_priority(input.proposals, &e.operator))
                .fold(0.0, f64::max);
            (p, n)
        })
        .collect();
    ordered.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut budget = input.budget;
    let mut best = incumbent.clone();
    let mut best_is_incumbent = true;
    for (k, (priority, n)) in ordered.into_iter().enumerate() {
        let id = format!("t{}/g/{k}", input.iter);
        let assignment = warm_start(
            &n.edited.space,
            input.assignment,
            warm_start_seed(input.seed, &n.edited.graph),
        );
        let candidate = CandidateGraph {
            id: id.clone(),
            graph: n.edited.graph,
            space: n.edited.space,
            edits: n.edits,
            assignment,
            omega: 0.0,
            estimate: None,
            structure_feasible: false,
            cost_feasible: false,
            priority,
        };
        let tag = RowTag::new(input.iter, "g-step", id.clone());
        let scored = score_candidate(
            candidate,
            input.schedule,
            evaluator,
            &input.limits,
            budget,
            cache,
            &tag,
            input.ctx,
        )?;
        budget -= scored.charged;
        report.rollouts += scored.charged;
        let c = scored.candidate;
        report.candidates.push(GStepRow {
            id,
            edits: c.edits.describe(),
            distance: c.edits.distance(),
            omega: c.omega,
            priority,
            scored: c.estimate.is_some(),
            mean: c.mean(),
            mean_cost: c.estimate.as_ref().map(|e| e.mean_cost),
            structure_feasible: c.structure_feasible,
            cost_feasible: c.cost_feasible,
            sequence: c.edits.clone(),
        });
        if c.feasible() && c.mean() > best.mean() {
            best = c;
            best_is_incumbent = false;
        }
    }
    Ok(GStepOutcome {
        best,
        best_is_incumbent,
        report,
    })
}
