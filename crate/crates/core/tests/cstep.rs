mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use maestro_core::budget::BudgetLedger;
use maestro_core::config::{ConfigAssignment, ConfigSpace, Owner, ParamKind, ParamSpec, ParamValue};
use maestro_core::cstep::{
    crowding_distances, evolve_population, pareto_insert, run_c_step, smbo_propose, smbo_update, ArchiveMember,
    BucketStats, CStepError, CStepInput, CStepOutcome, CStepParams, ParetoArchive, Strategy, SurrogateModel,
    PRIOR_MEAN,
};
use maestro_core::eval::{EvalCache, Evaluator, HistoryLog, Metric, Schedule, TaskInstance};
use maestro_core::feedback::{EditProposal, ProposalTarget};
use maestro_core::graph::{validate_graph, GraphSpec, NodeOutput, NodeParams, ValidatedGraph};
use maestro_core::seed;
use maestro_core::value::Value;
use rand::Rng;

use common::*;

fn choice(name: &str, values: &[&str]) -> ParamSpec {
    ParamSpec::new(
        name,
        Owner::Node("n".into()),
        ParamKind::Choice {
            values: values.iter().map(|v| v.to_string()).collect(),
        },
    )
}

fn int(name: &str) -> ParamSpec {
    ParamSpec::new(name, Owner::Node("n".into()), ParamKind::IntRange { lo: 0, hi: 100 })
}

fn assign(pairs: &[(&str, &str)]) -> ConfigAssignment {
    let mut a = ConfigAssignment::default();
    for (k, v) in pairs {
        a.set(*k, ParamValue::Choice(v.to_string()));
    }
    a
}

/// Scores the single output directly.
struct Passthrough;

impl Metric for Passthrough {
    fn id(&self) -> &str {
        "passthrough"
    }

    fn score(&self, outputs: &BTreeMap<String, Value>, _meta: &Value) -> f64 {
        outputs.values().next().and_then(Value::as_number).unwrap_or(0.0)
    }
}

/// A one-node design whose output is a table lookup on its choice params.
struct Lookup {
    graph: ValidatedGraph,
    space: ConfigSpace,
    table: Arc<BTreeMap<String, f64>>,
}

impl Lookup {
    fn new(params: &[(&str, &[&str])], table: BTreeMap<String, f64>) -> Self {
        let space = ConfigSpace::new(params.iter().map(|(n, v)| choice(n, v)).collect()).unwrap();
        let table = Arc::new(table);
        let roles: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let mut reg = mock_registry();
        let t = table.clone();
        reg.register("lookup", move |_: &Value, p: &NodeParams, _| {
            let key: Vec<&str> = roles.iter().map(|r| p.choice_or(r, "?")).collect();
            Ok(NodeOutput::new(Value::Number(t[&key.join(",")]), 1.0))
        });
        let mut node = num_node("n", "lookup");
        for (n, _) in params {
            node = node.with_param(n, n);
        }
        let mut g = GraphSpec::new("lookup");
        g.inputs.insert("n".into());
        g.outputs.insert("n".into());
        g.nodes.push(node);
        let graph = validate_graph(&g, &reg, &space).unwrap();
        Self { graph, space, table }
    }

    /// Every grid point scored by a seeded table.
    fn random(seed_: u64) -> Self {
        let dims: [(&str, &[&str]); 3] = [
            ("a", &["a0", "a1", "a2"]),
            ("b", &["b0", "b1", "b2"]),
            ("c", &["c0", "c1", "c2", "c3"]),
        ];
        let mut rng = seed::rng(seed_);
        let mut table = BTreeMap::new();
        for a in dims[0].1 {
            for b in dims[1].1 {
                for c in dims[2].1 {
                    table.insert(format!("{a},{b},{c}"), rng.random_range(0..=100) as f64);
                }
            }
        }
        Self::new(&dims, table)
    }

    fn best(&self) -> f64 {
        self.table.values().copied().fold(f64::MIN, f64::max)
    }

    fn score_of(&self, a: &ConfigAssignment) -> f64 {
        let key: Vec<String> = self
            .space
            .names()
            .map(|n| a.get(n).unwrap().as_choice().unwrap().to_string())
            .collect();
        self.table[&key.join(",")]
    }
}

fn schedule(n: usize) -> Schedule {
    let tasks = (0..n)
        .map(|i| TaskInstance {
            id: format!("t{i}"),
            inputs: input("n", Value::Number(0.0)),
            meta: Value::Absent,
        })
        .collect();
    Schedule::new(tasks, (0..n as u64).collect())
}

struct Run {
    outcome: CStepOutcome,
    used: u64,
    history: String,
}

fn run(l: &Lookup, strategy: Strategy, budget: u64, seed_: u64, proposals: &[EditProposal]) -> Run {
    let ledger = BudgetLedger::new(10_000);
    let history = HistoryLog::new();
    let ev = Evaluator::new(&Passthrough, &ledger, &history);
    let sched = schedule(5);
    let incumbent = l.space.default_assignment();
    let input = CStepInput {
        graph: &l.graph,
        space: &l.space,
        incumbent: &incumbent,
        strategy,
        budget,
        seed: seed_,
        proposals,
        schedule: &sched,
        kappa: None,
        params: CStepParams::default(),
        iter: 0,
    };
    let outcome = run_c_step(&input, &ev, &mut EvalCache::new()).unwrap();
    Run {
        outcome,
        used: ledger.used(),
        history: history.to_text(),
    }
}

const STRATEGIES: [Strategy; 3] = [Strategy::Smbo, Strategy::Evolutionary, Strategy::Random];

#[test]
fn budget_below_a_second_minibatch_returns_the_incumbent() {
    let l = Lookup::random(1);
    let r = run(&l, Strategy::Smbo, 9, 0, &[]);
    assert_eq!(r.outcome.best.assignment, l.space.default_assignment());
    assert_eq!(r.outcome.best.edit, "incumbent");
    assert_eq!(
        (r.outcome.report.rollouts, r.used, r.outcome.report.candidates.len()),
        (5, 5, 1)
    );
}

#[test]
fn budget_below_one_minibatch_is_rejected() {
    let l = Lookup::random(1);
    let ledger = BudgetLedger::unbounded();
    let history = HistoryLog::new();
    let sched = schedule(5);
    let incumbent = l.space.default_assignment();
    let input = CStepInput {
        graph: &l.graph,
        space: &l.space,
        incumbent: &incumbent,
        strategy: Strategy::Random,
        budget: 4,
        seed: 0,
        proposals: &[],
        schedule: &sched,
        kappa: None,
        params: CStepParams::default(),
        iter: 0,
    };
    let err = run_c_step(
        &input,
        &Evaluator::new(&Passthrough, &ledger, &history),
        &mut EvalCache::new(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        CStepError::BudgetBelowMinibatch {
            budget: 4,
            minibatch: 5
        }
    ));
    assert_eq!(ledger.used(), 0);
}

#[test]
fn four_value_sweep_finds_the_enumeration_optimum() {
    let values = ["w", "x", "y", "z"];
    let scores = [30.0, 90.0, 10.0, 60.0];
    let table = values.iter().zip(scores).map(|(v, s)| (v.to_string(), s)).collect();
    let l = Lookup::new(&[("p", &values)], table);
    let oracle = values
        .iter()
        .zip(scores)
        .fold(("", f64::MIN), |acc, (v, s)| if s > acc.1 { (v, s) } else { acc });
    for strategy in STRATEGIES {
        let r = run(&l, strategy, 20, 3, &[]);
        assert_eq!(r.outcome.best.assignment, assign(&[("p", oracle.0)]), "{strategy:?}");
        assert_eq!(r.outcome.best.mean(), Some(oracle.1));
        assert_eq!(r.outcome.report.candidates.len(), 4);
        assert_eq!(r.used, 20);
    }
}

#[test]
fn random_strategy_replays_identically() {
    let l = Lookup::random(2);
    let a = run(&l, Strategy::Random, 60, 9, &[]);
    let b = run(&l, Strategy::Random, 60, 9, &[]);
    assert_eq!(a.outcome.report, b.outcome.report);
    assert_eq!(a.outcome.best, b.outcome.best);
    assert_eq!(a.history, b.history);
}

#[test]
fn rollouts_stay_within_budget_in_whole_minibatches() {
    let l = Lookup::random(3);
    for strategy in STRATEGIES {
        for budget in [5, 12, 37, 64, 180, 500] {
            let r = run(&l, strategy, budget, budget, &[]);
            let rep = &r.outcome.report;
            assert!(rep.rollouts <= budget);
            assert_eq!(rep.rollouts, r.used);
            assert_eq!(rep.rollouts, rep.candidates.len() as u64 * 5);
            for c in &rep.candidates {
                assert_eq!(c.estimate.as_ref().unwrap().seeds, vec![0, 1, 2, 3, 4]);
            }
        }
    }
}

#[test]
fn selection_never_drops_below_the_incumbent() {
    for s in 0..10 {
        let l = Lookup::random(100 + s);
        let incumbent_score = l.score_of(&l.space.default_assignment());
        for strategy in STRATEGIES {
            let r = run(&l, strategy, 30, s, &[]);
            let best = r.outcome.best.mean().unwrap();
            assert!(best >= incumbent_score);
            assert_eq!(best, l.score_of(&r.outcome.best.assignment));
            let max_seen = r
                .outcome
                .report
                .candidates
                .iter()
                .filter_map(|c| c.mean())
                .fold(f64::MIN, f64::max);
            assert_eq!(best, max_seen);
        }
    }
}

#[test]
fn exhaustive_budget_reaches_the_enumeration_maximum() {
    for s in 0..5 {
        let l = Lookup::random(200 + s);
        let size = l.space.grid_size() as u64;
        assert_eq!(size, 36);
        for strategy in [Strategy::Smbo, Strategy::Evolutionary] {
            let r = run(&l, strategy, size * 5, s, &[]);
            assert_eq!(r.outcome.best.mean(), Some(l.best()), "{strategy:?} seed {s}");
        }
    }
}

#[test]
fn feedback_proposals_are_tried_first() {
    let l = Lookup::random(4);
    let proposal = EditProposal {
        target: ProposalTarget::Param("c".into()),
        hint: "c3".into(),
        priority: 3.0,
    };
    let r = run(&l, Strategy::Random, 10, 0, &[proposal]);
    let c = &r.outcome.report.candidates[1];
    assert_eq!(c.edit, "feedback c c3");
    assert_eq!(c.assignment.diff(&l.space.default_assignment()), vec!["c".to_string()]);
    assert_eq!(c.assignment.get("c"), Some(&ParamValue::Choice("c3".into())));
}

#[test]
fn cost_bound_marks_every_candidate_infeasible() {
    let l = Lookup::random(5);
    let ledger = BudgetLedger::unbounded();
    let history = HistoryLog::new();
    let sched = schedule(5);
    let incumbent = l.space.default_assignment();
    let input = CStepInput {
        graph: &l.graph,
        space: &l.space,
        incumbent: &incumbent,
        strategy: Strategy::Smbo,
        budget: 40,
        seed: 1,
        proposals: &[],
        schedule: &sched,
        kappa: Some(0.5),
        params: CStepParams::default(),
        iter: 0,
    };
    let out = run_c_step(
        &input,
        &Evaluator::new(&Passthrough, &ledger, &history),
        &mut EvalCache::new(),
    )
    .unwrap();
    assert!(out.report.infeasible_step);
    assert!(!out.best.feasible);
    assert_eq!(out.best.assignment, incumbent);
}

#[test]
fn empty_surrogate_picks_uniformly() {
    let space = ConfigSpace::new(vec![choice("p", &["a", "b", "c", "d"])]).unwrap();
    let s = SurrogateModel::new();
    assert_eq!(s.ucb("p", "a", 10.0), PRIOR_MEAN);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let n = 8000;
    for seed_ in 0..n {
        let a = smbo_propose(&s, &space, seed_, 10.0);
        assert_eq!(a, smbo_propose(&s, &space, seed_, 10.0));
        *counts
            .entry(a.get("p").unwrap().as_choice().unwrap().to_string())
            .or_default() += 1;
    }
    assert_eq!(counts.len(), 4);
    for c in counts.values() {
        assert!((*c as f64 / n as f64 - 0.25).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn observed_best_value_wins_without_exploration() {
    let space = ConfigSpace::new(vec![choice("p", &["a", "b", "c"])]).unwrap();
    let mut s = SurrogateModel::new();
    smbo_update(&mut s, &space, &assign(&[("p", "b")]), 100.0, 1.0);
    for seed_ in 0..50 {
        assert_eq!(smbo_propose(&s, &space, seed_, 0.0), assign(&[("p", "b")]));
    }
}

fn two_bucket_surrogate(mean_a: f64, count_a: u64, mean_b: f64, count_b: u64) -> SurrogateModel {
    let mut per = BTreeMap::new();
    per.insert(
        "a".to_string(),
        BucketStats {
            count: count_a,
            mean: mean_a,
            mean_cost: 1.0,
        },
    );
    per.insert(
        "b".to_string(),
        BucketStats {
            count: count_b,
            mean: mean_b,
            mean_cost: 1.0,
        },
    );
    SurrogateModel {
        buckets: BTreeMap::from([("p".to_string(), per)]),
        observations: count_a + count_b,
    }
}

#[test]
fn exploration_bonus_follows_hand_ucb() {
    let space = ConfigSpace::new(vec![choice("p", &["a", "b"])]).unwrap();
    let w = 20.0;
    let ln = (1.0f64 + 101.0).ln();
    // 80 seen once against 60 seen 100 times
    let ucb_a = 80.0 + w * (ln / 2.0).sqrt();
    let ucb_b = 60.0 + w * (ln / 101.0).sqrt();
    let s = two_bucket_surrogate(80.0, 1, 60.0, 100);
    assert!((s.ucb("p", "a", w) - ucb_a).abs() < 1e-12);
    assert!((s.ucb("p", "b", w) - ucb_b).abs() < 1e-12);
    let expect = if ucb_a > ucb_b { "a" } else { "b" };
    assert_eq!(smbo_propose(&s, &space, 0, w), assign(&[("p", expect)]));

    // the bonus overturns the means: 60 seen once against 80 seen 100 times
    let ucb_a = 60.0 + w * (ln / 2.0).sqrt();
    let ucb_b = 80.0 + w * (ln / 101.0).sqrt();
    assert!(ucb_a > ucb_b);
    let s = two_bucket_surrogate(60.0, 1, 80.0, 100);
    assert_eq!(smbo_propose(&s, &space, 0, w), assign(&[("p", "a")]));
    assert_eq!(smbo_propose(&s, &space, 0, 0.0), assign(&[("p", "b")]));
}

#[test]
fn update_examples() {
    let space = ConfigSpace::new(vec![choice("p", &["a", "b"])]).unwrap();
    let mut s = SurrogateModel::new();
    smbo_update(&mut s, &space, &assign(&[("p", "a")]), 73.0, 2.0);
    assert_eq!(
        s.stats("p", "a"),
        BucketStats {
            count: 1,
            mean: 73.0,
            mean_cost: 2.0
        }
    );
    assert_eq!(s.observations, 1);

    let mut s = SurrogateModel::new();
    smbo_update(&mut s, &space, &assign(&[("p", "a")]), 0.0, 1.0);
    smbo_update(&mut s, &space, &assign(&[("p", "a")]), 100.0, 1.0);
    assert_eq!(s.stats("p", "a").mean, 50.0);
    assert_eq!(s.stats("p", "b").count, 0);
}

#[test]
fn online_means_match_batch_means() {
    let space = ConfigSpace::new(vec![
        choice("p", &["a", "b", "c"]),
        ParamSpec::new(
            "f",
            Owner::Node("n".into()),
            ParamKind::FloatRange {
                lo: 0.0,
                hi: 1.0,
                grid: None,
            },
        ),
    ])
    .unwrap();
    let mut s = SurrogateModel::new();
    let mut batch: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut rng = seed::rng(77);
    for i in 0..1000 {
        let a = space.sample(i);
        let u: f64 = rng.random_range(0.0..100.0);
        smbo_update(&mut s, &space, &a, u, 1.0);
        let p = a.get("p").unwrap().as_choice().unwrap().to_string();
        let f = a.get("f").unwrap().as_f64().unwrap();
        let decile = ((f * 10.0).floor() as usize).min(9);
        batch.entry(("p".into(), p)).or_default().push(u);
        batch.entry(("f".into(), format!("d{decile}"))).or_default().push(u);
    }
    assert_eq!(s.observations, 1000);
    for ((param, bucket), xs) in &batch {
        let st = s.stats(param, bucket);
        assert_eq!(st.count as usize, xs.len());
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((st.mean - mean).abs() < 1e-9, "{param}/{bucket}");
    }
}

fn member(id: &str, utility: f64, cost: f64) -> ArchiveMember {
    ArchiveMember {
        id: id.into(),
        assignment: ConfigAssignment::default(),
        utility,
        cost,
    }
}

fn single_parent(parent: ConfigAssignment) -> ParetoArchive {
    ParetoArchive {
        capacity: 4,
        members: vec![ArchiveMember {
            assignment: parent,
            ..member("p", 50.0, 1.0)
        }],
    }
}

#[test]
fn evolve_examples() {
    let space = ConfigSpace::new(vec![int("x"), int("y"), int("z")]).unwrap();
    let archive = single_parent(space.default_assignment());
    assert!(evolve_population(&archive, &space, &[], 1, 0).unwrap().is_empty());
    assert_eq!(
        evolve_population(&ParetoArchive::new(2), &space, &[], 1, 3),
        Err(CStepError::EmptyArchive)
    );

    let parent = ConfigAssignment(space.names().map(|n| (n.to_string(), ParamValue::Int(50))).collect());
    let archive = single_parent(parent.clone());
    let children = evolve_population(&archive, &space, &[proposal_y()], 5, 20).unwrap();
    assert_eq!(
        children,
        evolve_population(&archive, &space, &[proposal_y()], 5, 20).unwrap()
    );
    for c in children {
        assert_eq!(c.diff(&parent), vec!["y".to_string()]);
    }
}

fn proposal_y() -> EditProposal {
    EditProposal {
        target: ProposalTarget::Param("y".into()),
        hint: String::new(),
        priority: 1.0,
    }
}

#[test]
fn unguided_mutation_is_uniform_over_params() {
    let space = ConfigSpace::new(vec![int("w"), int("x"), int("y"), int("z")]).unwrap();
    // interior values so every integer step changes the value
    let parent = ConfigAssignment(space.names().map(|n| (n.to_string(), ParamValue::Int(50))).collect());
    let archive = single_parent(parent.clone());
    let n = 10_000u64;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in 0..n {
        let child = evolve_population(&archive, &space, &[], s, 1).unwrap().remove(0);
        let diff = child.diff(&parent);
        assert_eq!(diff.len(), 1);
        *counts.entry(diff[0].clone()).or_default() += 1;
    }
    assert_eq!(counts.len(), 4);
    for c in counts.values() {
        assert!((*c as f64 / n as f64 - 0.25).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn pareto_insert_examples() {
    let mut archive = ParetoArchive::new(3);
    assert!(pareto_insert(&mut archive, member("a", 60.0, 2.0)));
    assert_eq!(archive.len(), 1);

    let before = archive.clone();
    assert!(!pareto_insert(&mut archive, member("b", 50.0, 3.0)));
    assert_eq!(archive, before);

    // a dominating newcomer evicts the member it dominates
    assert!(pareto_insert(&mut archive, member("c", 70.0, 1.0)));
    assert_eq!(
        archive.members.iter().map(|m| m.id.as_str()).collect::<Vec<_>>(),
        vec!["c"]
    );
}

#[test]
fn over_capacity_evicts_the_least_crowded() {
    let pts = [
        member("lo", 40.0, 1.0),
        member("mid", 70.0, 2.0),
        member("hi", 80.0, 3.0),
    ];
    // boundaries are infinitely far; the middle one spans (80 - 40) / (80 - 40)
    let d = crowding_distances(&pts);
    assert_eq!(d, vec![f64::INFINITY, 1.0, f64::INFINITY]);

    let mut archive = ParetoArchive::new(2);
    for p in pts.clone() {
        pareto_insert(&mut archive, p);
    }
    let ids: Vec<&str> = archive.members.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, vec!["lo", "hi"]);
    assert!(archive.is_sound());
}

#[test]
fn crowding_ties_evict_the_costlier_member() {
    // four points: the two interior ones have equal crowding 0.5
    let pts = [
        member("a", 0.0, 1.0),
        member("b", 25.0, 2.0),
        member("c", 50.0, 3.0),
        member("d", 100.0, 4.0),
    ];
    let d = crowding_distances(&pts);
    assert_eq!(d[1], 50.0 / 100.0);
    assert_eq!(d[2], 75.0 / 100.0);

    let pts = [
        member("a", 0.0, 1.0),
        member("b", 40.0, 2.0),
        member("c", 60.0, 3.0),
        member("d", 100.0, 4.0),
    ];
    let d = crowding_distances(&pts);
    assert_eq!(d[1], d[2]);
    let mut archive = ParetoArchive::new(3);
    for p in pts.clone() {
        pareto_insert(&mut archive, p);
    }
    let ids: Vec<&str> = archive.members.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, vec!["a", "b", "d"]);
}

#[test]
fn random_inserts_keep_the_archive_sound() {
    let mut rng = seed::rng(9);
    for round in 0..50 {
        let mut archive = ParetoArchive::new(1 + round % 5);
        for i in 0..40 {
            let m = member(
                &format!("m{i}"),
                rng.random_range(0..=20) as f64 * 5.0,
                rng.random_range(1..=6) as f64,
            );
            pareto_insert(&mut archive, m);
            assert!(archive.is_sound());
            assert!(archive.len() <= archive.capacity);
        }
    }
}
