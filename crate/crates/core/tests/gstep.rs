mod common;

use maestro_core::bench::{
    make_constraintsat, oracle_edit_distance, oracle_enumerate_graphs, score_design, task_schedule, TaskBundle,
};
use maestro_core::budget::BudgetLedger;
use maestro_core::config::{ConfigAssignment, ConfigSpace, Owner, ParamKind, ParamSpec, ParamValue};
use maestro_core::eval::{structure_complexity, EvalCache, Evaluator, HistoryLog, RowTag, Schedule};
use maestro_core::feedback::{collect, distill, ProposalTarget};
use maestro_core::graph::{Comparator, EdgeSpec, GatePredicate, GraphSpec, NodeSpec};
use maestro_core::gstep::{
    apply_edits, neighborhood, run_g_step, score_candidate, warm_start, AppliedEdit, CandidateGraph, Edit, EditContext,
    EditSequence, GStepInput, GStepOutcome, GraphOperator, Limits, NodeTemplate, OperatorKind, TemplateParam, ANY,
};
use maestro_core::value::{Value, ValueSchema};

use common::*;

fn chain(ids: &[&str]) -> GraphSpec {
    let mut g = GraphSpec::new("chain");
    g.inputs.insert(ids[0].into());
    g.outputs.insert(ids[ids.len() - 1].into());
    for id in ids {
        g.nodes.push(num_node(id, "identity"));
    }
    for w in ids.windows(2) {
        g.edges.push(EdgeSpec::new(format!("{}->{}", w[0], w[1]), w[0], w[1]));
    }
    g.canonical()
}

fn insert_everywhere(template: &str) -> GraphOperator {
    GraphOperator::new(
        &format!("insert-{template}"),
        OperatorKind::InsertNode {
            template: template.into(),
            edge: ANY.into(),
        },
    )
}

fn numeric_ctx(catalog: Vec<GraphOperator>) -> EditContext {
    let library = vec![
        NodeTemplate::single("mid", "inc", "step", ValueSchema::Number),
        NodeTemplate::single("tuned", "affine", "step", ValueSchema::Number).with_param(TemplateParam::new(
            "a",
            ParamKind::FloatRange {
                lo: 0.0,
                hi: 2.0,
                grid: Some(5),
            },
        )),
    ];
    EditContext::new(mock_registry(), library, catalog)
}

fn sequence(operator: &str, edit: Edit) -> EditSequence {
    EditSequence {
        edits: vec![AppliedEdit {
            operator: operator.into(),
            cost: 1,
            edit,
        }],
    }
}

#[test]
fn empty_catalog_has_no_neighbors() {
    let hood = neighborhood(
        &chain(&["a", "b"]),
        &ConfigSpace::default(),
        &numeric_ctx(Vec::new()),
        3,
    );
    assert!(hood.members.is_empty());
    assert_eq!(hood.inapplicable, 0);
}

#[test]
fn chain_of_two_has_one_insertion() {
    let ctx = numeric_ctx(vec![insert_everywhere("mid")]);
    let hood = neighborhood(&chain(&["a", "b"]), &ConfigSpace::default(), &ctx, 1);
    assert_eq!(hood.members.len(), 1);
    let n = &hood.members[0];
    assert_eq!(n.edits.describe(), "insert mid on a->b");
    let mut expected = chain(&["a", "mid", "b"]);
    let mid = expected.nodes.iter_mut().find(|n| n.id == "mid").unwrap();
    mid.function = "inc".into();
    mid.role = "step".into();
    mid.default_input = ValueSchema::Number.zero_value();
    assert_eq!(n.edited.graph.key(), expected.key());
}

#[test]
fn extractor_between_the_hops_is_in_the_neighborhood() {
    let library = vec![NodeTemplate::single(
        "extract_entities",
        "identity",
        "extract",
        ValueSchema::Text,
    )];
    let catalog = vec![GraphOperator::new(
        "insert-extractor",
        OperatorKind::InsertNode {
            template: "extract_entities".into(),
            edge: "summarize1->create_query_hop2".into(),
        },
    )];
    let ctx = EditContext::new(mock_registry(), library, catalog);
    let g = two_hop_retrieval();
    let hood = neighborhood(&g, &ConfigSpace::default(), &ctx, 1);

    // the suggested topology, built by hand
    let mut expected = g.clone();
    let mut node = NodeSpec::new("extract_entities", "identity", ValueSchema::Text).with_role("extract");
    node.default_input = ValueSchema::Text.zero_value();
    expected.nodes.push(node);
    expected.edges.retain(|e| e.id != "summarize1->create_query_hop2");
    expected.edges.push(EdgeSpec::new(
        "summarize1->extract_entities",
        "summarize1",
        "extract_entities",
    ));
    expected.edges.push(EdgeSpec::new(
        "extract_entities->create_query_hop2",
        "extract_entities",
        "create_query_hop2",
    ));

    assert_eq!(hood.members.len(), 1);
    assert_eq!(hood.members[0].edited.graph.key(), expected.key());
}

#[test]
fn empty_edit_sequence_changes_nothing() {
    let g = chain(&["a", "b", "c"]);
    let ctx = numeric_ctx(Vec::new());
    let e = apply_edits(&g, &ConfigSpace::default(), &EditSequence::default(), &ctx).unwrap();
    assert_eq!(e.graph, g);
    assert!(e.delta.is_empty());
}

#[test]
fn insert_then_remove_is_the_identity() {
    let g = chain(&["a", "b", "c"]);
    let ctx = numeric_ctx(Vec::new());
    let space = ConfigSpace::default();
    let edits = EditSequence {
        edits: vec![
            AppliedEdit {
                operator: "insert".into(),
                cost: 1,
                edit: Edit::InsertNode {
                    template: "tuned".into(),
                    edge: "b->c".into(),
                },
            },
            AppliedEdit {
                operator: "remove".into(),
                cost: 1,
                edit: Edit::RemoveNode { node: "tuned".into() },
            },
        ],
    };
    let e = apply_edits(&g, &space, &edits, &ctx).unwrap();
    assert_eq!(e.graph.key(), g.key());
    assert!(e.delta.is_empty());
    assert!(e.space.is_empty());

    let inserted = apply_edits(
        &g,
        &space,
        &EditSequence {
            edits: edits.edits[..1].to_vec(),
        },
        &ctx,
    )
    .unwrap();
    assert_eq!(inserted.delta.added.len(), 1);
    assert_eq!(inserted.delta.added[0].name, "tuned.a");
    assert_eq!(inserted.delta.added[0].owner, Owner::Node("tuned".into()));
}

#[test]
fn add_gate_only_adds_the_gate() {
    let g = chain(&["a", "b", "c"]);
    let gate = GatePredicate::new("", Comparator::GreaterThan, Value::Number(0.0));
    let ctx = numeric_ctx(Vec::new());
    let e = apply_edits(
        &g,
        &ConfigSpace::default(),
        &sequence(
            "gate",
            Edit::AddGate {
                edge: "a->b".into(),
                gate: gate.clone(),
            },
        ),
        &ctx,
    )
    .unwrap();
    let mut expected = g.clone();
    expected.edges.iter_mut().find(|e| e.id == "a->b").unwrap().gate = Some(gate);
    assert_eq!(e.graph, expected);
    assert!(e.delta.is_empty());
}

#[test]
fn inapplicable_edit_reports_its_index() {
    let g = chain(&["a", "b"]);
    let ctx = numeric_ctx(Vec::new());
    let err = apply_edits(
        &g,
        &ConfigSpace::default(),
        &sequence("x", Edit::RemoveEdge { edge: "nope".into() }),
        &ctx,
    )
    .unwrap_err();
    assert!(matches!(
        err,
        maestro_core::gstep::EditError::InapplicableEdit { index: 0, .. }
    ));
}

fn text_param(name: &str, owner: &str) -> ParamSpec {
    ParamSpec::new(
        name,
        Owner::Node(owner.into()),
        ParamKind::Text {
            vocabulary: vec!["x".into(), "y".into(), "z".into()],
            max_tokens: 2,
            initial: Vec::new(),
        },
    )
}

#[test]
fn warm_start_examples() {
    let old = ConfigSpace::new(vec![float_param("p", "n", 0.0, 1.0), float_param("q", "n", 0.0, 1.0)]).unwrap();
    let mut incumbent = ConfigAssignment::default();
    incumbent.set("p", ParamValue::Float(0.3));
    incumbent.set("q", ParamValue::Float(0.7));

    // no new params: plain inheritance
    assert_eq!(warm_start(&old, &incumbent, 5), old.inherit(&incumbent));

    // one new text param: only it may move off its default
    let grown = old.with_delta(&[text_param("v.prompt", "v")], &[]);
    let fresh_default = grown.default_assignment();
    for seed in 0..50 {
        let a = warm_start(&grown, &incumbent, seed);
        assert_eq!(a.get("p"), incumbent.get("p"));
        assert_eq!(a.get("q"), incumbent.get("q"));
        assert!(a
            .diff(&fresh_default)
            .iter()
            .all(|n| n == "v.prompt" || n == "p" || n == "q"));
        grown.validate(&a).unwrap();
    }
    assert!((0..50).any(|s| warm_start(&grown, &incumbent, s).get("v.prompt") != fresh_default.get("v.prompt")));

    // removed params disappear
    let shrunk = old.with_delta(&[], &["q".to_string()]);
    let a = warm_start(&shrunk, &incumbent, 1);
    assert_eq!(a.get("q"), None);
    assert_eq!(a.get("p"), incumbent.get("p"));
}

struct Harness {
    ledger: BudgetLedger,
    history: HistoryLog,
}

impl Harness {
    fn new(cap: u64) -> Self {
        Self {
            ledger: BudgetLedger::new(cap),
            history: HistoryLog::new(),
        }
    }
}

fn cs_schedule(b: &TaskBundle) -> Schedule {
    task_schedule(&b.train[..5], 42)
}

#[test]
fn structurally_infeasible_candidate_costs_nothing() {
    let b = make_constraintsat(4, 0);
    let ctx = b.edit_context();
    let h = Harness::new(100);
    let ev = Evaluator::new(b.metric.as_ref(), &h.ledger, &h.history);
    let tau = structure_complexity(&b.graph, (1.0, 1.0));
    let e = apply_edits(
        &b.graph,
        &b.space,
        &sequence(
            "add-validator",
            Edit::InsertNode {
                template: "validate".into(),
                edge: "rewrite->answer".into(),
            },
        ),
        &ctx,
    )
    .unwrap();
    let candidate = CandidateGraph {
        id: "c".into(),
        graph: e.graph,
        space: e.space.clone(),
        edits: EditSequence::default(),
        assignment: e.space.inherit(&b.assignment),
        omega: 0.0,
        estimate: None,
        structure_feasible: false,
        cost_feasible: false,
        priority: 0.0,
    };
    let limits = Limits {
        tau,
        ..Limits::default()
    };
    let scored = score_candidate(
        candidate,
        &cs_schedule(&b),
        &ev,
        &limits,
        100,
        &mut EvalCache::new(),
        &RowTag::new(0, "g-step", "c"),
        &ctx,
    )
    .unwrap();
    assert!(!scored.candidate.structure_feasible);
    assert!(scored.candidate.omega > tau);
    assert_eq!((scored.charged, h.ledger.used()), (0, 0));
}

#[allow(clippy::too_many_arguments)]
fn g_step(
    b: &TaskBundle,
    ctx: &EditContext,
    h: &Harness,
    budget: u64,
    radius: u32,
    limits: Limits,
    proposals: &[maestro_core::feedback::EditProposal],
) -> GStepOutcome {
    let schedule = cs_schedule(b);
    let incumbent = score_design(
        &b.registry,
        b.metric.as_ref(),
        &b.graph,
        &b.space,
        &b.assignment,
        &schedule,
    )
    .unwrap();
    let ev = Evaluator::new(b.metric.as_ref(), &h.ledger, &h.history);
    let input = GStepInput {
        graph: &b.graph,
        space: &b.space,
        assignment: &b.assignment,
        incumbent: &incumbent,
        ctx,
        radius,
        budget,
        limits,
        seed: 7,
        proposals,
        schedule: &schedule,
        iter: 1,
    };
    run_g_step(&input, &ev, &mut EvalCache::new()).unwrap()
}

#[test]
fn zero_budget_returns_the_incumbent() {
    let b = make_constraintsat(4, 0);
    let ctx = b.edit_context();
    let h = Harness::new(1000);
    let out = g_step(&b, &ctx, &h, 0, 1, Limits::default(), &[]);
    assert!(out.best_is_incumbent);
    assert_eq!(out.best.graph.key(), b.graph.key());
    assert_eq!((out.report.rollouts, h.ledger.used()), (0, 0));
    assert!(out.report.candidates.iter().all(|c| !c.scored));
}

#[test]
fn violated_constraints_put_the_validator_first() {
    let b = make_constraintsat(4, 0);
    let ctx = b.edit_context();
    let schedule = cs_schedule(&b);
    let v = maestro_core::graph::validate_graph(&b.graph, &b.registry, &b.space).unwrap();
    let (_, records) = maestro_core::eval::estimate_utility(
        &v,
        &b.assignment,
        &schedule.tasks,
        &schedule.seeds,
        b.metric.as_ref(),
        &BudgetLedger::unbounded(),
    )
    .unwrap();
    let proposals = distill(&collect(&records), &b.space, &b.graph, &ctx);
    assert_eq!(proposals[0].target, ProposalTarget::Operator("add-validator".into()));

    let h = Harness::new(1000);
    // room for exactly one candidate
    let out = g_step(&b, &ctx, &h, 5, 1, Limits::default(), &proposals);
    let first = &out.report.candidates[0];
    assert!(first.edits.starts_with("insert validate on "), "{}", first.edits);
    assert!(first.scored);
    assert_eq!(out.report.candidates.iter().filter(|c| c.scored).count(), 1);
    assert_eq!(out.report.rollouts, 5);
}

#[test]
fn all_infeasible_neighborhood_returns_the_incumbent() {
    let mut b = make_constraintsat(4, 0);
    b.catalog.retain(|op| op.id != "remove-node");
    let ctx = b.edit_context();
    let h = Harness::new(1000);
    let tau = structure_complexity(&b.graph, (1.0, 1.0));
    let out = g_step(
        &b,
        &ctx,
        &h,
        500,
        1,
        Limits {
            tau,
            ..Limits::default()
        },
        &[],
    );
    assert!(!out.report.candidates.is_empty());
    assert!(out.report.candidates.iter().all(|c| !c.structure_feasible && !c.scored));
    assert!(out.best_is_incumbent);
    assert_eq!(h.ledger.used(), 0);
}

#[test]
fn full_budget_attains_the_graph_oracle() {
    for seed in 0..3 {
        let b = make_constraintsat(4, seed);
        let ctx = b.edit_context();
        let h = Harness::new(10_000);
        let limits = Limits {
            tau: 14.0,
            kappa: Some(10.0),
            weights: (1.0, 1.0),
        };
        let out = g_step(&b, &ctx, &h, 10_000, 1, limits, &[]);
        let oracle = oracle_enumerate_graphs(
            &ctx,
            b.metric.as_ref(),
            &b.graph,
            &b.space,
            &b.assignment,
            1,
            &cs_schedule(&b),
            7,
            &limits,
        )
        .unwrap();
        assert_eq!(out.best.mean(), Some(oracle.best_mean));
        assert!(oracle.argmax.contains(&out.best.graph.key()));
        assert!(out.report.rollouts <= 10_000);
        assert_eq!(out.report.rollouts, h.ledger.used());
    }
}

#[test]
fn budget_caps_rollouts() {
    let b = make_constraintsat(4, 1);
    let ctx = b.edit_context();
    for budget in [0, 4, 5, 9, 12, 23] {
        let h = Harness::new(1000);
        let out = g_step(&b, &ctx, &h, budget, 2, Limits::default(), &[]);
        assert!(out.report.rollouts <= budget);
        assert_eq!(out.report.rollouts % 5, 0);
        assert_eq!(out.report.rollouts, h.ledger.used());
    }
}

#[test]
fn neighbors_stay_inside_the_trust_region() {
    let ctx = numeric_ctx(vec![
        insert_everywhere("mid"),
        GraphOperator::new("remove", OperatorKind::RemoveNode { node: ANY.into() }),
        GraphOperator::new(
            "retype",
            OperatorKind::ChangeNodeType {
                node: ANY.into(),
                function: "inc".into(),
            },
        ),
    ]);
    let g = chain(&["a", "b", "c"]);
    let space = ConfigSpace::default();
    for radius in 1..=2 {
        let hood = neighborhood(&g, &space, &ctx, radius);
        assert!(!hood.members.is_empty());
        let mut keys = std::collections::BTreeSet::new();
        for n in &hood.members {
            assert!(n.edits.distance() <= radius);
            assert!(n.edited.graph.nodes.len() <= 6);
            assert!(keys.insert(n.edited.graph.key()), "duplicate neighbor");
            let d = oracle_edit_distance(&g, &space, &n.edited.graph, &ctx, radius).expect("reachable");
            assert!(d <= n.edits.distance());
            assert!(d >= 1);
        }
        // the oracle finds nothing inside the radius that the enumeration missed
        for n in &neighborhood(&g, &space, &ctx, radius + 1).members {
            if !keys.contains(&n.edited.graph.key()) {
                let d = oracle_edit_distance(&g, &space, &n.edited.graph, &ctx, radius + 1).unwrap();
                assert!(d > radius || n.edited.graph.key() == g.key());
            }
        }
    }
}
