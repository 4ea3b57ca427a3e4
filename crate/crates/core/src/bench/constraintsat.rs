//! Instruction following with verifiable constraints. A draft node
//! complies with a constraint when its prompt carries the constraint's
//! control token (or by a fixed per-task chance); a rewrite node repairs
//! constraints named in its prompt or listed as issues by a validator.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::config::{ConfigSpace, Owner, ParamKind, ParamSpec};
use crate::eval::{Metric, TaskInstance};
use crate::feedback::{FeedbackItem, FeedbackKind};
use crate::graph::{
    Comparator, EdgeSpec, GatePredicate, GraphSpec, MergeSpec, MergeStrategy, NodeOutput, NodeParams, NodeRegistry,
    NodeSpec,
};
use crate::gstep::{
    GraphOperator, NodeTemplate, OperatorKind, TemplateEdge, TemplateExit, TemplateNode, TemplateParam, ANY,
};
use crate::seed;
use crate::value::{Value, ValueSchema};

use super::TaskBundle;

/// Constraint kinds in the order bundles enable them, with the control
/// token that makes a prompt address each.
pub const KINDS: [(&str, &str); 6] = [
    ("require", "include"),
    ("forbid", "avoid"),
    ("lowercase", "lowercase"),
    ("period", "punctuate"),
    ("min-words", "expand"),
    ("max-words", "brief"),
];

pub const MIN_WORDS: usize = 8;
pub const MAX_WORDS: usize = 6;
/// Percent chance that a draft complies with a constraint unprompted.
pub const BASE_COMPLIANCE: u64 = 25;
pub const PREMIUM_COST: f64 = 40.0;

const TOPICS: [&str; 12] = [
    "weather", "garden", "budget", "travel", "recipe", "meeting", "exercise", "library", "concert", "harbor",
    "invoice", "museum",
];
const REQUIRED: [&str; 8] = [
    "river", "lantern", "copper", "meadow", "violet", "anchor", "pepper", "summit",
];
const FORBIDDEN: [&str; 8] = [
    "very",
    "really",
    "just",
    "maybe",
    "basically",
    "literally",
    "actually",
    "quite",
];
const FILLER: &str = "more";

/// Prompt vocabulary: every control token plus two inert words.
pub fn vocabulary() -> Vec<String> {
    KINDS
        .iter()
        .map(|(_, t)| t.to_string())
        .chain(["polite".to_string(), "formal".to_string()])
        .collect()
}

pub fn doc_schema() -> ValueSchema {
    ValueSchema::record([
        ("request", ValueSchema::Text),
        ("constraints", ValueSchema::Text),
        ("text", ValueSchema::optional(ValueSchema::Text)),
        ("issues", ValueSchema::optional(ValueSchema::Text)),
    ])
}

fn kind_of(constraint: &str) -> &str {
    constraint.split(':').next().unwrap_or(constraint)
}

/// Control token addressing a constraint.
pub fn control_token(constraint: &str) -> Option<&'static str> {
    let k = kind_of(constraint);
    KINDS.iter().find(|(name, _)| *name == k).map(|(_, t)| *t)
}

fn arg(constraint: &str) -> &str {
    constraint.split_once(':').map_or("", |(_, a)| a)
}

fn words(text: &str) -> Vec<&str> {
    text.trim_end_matches('.').split_whitespace().collect()
}

/// Whether `text` satisfies one constraint.
pub fn check(constraint: &str, text: &str) -> bool {
    let w = words(text);
    match kind_of(constraint) {
        "require" => w.contains(&arg(constraint)),
        "forbid" => !w.iter().any(|x| x.eq_ignore_ascii_case(arg(constraint))),
        "lowercase" => text == text.to_lowercase(),
        "period" => text.ends_with('.'),
        "min-words" => w.len() >= arg(constraint).parse().unwrap_or(MIN_WORDS),
        "max-words" => w.len() <= arg(constraint).parse().unwrap_or(MAX_WORDS),
        _ => false,
    }
}

/// Whether an unprompted draft complies with `constraint` on `request`.
pub fn base_compliance(request: &str, constraint: &str) -> bool {
    seed::derive(0, &format!("{request}|{constraint}"), 0) % 100 < BASE_COMPLIANCE
}

fn field_text<'a>(doc: &'a Value, name: &str) -> &'a str {
    doc.field(name).and_then(Value::as_text).unwrap_or("")
}

fn with_fields(doc: &Value, updates: &[(&str, Value)]) -> Value {
    let mut fields = doc.as_record().cloned().unwrap_or_default();
    for (k, v) in updates {
        fields.insert(k.to_string(), v.clone());
    }
    Value::Record(fields)
}

fn find<'a>(constraints: &'a [&'a str], kind: &str) -> Option<&'a str> {
    constraints.iter().copied().find(|c| kind_of(c) == kind)
}

/// The draft a prompt produces for a request.
pub fn draft_text(request: &str, constraints: &[&str], prompt: &[String]) -> String {
    let complies =
        |c: &str| control_token(c).is_some_and(|t| prompt.iter().any(|p| p == t)) || base_compliance(request, c);
    let mut out: Vec<String> = Vec::new();
    let lower = find(constraints, "lowercase").is_some_and(complies);
    out.push(if lower { "please" } else { "Please" }.to_string());
    if let Some(c) = find(constraints, "forbid") {
        if !complies(c) {
            out.push(arg(c).to_string());
        }
    }
    out.push(request.to_string());
    if let Some(c) = find(constraints, "require") {
        if complies(c) {
            out.push(arg(c).to_string());
        }
    }
    if let Some(c) = find(constraints, "min-words") {
        if complies(c) {
            while out.len() < MIN_WORDS {
                out.push(FILLER.to_string());
            }
        }
    }
    if let Some(c) = find(constraints, "max-words") {
        if !complies(c) {
            while out.len() <= MAX_WORDS {
                out.push(FILLER.to_string());
            }
        }
    }
    let mut text = out.join(" ");
    if find(constraints, "period").is_some_and(complies) {
        text.push('.');
    }
    text
}

/// Repairs the constraints in `fix`, leaving the rest of the text alone.
pub fn repair(text: &str, constraints: &[&str], fix: &dyn Fn(&str) -> bool) -> String {
    let mut period = text.ends_with('.');
    let mut w: Vec<String> = words(text).into_iter().map(str::to_string).collect();
    let required = find(constraints, "require").map(arg);
    for kind in ["forbid", "require", "lowercase", "min-words", "max-words", "period"] {
        let Some(c) = find(constraints, kind) else { continue };
        if !fix(c) {
            continue;
        }
        match kind {
            "forbid" => w.retain(|x| !x.eq_ignore_ascii_case(arg(c))),
            "require" => {
                if !w.iter().any(|x| x == arg(c)) {
                    w.push(arg(c).to_string());
                }
            }
            "lowercase" => w.iter_mut().for_each(|x| *x = x.to_lowercase()),
            "min-words" => {
                let k = arg(c).parse().unwrap_or(MIN_WORDS);
                while w.len() < k {
                    w.push(FILLER.to_string());
                }
            }
            "max-words" => {
                let k = arg(c).parse().unwrap_or(MAX_WORDS);
                while w.len() > k {
                    match w.iter().rposition(|x| Some(x.as_str()) != required) {
                        Some(i) => {
                            w.remove(i);
                        }
                        None => break,
                    }
                }
            }
            _ => period = true,
        }
    }
    let mut out = w.join(" ");
    if period {
        out.push('.');
    }
    out
}

fn constraint_list(doc: &Value) -> Vec<&str> {
    field_text(doc, "constraints").split_whitespace().collect()
}

fn draft_fn(input: &Value, params: &NodeParams, _seed: u64) -> Result<NodeOutput, crate::graph::NodeFault> {
    let text = draft_text(
        field_text(input, "request"),
        &constraint_list(input),
        params.tokens("prompt"),
    );
    Ok(NodeOutput::new(with_fields(input, &[("text", Value::Text(text))]), 1.0))
}

fn rewrite_fn(input: &Value, params: &NodeParams, _seed: u64) -> Result<NodeOutput, crate::graph::NodeFault> {
    let Some(text) = input.field("text").and_then(Value::as_text) else {
        return Ok(NodeOutput::new(input.clone(), 0.0));
    };
    let prompt = params.tokens("prompt");
    let issues: Vec<&str> = field_text(input, "issues").split_whitespace().collect();
    let fix = |c: &str| issues.contains(&c) || control_token(c).is_some_and(|t| prompt.iter().any(|p| p == t));
    let fixed = repair(text, &constraint_list(input), &fix);
    Ok(NodeOutput::new(
        with_fields(input, &[("text", Value::Text(fixed)), ("issues", Value::Absent)]),
        1.0,
    ))
}

fn validate_fn(input: &Value, _params: &NodeParams, _seed: u64) -> Result<NodeOutput, crate::graph::NodeFault> {
    let text = field_text(input, "text");
    let violated: Vec<&str> = constraint_list(input).into_iter().filter(|c| !check(c, text)).collect();
    Ok(NodeOutput::new(
        with_fields(input, &[("issues", Value::Text(violated.join(" ")))]),
        1.0,
    ))
}

fn premium_fn(input: &Value, _params: &NodeParams, _seed: u64) -> Result<NodeOutput, crate::graph::NodeFault> {
    let text = field_text(input, "text");
    let fixed = repair(text, &constraint_list(input), &|_| true);
    Ok(NodeOutput::new(
        with_fields(input, &[("text", Value::Text(fixed))]),
        PREMIUM_COST,
    ))
}

fn finalize_fn(input: &Value, _params: &NodeParams, _seed: u64) -> Result<NodeOutput, crate::graph::NodeFault> {
    Ok(NodeOutput::new(Value::text(field_text(input, "text")), 0.0))
}

pub fn registry() -> NodeRegistry {
    let mut r = NodeRegistry::with_identity();
    r.register("cs.draft", draft_fn);
    r.register("cs.rewrite", rewrite_fn);
    r.register("cs.validate", validate_fn);
    r.register("cs.premium", premium_fn);
    r.register("cs.finalize", finalize_fn);
    r
}

/// 100 · satisfied / total on the answer; an empty answer scores 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstraintMetric;

impl ConstraintMetric {
    fn parts<'a>(outputs: &'a BTreeMap<String, Value>, meta: &'a Value) -> (&'a str, Vec<&'a str>) {
        let text = outputs.get("answer").and_then(Value::as_text).unwrap_or("");
        let constraints = meta
            .field("constraints")
            .and_then(Value::as_text)
            .unwrap_or("")
            .split_whitespace()
            .collect();
        (text, constraints)
    }
}

impl Metric for ConstraintMetric {
    fn id(&self) -> &str {
        "constraint-satisfaction"
    }

    fn score(&self, outputs: &BTreeMap<String, Value>, meta: &Value) -> f64 {
        let (text, constraints) = Self::parts(outputs, meta);
        if text.is_empty() || constraints.is_empty() {
            return 0.0;
        }
        let sat = constraints.iter().filter(|c| check(c, text)).count();
        100.0 * sat as f64 / constraints.len() as f64
    }

    fn feedback(&self, outputs: &BTreeMap<String, Value>, meta: &Value, task: &str) -> Vec<FeedbackItem> {
        let (text, constraints) = Self::parts(outputs, meta);
        constraints
            .into_iter()
            .filter(|c| !check(c, text))
            .map(|c| FeedbackItem {
                kind: FeedbackKind::ViolatedConstraint,
                subject: None,
                payload: c.to_string(),
                task: task.to_string(),
                token: control_token(c).map(str::to_string),
            })
            .collect()
    }
}

fn prompt_kind() -> ParamKind {
    ParamKind::Text {
        vocabulary: vocabulary(),
        max_tokens: 1,
        initial: Vec::new(),
    }
}

/// request → draft → rewrite → answer.
pub fn initial_graph() -> GraphSpec {
    let doc = doc_schema();
    let mut g = GraphSpec::new("constraintsat");
    g.inputs.insert("request".into());
    g.outputs.insert("answer".into());
    g.nodes = vec![
        NodeSpec::new("request", "identity", doc.clone()).with_role("input"),
        NodeSpec::new("draft", "cs.draft", doc.clone())
            .with_role("draft")
            .with_param("prompt", "draft.prompt"),
        NodeSpec::new("rewrite", "cs.rewrite", doc.clone())
            .with_role("rewrite")
            .with_param("prompt", "rewrite.prompt"),
        {
            let mut n = NodeSpec::new("answer", "cs.finalize", doc)
                .with_role("output")
                .with_merge(MergeStrategy::RecordUnion);
            n.output_schema = ValueSchema::Text;
            n
        },
    ];
    g.edges = vec![
        EdgeSpec::new("request->draft", "request", "draft"),
        EdgeSpec::new("draft->rewrite", "draft", "rewrite"),
        EdgeSpec::new("rewrite->answer", "rewrite", "answer"),
    ];
    g.canonical()
}

pub fn initial_space() -> ConfigSpace {
    ConfigSpace::new(vec![
        ParamSpec::new("draft.prompt", Owner::Node("draft".into()), prompt_kind()),
        ParamSpec::new("rewrite.prompt", Owner::Node("rewrite".into()), prompt_kind()),
    ])
    .expect("static space is valid")
}

/// The validator motif: a checker whose issues gate a rewrite pass.
pub fn validator_template() -> NodeTemplate {
    let doc = doc_schema();
    let node = |name: &str, function: &str, role: &str, param: TemplateParam| TemplateNode {
        name: name.into(),
        function: function.into(),
        input_schema: doc.clone(),
        output_schema: doc.clone(),
        default_input: None,
        role: role.into(),
        merge: MergeSpec::default(),
        params: vec![param],
    };
    let clean = GatePredicate::new("issues", Comparator::Equals, Value::text(""));
    let dirty = GatePredicate::new("issues", Comparator::NotEquals, Value::text(""));
    NodeTemplate {
        name: "validate".into(),
        role: "validate".into(),
        keywords: vec!["constraints".into()],
        nodes: vec![
            node(
                "validate",
                "cs.validate",
                "validate",
                TemplateParam::new("prompt", prompt_kind()),
            ),
            node(
                "fix",
                "cs.rewrite",
                "rewrite",
                TemplateParam::shared("prompt", "rewrite.prompt"),
            ),
        ],
        edges: vec![TemplateEdge {
            source: "validate".into(),
            target: "fix".into(),
            gate: Some(dirty),
        }],
        exits: vec![
            TemplateExit {
                node: "validate".into(),
                gate: Some(clean),
            },
            TemplateExit {
                node: "fix".into(),
                gate: None,
            },
        ],
    }
}

/// A single node that repairs everything at a prohibitive cost.
pub fn premium_template() -> NodeTemplate {
    NodeTemplate::single("premium", "cs.premium", "premium", doc_schema())
}

pub fn catalog() -> Vec<GraphOperator> {
    vec![
        GraphOperator::new(
            "add-validator",
            OperatorKind::InsertNode {
                template: "validate".into(),
                edge: ANY.into(),
            },
        ),
        GraphOperator::new(
            "add-premium",
            OperatorKind::InsertNode {
                template: "premium".into(),
                edge: ANY.into(),
            },
        ),
        GraphOperator::new("remove-node", OperatorKind::RemoveNode { node: ANY.into() }),
    ]
}

/// `count` tasks with the first `kinds` constraint kinds; when both word
/// bounds are enabled each task gets one of them.
pub fn generate_tasks(kinds: usize, count: usize, seed: u64, prefix: &str) -> Vec<TaskInstance> {
    let mut rng = seed::rng(seed);
    (0..count)
        .map(|i| {
            let topic = *TOPICS.choose(&mut rng).expect("nonempty");
            let required = *REQUIRED.choose(&mut rng).expect("nonempty");
            let forbidden = *FORBIDDEN.choose(&mut rng).expect("nonempty");
            let pick_min = rng.random_bool(0.5);
            let mut constraints = Vec::new();
            for (k, _) in KINDS.iter().take(kinds) {
                let c = match *k {
                    "require" => format!("require:{required}"),
                    "forbid" => format!("forbid:{forbidden}"),
                    "min-words" if kinds == 6 && !pick_min => continue,
                    "max-words" if kinds == 6 && pick_min => continue,
                    "min-words" => format!("min-words:{MIN_WORDS}"),
                    "max-words" => format!("max-words:{MAX_WORDS}"),
                    other => other.to_string(),
                };
                constraints.push(c);
            }
            let constraints = constraints.join(" ");
            let doc = Value::record([
                ("request", Value::text(topic)),
                ("constraints", Value::text(constraints.clone())),
                ("text", Value::Absent),
                ("issues", Value::Absent),
            ]);
            TaskInstance {
                id: format!("{prefix}{i:03}"),
                inputs: BTreeMap::from([("request".to_string(), doc)]),
                meta: Value::record([("constraints", Value::text(constraints))]),
            }
        })
        .collect()
}

pub const TRAIN_TASKS: usize = 30;
pub const TEST_TASKS: usize = 30;

/// The ConstraintSat bundle. `kinds` is clamped to `[2, 6]`.
pub fn make_constraintsat(kinds: usize, seed: u64) -> TaskBundle {
    let kinds = kinds.clamp(2, 6);
    let space = initial_space();
    TaskBundle {
        name: "constraintsat".into(),
        graph: initial_graph(),
        assignment: space.default_assignment(),
        space,
        library: vec![validator_template(), premium_template()],
        catalog: catalog(),
        registry: registry(),
        metric: Arc::new(ConstraintMetric),
        train: generate_tasks(kinds, TRAIN_TASKS, seed::derive(seed, "train", 0), "train-"),
        test: generate_tasks(kinds, TEST_TASKS, seed::derive(seed, "test", 0), "test-"),
    }
}

/// A prompt holding every control token, for a space with enough room.
pub fn full_prompt() -> Vec<String> {
    KINDS.iter().map(|(_, t)| t.to_string()).collect()
}
