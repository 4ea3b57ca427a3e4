//! Structured non-numeric feedback and its distillation into ranked edit
//! proposals for both the configuration and the structure search.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigSpace, ParamKind};
use crate::eval::RolloutRecord;
use crate::graph::GraphSpec;
use crate::gstep::{EditContext, OperatorKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackKind {
    ViolatedConstraint,
    MissingInformation,
    NodeFailure,
    OffScopeOutput,
    FreeText,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub payload: String,
    pub task: String,
    /// Vocabulary token that would address the item, when the evaluator
    /// knows one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "name", rename_all = "kebab-case")]
pub enum ProposalTarget {
    Param(String),
    Operator(String),
}

impl ProposalTarget {
    pub fn name(&self) -> &str {
        match self {
            ProposalTarget::Param(n) | ProposalTarget::Operator(n) => n,
        }
    }
}

impl fmt::Display for ProposalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalTarget::Param(n) => write!(f, "param:{n}"),
            ProposalTarget::Operator(n) => write!(f, "operator:{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditProposal {
    pub target: ProposalTarget,
    /// Direction hint, e.g. the token to add to a prompt.
    pub hint: String,
    /// Number of supporting feedback items.
    pub priority: f64,
}

/// Evaluator items followed by synthesized node-failure items, ordered by
/// task id and then emission order.
pub fn collect(records: &[RolloutRecord]) -> Vec<FeedbackItem> {
    let mut indexed: Vec<(&str, usize, FeedbackItem)> = Vec::new();
    for r in records {
        let mut items = r.feedback.clone();
        if let Some(f) = &r.trace.failure {
            let already = items
                .iter()
                .any(|i| i.kind == FeedbackKind::NodeFailure && i.subject.as_deref() == Some(&f.node));
            if !already {
                items.push(FeedbackItem {
                    kind: FeedbackKind::NodeFailure,
                    subject: Some(f.node.clone()),
                    payload: f.detail.clone(),
                    task: r.task.clone(),
                    token: None,
                });
            }
        }
        for item in items {
            let n = indexed.len();
            indexed.push((r.task.as_str(), n, item));
        }
    }
    indexed.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
    indexed.into_iter().map(|(_, _, i)| i).collect()
}

fn is_text(kind: &ParamKind) -> bool {
    matches!(kind, ParamKind::Text { .. })
}

/// Applies the rule table:
///
/// | kind                 | proposals                                              |
/// |----------------------|--------------------------------------------------------|
/// | violated-constraint  | text params of `rewrite`/`validate` nodes (hint = token); insert-node operators with a `validate` template |
/// | node-failure         | remove-node / change-node-type operators on the subject |
/// | missing-information  | insert-node operators whose template role or keywords match the payload |
///
/// Priorities are the number of supporting items. Output is sorted by
/// priority descending, then target, then hint.
pub fn distill(items: &[FeedbackItem], space: &ConfigSpace, graph: &GraphSpec, ctx: &EditContext) -> Vec<EditProposal> {
    let mut counts: BTreeMap<(ProposalTarget, String), usize> = BTreeMap::new();
    let mut bump = |target: ProposalTarget, hint: &str| {
        *counts.entry((target, hint.to_string())).or_default() += 1;
    };
    for item in items {
        match item.kind {
            FeedbackKind::ViolatedConstraint => {
                let hint = item.token.as_deref().unwrap_or(item.payload.as_str());
                for p in space.params.iter().filter(|p| is_text(&p.kind)) {
                    let owner_role = p.owner.node_id().and_then(|id| graph.node(id)).map(|n| n.role.as_str());
                    if matches!(owner_role, Some("rewrite" | "validate")) {
                        bump(ProposalTarget::Param(p.name.clone()), hint);
                    }
                }
                for op in &ctx.catalog {
                    if let OperatorKind::InsertNode { template, .. } = &op.kind {
                        if ctx.library.get(template).is_some_and(|t| t.role == "validate") {
                            bump(ProposalTarget::Operator(op.id.clone()), "");
                        }
                    }
                }
            }
            FeedbackKind::NodeFailure => {
                let Some(subject) = &item.subject else { continue };
                for op in &ctx.catalog {
                    let node = match &op.kind {
                        OperatorKind::RemoveNode { node } => node,
                        OperatorKind::ChangeNodeType { node, .. } => node,
                        _ => continue,
                    };
                    if node == subject || node == crate::gstep::ANY {
                        bump(ProposalTarget::Operator(op.id.clone()), subject);
                    }
                }
            }
            FeedbackKind::MissingInformation => {
                let keyword = item.payload.trim();
                for op in &ctx.catalog {
                    if let OperatorKind::InsertNode { template, .. } = &op.kind {
                        let matches = ctx
                            .library
                            .get(template)
                            .is_some_and(|t| t.role == keyword || t.keywords.iter().any(|k| k == keyword));
                        if matches {
                            bump(ProposalTarget::Operator(op.id.clone()), keyword);
                        }
                    }
                }
            }
            FeedbackKind::OffScopeOutput | FeedbackKind::FreeText => {}
        }
    }
    let mut out: Vec<EditProposal> = counts
        .into_iter()
        .map(|((target, hint), n)| EditProposal {
            target,
            hint,
            priority: n as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        b.priority
            .total_cmp(&a.priority)
            .then_with(|| a.target.name().cmp(b.target.name()))
            .then_with(|| a.target.cmp(&b.target))
            .then_with(|| a.hint.cmp(&b.hint))
    });
    out
}

/// Highest priority among proposals naming operator `id`.
pub fn operator_priority(proposals: &[EditProposal], id: &str) -> f64 {
    proposals
        .iter()
        .filter(|p| p.target == ProposalTarget::Operator(id.to_string()))
        .map(|p| p.priority)
        .fold(0.0, f64::max)
}
