use std::fmt;

use metabokg_core::agents::{default_tool, AgentId, Mention, NodeRef, TraceEvent, TraceKind};
use metabokg_core::resolvers::EntityKind;
use serde::{Deserialize, Serialize};

use crate::judge::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    #[serde(rename = "none")]
    None,
    /// The validator rejected a dataset question.
    T1,
    /// A wrong query was generated.
    T2,
    /// The supervisor never sent an entity to the KG agent.
    T3,
    /// The KG agent used a resolver for the wrong entity kind.
    T4,
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorType::None => "none",
            ErrorType::T1 => "T1",
            ErrorType::T2 => "T2",
            ErrorType::T3 => "T3",
            ErrorType::T4 => "T4",
        })
    }
}

fn by(event: &TraceEvent, agent: AgentId) -> bool {
    event.agent == NodeRef::Agent(agent)
}

fn validator_rejected(trace: &[TraceEvent]) -> bool {
    trace.iter().any(|e| {
        by(e, AgentId::Validator)
            && (e.kind == TraceKind::AgentStarted && e.payload.get("valid") == Some(&serde_json::Value::Bool(false))
                || e.kind == TraceKind::ToolCalled && e.payload.get("presence").and_then(|p| p.as_str()) == Some("absent"))
    })
}

/// The true kind of a resolver input: the annotated mention with the same
/// surface, else the kind the supervisor assigned.
fn mention_kind(input: &str, expected: &[Mention], trace: &[TraceEvent]) -> Option<EntityKind> {
    let same = |m: &Mention| m.text.trim().eq_ignore_ascii_case(input.trim());
    if let Some(m) = expected.iter().find(|m| same(m)) {
        return Some(m.kind);
    }
    trace
        .iter()
        .filter(|e| by(e, AgentId::Kg) && e.kind == TraceKind::AgentStarted)
        .filter_map(|e| serde_json::from_value::<Vec<Mention>>(e.payload.get("mentions")?.clone()).ok())
        .flatten()
        .find(|m| same(m))
        .map(|m| m.kind)
}

fn wrong_tool(trace: &[TraceEvent], expected: &[Mention]) -> bool {
    trace.iter().filter(|e| by(e, AgentId::Kg) && e.kind == TraceKind::ToolCalled).any(|e| {
        let (Some(tool), Some(input)) = (e.tool.as_deref(), e.payload.get("input").and_then(|v| v.as_str())) else {
            return false;
        };
        mention_kind(input, expected, trace).is_some_and(|kind| default_tool(kind) != tool)
    })
}

/// Failure type of one evaluated question, from its trace, its verdict and
/// the mentions the dataset annotates for it.
///
/// A missing query is T1 when the validator rejected the question and T3
/// otherwise: without a query nothing downstream of the supervisor ran.
pub fn classify_error(trace: &[TraceEvent], verdict: Verdict, expected: &[Mention]) -> ErrorType {
    if verdict == Verdict::Correct {
        return ErrorType::None;
    }
    if validator_rejected(trace) {
        return ErrorType::T1;
    }
    let kg_ran = trace.iter().any(|e| by(e, AgentId::Kg) && e.kind == TraceKind::AgentStarted);
    if verdict == Verdict::NotGenerated || (!expected.is_empty() && !kg_ran) {
        return ErrorType::T3;
    }
    if wrong_tool(trace, expected) {
        return ErrorType::T4;
    }
    ErrorType::T2
}
