use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::interp::FileSummary;
use crate::llm::TokenUsage;
use crate::sparql::chain::{Diagnosis, ResultPayload};

use super::topology::{AgentId, NodeRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sender {
    User,
    Agent(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    UserQuestion,
    Classification,
    ValidationVerdict,
    RoutingDirective,
    ResolvedEntities,
    QueryResultRef,
    Interpretation,
    FinalAnswer,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub turn: u32,
    pub sender: Sender,
    pub kind: MessageKind,
    pub body: String,
    /// Artifact names inside the session directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    AgentStarted,
    ToolCalled,
    QueryGenerated,
    RowsSpilled,
    Warning,
    Answer,
    Error,
}

/// One agent step or tool call. `usage` and `llm_calls` cover the gateway
/// completions made for this event only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub turn: u32,
    pub at_ms: u64,
    pub duration_ms: u64,
    pub agent: NodeRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    #[serde(default)]
    pub llm_calls: u32,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub estimated_cost: f64,
    pub llm_calls: u64,
}

impl Ledger {
    pub fn add(&mut self, usage: &TokenUsage, calls: u32) {
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
        self.total_tokens += usage.total();
        self.estimated_cost += usage.estimated_cost;
        self.llm_calls += u64::from(calls);
    }

    /// Recomputed from trace events.
    pub fn from_trace<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> Self {
        let mut l = Ledger::default();
        for e in events {
            l.add(&e.usage.unwrap_or_default(), e.llm_calls);
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadedFile {
    pub artifact: String,
    pub summary: FileSummary,
}

/// The most recent query result kept for follow-up questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResultRef {
    pub turn: u32,
    pub question: String,
    pub query: Option<String>,
    /// Artifact name of the CSV, when rows exist.
    pub artifact: Option<String>,
    pub row_count: usize,
    pub columns: Vec<String>,
    pub payload: Option<ResultPayload>,
    pub diagnosis: Option<Diagnosis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Receives trace events as they are recorded.
pub trait EventSink: Send + Sync {
    fn emit(&self, event: &TraceEvent);
}

pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: &TraceEvent) {}
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub turns: u32,
    pub history: Vec<AgentMessage>,
    pub uploaded_files: BTreeMap<String, UploadedFile>,
    pub trace: Vec<TraceEvent>,
    pub ledger: Ledger,
    pub last_result: Option<QueryResultRef>,
    pub last_interpretation: Option<String>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Fields of a trace event supplied by the caller.
#[derive(Debug, Clone)]
pub struct EventDraft {
    pub agent: NodeRef,
    pub tool: Option<String>,
    pub kind: TraceKind,
    pub usage: Option<TokenUsage>,
    pub llm_calls: u32,
    pub started_ms: Option<u64>,
    pub payload: serde_json::Value,
}

impl EventDraft {
    pub fn new(agent: impl Into<NodeRef>, kind: TraceKind, payload: serde_json::Value) -> Self {
        Self { agent: agent.into(), tool: None, kind, usage: None, llm_calls: 0, started_ms: None, payload }
    }

    pub fn tool(mut self, tool: &str) -> Self {
        self.tool = Some(tool.to_owned());
        self
    }

    pub fn usage(mut self, usage: TokenUsage, calls: u32) -> Self {
        self.usage = Some(usage);
        self.llm_calls = calls;
        self
    }

    pub fn started(mut self, ms: u64) -> Self {
        self.started_ms = Some(ms);
        self
    }
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self { session_id: session_id.into(), ..Self::default() }
    }

    pub fn clock(&self) -> u64 {
        now_ms().max(self.trace.last().map_or(0, |e| e.at_ms))
    }

    /// Appends a trace event with the next sequence number and a timestamp
    /// no earlier than the previous event, updates the ledger, and emits it.
    pub fn record(&mut self, draft: EventDraft, sink: &dyn EventSink) -> &TraceEvent {
        let at_ms = self.clock();
        let duration_ms = draft.started_ms.map_or(0, |s| at_ms.saturating_sub(s));
        if let Some(u) = &draft.usage {
            self.ledger.add(u, draft.llm_calls);
        } else {
            self.ledger.llm_calls += u64::from(draft.llm_calls);
        }
        let event = TraceEvent {
            seq: self.trace.len() as u64 + 1,
            turn: self.turns,
            at_ms,
            duration_ms,
            agent: draft.agent,
            tool: draft.tool,
            kind: draft.kind,
            usage: draft.usage,
            llm_calls: draft.llm_calls,
            payload: draft.payload,
        };
        sink.emit(&event);
        self.trace.push(event);
        self.trace.last().unwrap()
    }

    pub fn push_message(&mut self, sender: Sender, kind: MessageKind, body: impl Into<String>, attachments: Vec<String>) {
        self.history.push(AgentMessage { turn: self.turns, sender, kind, body: body.into(), attachments });
    }

    pub fn events_of_turn(&self, turn: u32) -> impl Iterator<Item = &TraceEvent> {
        self.trace.iter().filter(move |e| e.turn == turn)
    }

    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        self.trace.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
    }

    /// Recent user questions and final answers, oldest first, for prompts.
    pub fn conversation_summary(&self, max_messages: usize) -> String {
        let relevant: Vec<&AgentMessage> = self
            .history
            .iter()
            .filter(|m| matches!(m.kind, MessageKind::UserQuestion | MessageKind::FinalAnswer))
            .collect();
        let start = relevant.len().saturating_sub(max_messages);
        if relevant.is_empty() {
            return "(none)".into();
        }
        relevant[start..]
            .iter()
            .map(|m| {
                let who = if m.sender == Sender::User { "User" } else { "Assistant" };
                format!("{who}: {}\n", m.body)
            })
            .collect()
    }

    pub fn has_prior_turns(&self) -> bool {
        self.history.iter().any(|m| m.kind == MessageKind::FinalAnswer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn record_is_monotone_and_conserves_ledger() {
        let mut s = SessionState::new("s");
        s.turns = 1;
        let u = TokenUsage { prompt_tokens: 10, completion_tokens: 5, estimated_cost: 0.5 };
        s.record(EventDraft::new(AgentId::Entry, TraceKind::AgentStarted, json!({})).usage(u, 1), &NullSink);
        s.record(EventDraft::new(AgentId::Validator, TraceKind::AgentStarted, json!({})).usage(u, 1), &NullSink);
        s.record(EventDraft::new(AgentId::Validator, TraceKind::Answer, json!("no")), &NullSink);
        assert!(s.trace.windows(2).all(|w| w[0].at_ms <= w[1].at_ms && w[0].seq < w[1].seq));
        assert_eq!(s.ledger, Ledger::from_trace(&s.trace));
        assert_eq!(s.ledger.total_tokens, 30);
        assert_eq!(s.ledger.llm_calls, 2);
        assert_eq!(s.trace_jsonl().lines().count(), 3);
    }

    #[test]
    fn state_round_trips_as_json() {
        let mut s = SessionState::new("s");
        s.push_message(Sender::User, MessageKind::UserQuestion, "q", vec![]);
        s.record(EventDraft::new(AgentId::Entry, TraceKind::AgentStarted, json!({"a": 1})).tool("file_analyzer"), &NullSink);
        let back: SessionState = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
