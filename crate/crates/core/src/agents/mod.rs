//! The agent graph: six agents, their routing, and per-session state.

mod answer;
pub mod protocol;
mod runtime;
pub mod state;
pub mod topology;

pub use answer::{compose_answer, entity_lines, AnswerParts, QUERY_HEADING};
pub use protocol::{extract_json_object, Classification, Directive, Mention, ProtocolError, RunnerPlan, ToolCall};
pub use runtime::{
    default_tool, interpretation_tool, Runtime, Toolbox, TurnError, TurnOutcome, EMPTY_QUESTION_MESSAGE, HISTORY_WINDOW,
    STEP_CAP, UNROUTABLE_MESSAGE,
};
pub use state::{
    AgentMessage, EventDraft, EventSink, Ledger, MessageKind, NullSink, QueryResultRef, Sender, SessionState, TraceEvent,
    TraceKind, UploadedFile,
};
pub use topology::{tools, AgentId, AgentNode, GraphTopology, NodeRef, TopologyError};
