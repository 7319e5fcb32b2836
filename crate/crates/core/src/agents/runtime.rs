//! Executes one user turn over the agent graph.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::interp::{analyze_file, make_chart_spec, spectrum_url, summarize_results, FileSummary, InterpError};
use crate::llm::{ChatMessage, ChatRequest, Completion, GatewayError, TokenUsage};
use crate::prompts::PromptError;
use crate::resolvers::{
    ChemicalIndex, EntityKind, PlantDb, PlantPresence, ResolveError, ResolvedEntity, SmilesResolver, TargetResolver,
    TaxonResolver,
};
use crate::sparql::{
    AttemptStatus, ChainError, ChainObserver, ChainResources, Diagnosis, ResultPayload, SparqlAttempt, SparqlChain,
};
use crate::wikidata::{merge_outputs, WikidataBridge};

use super::answer::{compose_answer, entity_lines, AnswerParts};
use super::protocol::{
    parse_classification, parse_directive, parse_runner, parse_tool_calls, parse_validator, Classification, Directive,
    Mention, RunnerPlan, ToolCall,
};
use super::state::{
    AgentMessage, EventDraft, EventSink, MessageKind, QueryResultRef, Sender, SessionState, TraceKind, UploadedFile,
};
use super::topology::{tools, AgentId, GraphTopology, NodeRef};

pub const STEP_CAP: usize = 12;

/// Prior questions and answers shown to the entry agent.
pub const HISTORY_WINDOW: usize = 6;

pub const EMPTY_QUESTION_MESSAGE: &str = "Please enter a question.";

pub const UNROUTABLE_MESSAGE: &str =
    "Sorry, I could not decide how to continue with this question. Please try rephrasing it.";

/// Tool implementations shared by every session.
#[derive(Clone)]
pub struct Toolbox {
    pub plant_db: Arc<PlantDb>,
    pub taxon: Arc<TaxonResolver>,
    pub chemical: Arc<ChemicalIndex>,
    pub target: Arc<TargetResolver>,
    pub smiles: Arc<SmilesResolver>,
    pub wikidata: Arc<WikidataBridge>,
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("language model call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("step cap of {0} agent invocations reached")]
    StepCap(usize),
}

impl TurnError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, TurnError::Gateway(e) if e.is_retriable())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub message: AgentMessage,
    pub classification: Option<Classification>,
    /// Agent invocations in this turn.
    pub steps: usize,
    /// Set when the turn failed; tells the caller whether retrying may help.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retriable: Option<bool>,
}

impl TurnOutcome {
    pub fn answer(&self) -> &str {
        &self.message.body
    }
}

pub struct Runtime {
    topology: GraphTopology,
    res: ChainResources,
    tools: Toolbox,
    step_cap: usize,
}

impl Runtime {
    pub fn new(topology: GraphTopology, res: ChainResources, tools: Toolbox) -> Self {
        Self { topology, res, tools, step_cap: STEP_CAP }
    }

    pub fn with_step_cap(mut self, cap: usize) -> Self {
        self.step_cap = cap;
        self
    }

    pub fn topology(&self) -> &GraphTopology {
        &self.topology
    }

    pub fn resources(&self) -> &ChainResources {
        &self.res
    }

    /// A copy whose refinement store withholds exemplars matching
    /// `question`, so an evaluated question cannot see its own reference.
    pub fn without_exemplar(&self, question: &str) -> Runtime {
        let mut res = self.res.clone();
        res.store = Arc::new(self.res.store.excluding(question));
        Runtime { topology: self.topology.clone(), res, tools: self.tools.clone(), step_cap: self.step_cap }
    }

    /// Analyzes a file already stored as `name` in `session_dir` and adds it
    /// to the session's file registry.
    pub fn register_upload(
        &self,
        state: &mut SessionState,
        session_dir: &Path,
        name: &str,
        sink: &dyn EventSink,
    ) -> Result<FileSummary, InterpError> {
        let started = state.clock();
        let result = analyze_file(Path::new(name), session_dir);
        let payload = match &result {
            Ok(s) => json!({"name": name, "kind": s.kind, "size_bytes": s.size_bytes, "warnings": s.warnings}),
            Err(e) => json!({"name": name, "error": e.to_string()}),
        };
        let kind = if result.is_ok() { TraceKind::ToolCalled } else { TraceKind::Error };
        state.record(EventDraft::new(AgentId::Entry, kind, payload).tool(tools::FILE_ANALYZER).started(started), sink);
        let summary = result?;
        state.uploaded_files.insert(name.to_owned(), UploadedFile { artifact: name.to_owned(), summary: summary.clone() });
        Ok(summary)
    }

    /// Runs the graph for one user message until an answer, a rejection, or
    /// the step cap. Failures become an error message; they never escape.
    pub async fn run_turn(
        &self,
        state: &mut SessionState,
        session_dir: &Path,
        input: &str,
        sink: &dyn EventSink,
    ) -> TurnOutcome {
        let history_text = state.conversation_summary(HISTORY_WINDOW);
        state.turns += 1;
        state.push_message(Sender::User, MessageKind::UserQuestion, input, vec![]);
        let question = input.trim();
        if question.is_empty() {
            state.record(EventDraft::new(AgentId::Entry, TraceKind::Error, json!({"message": "empty question"})), sink);
            return finish(state, sink, AgentId::Entry, MessageKind::Error, EMPTY_QUESTION_MESSAGE.into(), vec![], None, 0, Some(false));
        }
        let mut turn = Turn {
            rt: self,
            state,
            dir: session_dir,
            sink,
            question: question.to_owned(),
            history_text,
            classification: None,
            entities: Vec::new(),
            attempted: BTreeSet::new(),
            notes: Vec::new(),
            errors: Vec::new(),
            steps: 0,
            executed: None,
            interpretation: None,
            attachments: Vec::new(),
        };
        let result = turn.drive().await;
        let Turn { state, classification, steps, attachments, .. } = turn;
        match result {
            Ok(Ending::Answer(text, from)) => {
                finish(state, sink, from, MessageKind::FinalAnswer, text, attachments, classification, steps, None)
            }
            Err(e) => {
                let retriable = e.is_retriable();
                state.record(
                    EventDraft::new(NodeRef::Terminal, TraceKind::Error, json!({"message": e.to_string(), "retriable": retriable})),
                    sink,
                );
                let text = if retriable {
                    format!("The request failed: {e}. This is likely temporary; please try again.")
                } else {
                    format!("The request failed: {e}.")
                };
                finish(state, sink, AgentId::Supervisor, MessageKind::Error, text, attachments, classification, steps, Some(retriable))
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    state: &mut SessionState,
    sink: &dyn EventSink,
    from: AgentId,
    kind: MessageKind,
    text: String,
    attachments: Vec<String>,
    classification: Option<Classification>,
    steps: usize,
    retriable: Option<bool>,
) -> TurnOutcome {
    state.record(EventDraft::new(NodeRef::Terminal, TraceKind::Answer, json!(text)), sink);
    state.push_message(Sender::Agent(from), kind, text, attachments);
    TurnOutcome { message: state.history.last().cloned().expect("just pushed"), classification, steps, retriable }
}

enum Ending {
    Answer(String, AgentId),
}

/// Chain callbacks, kept in order and turned into trace events afterwards.
#[derive(Default)]
struct ChainLog {
    events: Mutex<Vec<ChainEvent>>,
}

enum ChainEvent {
    Completion(String, TokenUsage),
    Attempt(Box<SparqlAttempt>),
    Warning(String),
}

impl ChainObserver for ChainLog {
    fn on_completion(&self, purpose: &str, completion: &Completion) {
        self.events.lock().unwrap().push(ChainEvent::Completion(purpose.to_owned(), completion.usage));
    }

    fn on_attempt(&self, attempt: &SparqlAttempt) {
        let mut a = attempt.clone();
        a.results = None;
        self.events.lock().unwrap().push(ChainEvent::Attempt(Box::new(a)));
    }

    fn on_warning(&self, message: &str) {
        self.events.lock().unwrap().push(ChainEvent::Warning(message.to_owned()));
    }
}

struct Turn<'a> {
    rt: &'a Runtime,
    state: &'a mut SessionState,
    dir: &'a Path,
    sink: &'a dyn EventSink,
    question: String,
    history_text: String,
    classification: Option<Classification>,
    entities: Vec<ResolvedEntity>,
    /// Lower-cased mentions already sent to the KG agent this turn.
    attempted: BTreeSet<String>,
    /// What happened so far, for the supervisor prompt.
    notes: Vec<String>,
    /// Tool failures, surfaced in the final answer.
    errors: Vec<String>,
    steps: usize,
    executed: Option<QueryResultRef>,
    interpretation: Option<String>,
    attachments: Vec<String>,
}

fn artifact_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

impl Turn<'_> {
    fn record(&mut self, draft: EventDraft) {
        self.state.record(draft, self.sink);
    }

    fn warn(&mut self, agent: AgentId, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(session = %self.state.session_id, %agent, "{message}");
        self.record(EventDraft::new(agent, TraceKind::Warning, json!({"message": message})));
    }

    fn tool_error(&mut self, agent: AgentId, tool: &str, message: String) {
        self.record(EventDraft::new(agent, TraceKind::Error, json!({"message": message})).tool(tool));
        self.errors.push(format!("{tool}: {message}"));
        self.notes.push(format!("Tool {tool} failed: {message}"));
    }

    fn step(&mut self, agent: AgentId) -> Result<(), TurnError> {
        if self.steps >= self.rt.step_cap {
            return Err(TurnError::StepCap(self.rt.step_cap));
        }
        self.steps += 1;
        tracing::debug!(session = %self.state.session_id, %agent, step = self.steps, "agent step");
        Ok(())
    }

    async fn complete(&self, agent: AgentId, prompt: String) -> Result<Completion, TurnError> {
        let node = self.rt.topology.node(agent);
        let request = ChatRequest::new(node.model_ref.clone(), vec![ChatMessage::user(prompt)]);
        Ok(self.rt.res.gateway.complete(&request).await?)
    }

    fn render(&self, agent: AgentId, values: &[(&str, &str)]) -> Result<String, TurnError> {
        Ok(self.rt.res.prompts.render(&self.rt.topology.node(agent).prompt_ref, values)?)
    }

    async fn drive(&mut self) -> Result<Ending, TurnError> {
        match self.drive_inner().await {
            Err(TurnError::StepCap(cap)) => {
                self.warn(AgentId::Supervisor, format!("step cap of {cap} reached"));
                let diagnostic = format!(
                    "I stopped after {cap} agent steps without reaching a final answer. \
                     The question may be ambiguous; please try rephrasing it."
                );
                Ok(Ending::Answer(self.compose(&diagnostic), AgentId::Supervisor))
            }
            other => other,
        }
    }

    async fn drive_inner(&mut self) -> Result<Ending, TurnError> {
        self.step(AgentId::Entry)?;
        let class = self.entry().await?;
        self.classification = Some(class);
        if class == Classification::NewKnowledge {
            self.step(AgentId::Validator)?;
            if let Some(rejection) = self.validate().await? {
                return Ok(Ending::Answer(rejection, AgentId::Validator));
            }
        }
        loop {
            self.step(AgentId::Supervisor)?;
            let directive = self.supervise().await?;
            let target = match &directive {
                Directive::ToKg { .. } => NodeRef::Agent(AgentId::Kg),
                Directive::ToSparqlRunner => NodeRef::Agent(AgentId::SparqlRunner),
                Directive::ToInterpreter { .. } => NodeRef::Agent(AgentId::Interpreter),
                Directive::Finish { .. } => NodeRef::Terminal,
            };
            if !self.rt.topology.has_edge(NodeRef::Agent(AgentId::Supervisor), target) {
                self.warn(AgentId::Supervisor, format!("no edge from supervisor to {target}"));
                return Ok(Ending::Answer(self.compose(UNROUTABLE_MESSAGE), AgentId::Supervisor));
            }
            match directive {
                Directive::ToKg { mentions } => self.resolve(mentions).await?,
                Directive::ToSparqlRunner => {
                    self.step(AgentId::SparqlRunner)?;
                    self.run_sparql().await?;
                }
                Directive::ToInterpreter { request } => {
                    self.step(AgentId::Interpreter)?;
                    self.interpret(request).await?;
                }
                Directive::Finish { answer } => return Ok(Ending::Answer(self.compose(&answer), AgentId::Supervisor)),
            }
        }
    }

    fn files_text(&self) -> String {
        if self.state.uploaded_files.is_empty() {
            return "(none)".into();
        }
        self.state.uploaded_files.iter().map(|(name, f)| format!("- {}\n", f.summary.describe(name))).collect()
    }

    async fn entry(&mut self) -> Result<Classification, TurnError> {
        let prior = self.state.has_prior_turns();
        if !prior && self.state.uploaded_files.is_empty() {
            let c = Classification::NewKnowledge;
            self.record(EventDraft::new(AgentId::Entry, TraceKind::AgentStarted, json!({"classification": c, "llm": false})));
            self.state.push_message(Sender::Agent(AgentId::Entry), MessageKind::Classification, c.as_str(), vec![]);
            return Ok(c);
        }
        let started = self.state.clock();
        let files = self.files_text();
        let prompt = self.render(
            AgentId::Entry,
            &[("history", &self.history_text), ("files", &files), ("question", &self.question)],
        )?;
        let completion = self.complete(AgentId::Entry, prompt).await?;
        let parsed = parse_classification(&completion.text);
        let mut c = parsed.clone().unwrap_or(Classification::NewKnowledge);
        if c == Classification::HelpMeUnderstand && !prior {
            c = Classification::NewKnowledge;
        }
        self.record(
            EventDraft::new(AgentId::Entry, TraceKind::AgentStarted, json!({"classification": c, "llm": true}))
                .usage(completion.usage, 1)
                .started(started),
        );
        match parsed {
            Err(e) => self.warn(AgentId::Entry, format!("{e}; treating the question as new")),
            Ok(Classification::HelpMeUnderstand) if !prior => {
                self.warn(AgentId::Entry, "follow-up question without a prior answer; treating it as new")
            }
            Ok(_) => {}
        }
        self.state.push_message(Sender::Agent(AgentId::Entry), MessageKind::Classification, c.as_str(), vec![]);
        Ok(c)
    }

    /// `Some(message)` when the question is rejected.
    async fn validate(&mut self) -> Result<Option<String>, TurnError> {
        let started = self.state.clock();
        let schema = self.rt.res.schema.compact_summary();
        let prompt = self.render(AgentId::Validator, &[("schema", &schema), ("question", &self.question)])?;
        let completion = self.complete(AgentId::Validator, prompt).await?;
        let parsed = parse_validator(&completion.text);
        let (mut valid, mut feedback, plants) = match &parsed {
            Ok(r) => (r.valid, r.feedback.clone(), r.plants.clone()),
            Err(_) => (true, String::new(), Vec::new()),
        };
        self.record(
            EventDraft::new(AgentId::Validator, TraceKind::AgentStarted, json!({"valid": valid, "plants": plants}))
                .usage(completion.usage, 1)
                .started(started),
        );
        if let Err(e) = parsed {
            self.warn(AgentId::Validator, format!("{e}; accepting the question"));
        }
        for plant in &plants {
            let presence = self.rt.tools.plant_db.check(plant);
            self.record(
                EventDraft::new(AgentId::Validator, TraceKind::ToolCalled, json!({"input": plant, "presence": presence}))
                    .tool(tools::PLANT_DB),
            );
            if presence == PlantPresence::Absent && valid {
                valid = false;
                feedback = format!("The plant \"{plant}\" is not in the knowledge graph's plant database.");
            }
        }
        let verdict = if valid { "valid".to_owned() } else { format!("invalid: {feedback}") };
        self.state.push_message(Sender::Agent(AgentId::Validator), MessageKind::ValidationVerdict, verdict, vec![]);
        if valid {
            self.notes.push("The validator accepted the question.".into());
            return Ok(None);
        }
        let feedback = if feedback.is_empty() { "It is outside the scope of the knowledge graph.".into() } else { feedback };
        Ok(Some(format!("This question cannot be answered with the knowledge graph. {feedback}")))
    }

    fn state_text(&self) -> String {
        let mut out = String::new();
        let class = self.classification.unwrap_or(Classification::NewKnowledge);
        out.push_str(&format!("Question type: {}\n", class.as_str()));
        if !self.state.uploaded_files.is_empty() {
            out.push_str(&format!("Uploaded files:\n{}", self.files_text()));
        }
        if class == Classification::HelpMeUnderstand {
            match &self.state.last_result {
                Some(r) if r.turn < self.state.turns => {
                    out.push_str(&format!("Stored result from an earlier question ({}):\n", r.question));
                    match &r.payload {
                        Some(p) => out.push_str(&format!("{}\n", p.prompt_text())),
                        None => out.push_str("no rows\n"),
                    }
                    if let Some(q) = &r.query {
                        out.push_str(&format!("Query:\n{q}\n"));
                    }
                }
                _ => out.push_str("No stored result.\n"),
            }
            if let Some(i) = &self.state.last_interpretation {
                out.push_str(&format!("Previous interpretation:\n{i}\n"));
            }
        }
        out.push_str("Steps so far in this turn:\n");
        if self.notes.is_empty() {
            out.push_str("- none\n");
        }
        for n in &self.notes {
            out.push_str(&format!("- {n}\n"));
        }
        out
    }

    async fn supervise(&mut self) -> Result<Directive, TurnError> {
        let started = self.state.clock();
        let entities = entity_lines(&self.entities);
        let state_text = self.state_text();
        let prompt = self.render(
            AgentId::Supervisor,
            &[("question", &self.question), ("entities", &entities), ("state", &state_text)],
        )?;
        let completion = self.complete(AgentId::Supervisor, prompt).await?;
        let parsed = parse_directive(&completion.text);
        let directive = match &parsed {
            Ok(p) => p.directive.clone(),
            Err(_) => Directive::Finish { answer: UNROUTABLE_MESSAGE.into() },
        };
        self.record(
            EventDraft::new(AgentId::Supervisor, TraceKind::AgentStarted, json!({"directive": directive}))
                .usage(completion.usage, 1)
                .started(started),
        );
        match parsed {
            Err(e) => self.warn(AgentId::Supervisor, format!("unroutable reply: {e}")),
            Ok(p) => {
                for (text, tag) in p.dropped {
                    self.warn(AgentId::Supervisor, format!("dropped mention {text:?} with unknown kind {tag:?}"));
                }
            }
        }
        self.state.push_message(
            Sender::Agent(AgentId::Supervisor),
            MessageKind::RoutingDirective,
            serde_json::to_string(&directive).expect("directive serializes"),
            vec![],
        );
        Ok(directive)
    }

    async fn resolve(&mut self, mentions: Vec<Mention>) -> Result<(), TurnError> {
        let fresh: Vec<Mention> = mentions.into_iter().filter(|m| !self.attempted.contains(&m.text.to_lowercase())).collect();
        if fresh.is_empty() {
            self.notes.push("The KG agent was not called: every mention was already handled in this turn.".into());
            return Ok(());
        }
        self.step(AgentId::Kg)?;
        for m in &fresh {
            self.attempted.insert(m.text.to_lowercase());
        }
        let started = self.state.clock();
        let list: String = fresh.iter().map(|m| format!("- {} ({})\n", m.text, m.kind)).collect();
        let prompt = self.render(AgentId::Kg, &[("question", &self.question), ("mentions", &list)])?;
        let completion = self.complete(AgentId::Kg, prompt).await?;
        let parsed = parse_tool_calls(&completion.text);
        self.record(
            EventDraft::new(AgentId::Kg, TraceKind::AgentStarted, json!({"mentions": fresh}))
                .usage(completion.usage, 1)
                .started(started),
        );
        let calls = match parsed {
            Ok(calls) => calls,
            Err(e) => {
                self.warn(AgentId::Kg, format!("{e}; choosing tools by mention kind"));
                fresh.iter().map(|m| ToolCall { tool: default_tool(m.kind).into(), input: m.text.clone() }).collect()
            }
        };
        let allowed = self.rt.topology.node(AgentId::Kg).tool_refs.clone();
        let mut resolved = Vec::new();
        for call in calls {
            if !allowed.contains(&call.tool) {
                self.warn(AgentId::Kg, format!("tool {:?} is not available to the KG agent", call.tool));
                continue;
            }
            let started = self.state.clock();
            let result = self.call_resolver(&call).await;
            match result {
                Ok(entity) => {
                    self.record(
                        EventDraft::new(AgentId::Kg, TraceKind::ToolCalled, json!({"input": call.input, "entity": entity}))
                            .tool(&call.tool)
                            .started(started),
                    );
                    self.notes.push(format!(
                        "Resolved \"{}\" ({}) to {} with {}.",
                        entity.surface, entity.kind, entity.identifier, call.tool
                    ));
                    if !self.entities.iter().any(|e| e.identifier == entity.identifier && e.surface == entity.surface) {
                        self.entities.push(entity.clone());
                    }
                    resolved.push(entity);
                }
                Err(e) => {
                    self.record(
                        EventDraft::new(
                            AgentId::Kg,
                            TraceKind::ToolCalled,
                            json!({"input": call.input, "error": e.to_string(), "retriable": e.is_retriable()}),
                        )
                        .tool(&call.tool)
                        .started(started),
                    );
                    self.notes.push(format!("Could not resolve \"{}\" with {}: {e}", call.input, call.tool));
                    self.errors.push(format!("{}: {e}", call.tool));
                }
            }
        }
        self.state.push_message(
            Sender::Agent(AgentId::Kg),
            MessageKind::ResolvedEntities,
            serde_json::to_string(&resolved).expect("entities serialize"),
            vec![],
        );
        Ok(())
    }

    async fn call_resolver(&self, call: &ToolCall) -> Result<ResolvedEntity, ResolveError> {
        let t = &self.rt.tools;
        match call.tool.as_str() {
            tools::TAXON_RESOLVER => t.taxon.resolve(&call.input).await,
            tools::CHEMICAL_RESOLVER => t.chemical.resolve(&call.input),
            tools::TARGET_RESOLVER => t.target.resolve(&call.input).await,
            tools::SMILES_RESOLVER => t.smiles.resolve(&call.input).await,
            other => Err(ResolveError::NoMatch { surface: call.input.clone(), hint: format!("{other} is not a resolver") }),
        }
    }

    async fn run_sparql(&mut self) -> Result<(), TurnError> {
        let started = self.state.clock();
        let entities = entity_lines(&self.entities);
        let prompt = self.render(AgentId::SparqlRunner, &[("question", &self.question), ("entities", &entities)])?;
        let completion = self.complete(AgentId::SparqlRunner, prompt).await?;
        let parsed = parse_runner(&completion.text);
        let plan = parsed.clone().unwrap_or_else(|_| RunnerPlan::Graph { question: self.question.clone() });
        let plan_json = match &plan {
            RunnerPlan::Graph { question } => json!({"tool": tools::GRAPH_SPARQL_CHAIN, "question": question}),
            RunnerPlan::Wikidata { question, taxon } => {
                json!({"tool": tools::WIKIDATA_STRUCTURE_SEARCH, "question": question, "taxon": taxon})
            }
        };
        self.record(
            EventDraft::new(AgentId::SparqlRunner, TraceKind::AgentStarted, plan_json)
                .usage(completion.usage, 1)
                .started(started),
        );
        if let Err(e) = parsed {
            self.warn(AgentId::SparqlRunner, format!("{e}; running the full question"));
        }
        match plan {
            RunnerPlan::Graph { question } => {
                self.graph_chain(&question).await?;
            }
            RunnerPlan::Wikidata { question, taxon } => {
                if let Some(kg) = self.graph_chain(&question).await? {
                    self.wikidata_merge(kg, &taxon).await;
                }
            }
        }
        Ok(())
    }

    /// Runs the SPARQL chain and stores its result. Returns the result when
    /// it has rows.
    async fn graph_chain(&mut self, question: &str) -> Result<Option<QueryResultRef>, TurnError> {
        let log = Arc::new(ChainLog::default());
        let turn = self.state.turns;
        let mut chain = SparqlChain::new(self.rt.res.clone(), self.dir, &turn.to_string(), log.clone());
        let started = self.state.clock();
        let outcome = chain.run(question, &self.entities).await;
        self.flush_chain_log(&log);
        let tool = tools::GRAPH_SPARQL_CHAIN;
        let outcome = match outcome {
            Ok(o) => o,
            Err(ChainError::Gateway(e)) => return Err(e.into()),
            Err(ChainError::Prompt(e)) => return Err(e.into()),
            Err(e) => {
                self.tool_error(AgentId::SparqlRunner, tool, e.to_string());
                return Ok(None);
            }
        };
        let last = outcome.final_attempt();
        let query = last.sanitized_query.clone().or_else(|| outcome.attempts.iter().rev().find_map(|a| a.sanitized_query.clone()));
        let mut result = QueryResultRef {
            turn,
            question: question.to_owned(),
            query: query.clone(),
            artifact: None,
            row_count: last.row_count,
            columns: Vec::new(),
            payload: None,
            diagnosis: outcome.diagnosis,
            error: last.error.clone(),
        };
        if let (true, Some(results), Some(spill)) = (last.has_rows(), &last.results, &last.spill_path) {
            let counter = self.rt.res.gateway.token_counter();
            let payload = ResultPayload::decide(counter.as_ref(), question, query.as_deref().unwrap_or_default(), results, spill);
            result.artifact = Some(artifact_name(spill));
            result.columns = results.variables.clone();
            if !payload.is_inline() {
                self.record(
                    EventDraft::new(
                        AgentId::SparqlRunner,
                        TraceKind::RowsSpilled,
                        json!({"artifact": result.artifact, "row_count": payload.row_count()}),
                    )
                    .tool(tool),
                );
            }
            result.payload = Some(payload);
        }
        self.record(
            EventDraft::new(
                AgentId::SparqlRunner,
                TraceKind::ToolCalled,
                json!({
                    "question": question,
                    "attempts": outcome.attempts.len(),
                    "status": last.status,
                    "row_count": result.row_count,
                    "artifact": result.artifact,
                    "diagnosis": outcome.diagnosis,
                }),
            )
            .tool(tool)
            .started(started),
        );
        let note = match (&result.payload, outcome.diagnosis) {
            (Some(p), _) => format!("The SPARQL query returned {}", p.prompt_text()),
            (None, Some(Diagnosis::DataAbsent)) => {
                "The SPARQL query and one refined query both returned no rows; the data appears to be absent.".into()
            }
            (None, _) => format!(
                "The SPARQL query did not produce results ({}).",
                result.error.as_deref().unwrap_or(status_text(last.status))
            ),
        };
        self.notes.push(note);
        if last.status == AttemptStatus::EndpointError {
            if let Some(err) = &last.error {
                self.errors.push(format!("{tool}: {err}"));
            }
        }
        if let Some(a) = &result.artifact {
            self.attachments.push(a.clone());
        }
        self.state.push_message(
            Sender::Agent(AgentId::SparqlRunner),
            MessageKind::QueryResultRef,
            serde_json::to_string(&result).expect("result serializes"),
            result.artifact.iter().cloned().collect(),
        );
        self.state.last_result = Some(result.clone());
        self.executed = Some(result.clone());
        Ok(result.artifact.is_some().then_some(result))
    }

    fn flush_chain_log(&mut self, log: &ChainLog) {
        let events = std::mem::take(&mut *log.events.lock().unwrap());
        let mut pending: Vec<(String, TokenUsage)> = Vec::new();
        for event in events {
            match event {
                ChainEvent::Completion(purpose, usage) => pending.push((purpose, usage)),
                ChainEvent::Warning(message) => self.warn(AgentId::SparqlRunner, message),
                ChainEvent::Attempt(a) => {
                    let (purpose, usage) = if pending.is_empty() {
                        ("unknown".to_owned(), a.usage)
                    } else {
                        pending.remove(0)
                    };
                    self.record(
                        EventDraft::new(
                            AgentId::SparqlRunner,
                            TraceKind::QueryGenerated,
                            json!({
                                "purpose": purpose,
                                "attempt_index": a.attempt_index,
                                "query": a.sanitized_query,
                                "status": a.status,
                                "row_count": a.row_count,
                                "violations": a.violations,
                                "error": a.error,
                            }),
                        )
                        .tool(tools::GRAPH_SPARQL_CHAIN)
                        .usage(usage, 1),
                    );
                }
            }
        }
        for (purpose, usage) in pending {
            self.record(
                EventDraft::new(AgentId::SparqlRunner, TraceKind::QueryGenerated, json!({"purpose": purpose, "status": "incomplete"}))
                    .tool(tools::GRAPH_SPARQL_CHAIN)
                    .usage(usage, 1),
            );
        }
    }

    async fn wikidata_merge(&mut self, kg: QueryResultRef, taxon: &str) {
        let turn = self.state.turns;
        let wd_path = self.dir.join(format!("{turn}-wikidata.csv"));
        let started = self.state.clock();
        let list = match self.rt.tools.wikidata.genus_compounds(taxon, &wd_path).await {
            Ok(list) => list,
            Err(e) => return self.tool_error(AgentId::SparqlRunner, tools::WIKIDATA_STRUCTURE_SEARCH, e.to_string()),
        };
        self.record(
            EventDraft::new(
                AgentId::SparqlRunner,
                TraceKind::ToolCalled,
                json!({"taxon": taxon, "compounds": list.as_ref().map_or(0, |l| l.ids.len())}),
            )
            .tool(tools::WIKIDATA_STRUCTURE_SEARCH)
            .started(started),
        );
        let Some(list) = list else {
            self.notes.push(format!("Wikidata lists no compounds for the genus of {taxon}."));
            return;
        };
        self.attachments.push(artifact_name(&list.spill_path));
        let kg_path = self.dir.join(kg.artifact.as_deref().unwrap_or_default());
        let merged_path = self.dir.join(format!("{turn}-merged.csv"));
        let started = self.state.clock();
        let common = match merge_outputs(&kg_path, &list.spill_path, &merged_path) {
            Ok(c) => c,
            Err(e) => return self.tool_error(AgentId::SparqlRunner, tools::OUTPUT_MERGER, e.to_string()),
        };
        let name = artifact_name(&merged_path);
        self.record(
            EventDraft::new(AgentId::SparqlRunner, TraceKind::ToolCalled, json!({"artifact": name, "row_count": common.len()}))
                .tool(tools::OUTPUT_MERGER)
                .started(started),
        );
        let csv = std::fs::read_to_string(&merged_path).unwrap_or_default();
        let counter = self.rt.res.gateway.token_counter();
        let payload = ResultPayload::from_csv(
            counter.as_ref(),
            &kg.question,
            kg.query.as_deref().unwrap_or_default(),
            csv,
            common.len(),
            vec!["wikidata_id".into()],
            &merged_path,
        );
        self.notes.push(format!(
            "Compounds found both in the knowledge graph result and in Wikidata for the genus: {}",
            payload.prompt_text()
        ));
        self.attachments.push(name.clone());
        let merged = QueryResultRef {
            artifact: Some(name.clone()),
            row_count: common.len(),
            columns: vec!["wikidata_id".into()],
            payload: Some(payload),
            question: self.question.clone(),
            ..kg
        };
        self.state.push_message(
            Sender::Agent(AgentId::SparqlRunner),
            MessageKind::QueryResultRef,
            serde_json::to_string(&merged).expect("result serializes"),
            vec![name],
        );
        self.state.last_result = Some(merged.clone());
        self.executed = Some(merged);
    }

    async fn interpret(&mut self, request: String) -> Result<(), TurnError> {
        let request = if request.trim().is_empty() { self.question.clone() } else { request };
        let stored = self.state.last_result.clone().filter(|r| r.artifact.is_some());
        let Some(stored) = stored else {
            self.record(EventDraft::new(AgentId::Interpreter, TraceKind::AgentStarted, json!({"request": request, "skipped": true})));
            self.notes.push("The interpreter was not run: there is no stored result with rows.".into());
            return Ok(());
        };
        let artifact = stored.artifact.clone().unwrap_or_default();
        let csv_path: PathBuf = self.dir.join(&artifact);
        let tool = interpretation_tool(&request);
        let started = self.state.clock();
        let turn = self.state.turns;
        let text = match tool {
            tools::CHART_SPEC => {
                self.record(EventDraft::new(AgentId::Interpreter, TraceKind::AgentStarted, json!({"request": request, "tool": tool})));
                let out = self.dir.join(format!("{turn}-chart.json"));
                match make_chart_spec(&csv_path, &request, &out) {
                    Ok(spec) => {
                        let name = artifact_name(&out);
                        self.record(
                            EventDraft::new(AgentId::Interpreter, TraceKind::ToolCalled, json!({"artifact": name, "spec": spec}))
                                .tool(tool)
                                .started(started),
                        );
                        self.attachments.push(name.clone());
                        Some(format!("Here is the {} chart \"{}\", saved as {name}.", spec.chart_type.as_str(), spec.title))
                    }
                    Err(e) => {
                        self.tool_error(AgentId::Interpreter, tool, e.to_string());
                        None
                    }
                }
            }
            tools::SPECTRUM_PLOTTER => {
                self.record(EventDraft::new(AgentId::Interpreter, TraceKind::AgentStarted, json!({"request": request, "tool": tool})));
                let input = request
                    .split_whitespace()
                    .find(|w| w.starts_with("mzspec:"))
                    .map(str::to_owned)
                    .unwrap_or_else(|| csv_path.display().to_string());
                match spectrum_url(&input) {
                    Ok(url) => {
                        self.record(
                            EventDraft::new(AgentId::Interpreter, TraceKind::ToolCalled, json!({"url": url}))
                                .tool(tool)
                                .started(started),
                        );
                        Some(format!("The spectrum can be viewed at {url}"))
                    }
                    Err(e) => {
                        self.tool_error(AgentId::Interpreter, tool, e.to_string());
                        None
                    }
                }
            }
            _ => {
                let model_ref = self.rt.topology.node(AgentId::Interpreter).model_ref.clone();
                let res = &self.rt.res;
                let outcome = summarize_results(
                    &res.prompts,
                    &res.gateway,
                    &model_ref,
                    &csv_path,
                    &stored.question,
                    stored.query.as_deref().unwrap_or_default(),
                    &request,
                )
                .await;
                match outcome {
                    Ok((completion, payload)) => {
                        self.record(
                            EventDraft::new(AgentId::Interpreter, TraceKind::AgentStarted, json!({"request": request, "tool": tool}))
                                .usage(completion.usage, 1)
                                .started(started),
                        );
                        self.record(
                            EventDraft::new(
                                AgentId::Interpreter,
                                TraceKind::ToolCalled,
                                json!({"artifact": artifact, "inline": payload.is_inline(), "row_count": payload.row_count()}),
                            )
                            .tool(tool),
                        );
                        Some(completion.text.trim().to_owned())
                    }
                    Err(InterpError::Gateway(e)) => return Err(e.into()),
                    Err(InterpError::Prompt(e)) => return Err(e.into()),
                    Err(e) => {
                        self.record(EventDraft::new(AgentId::Interpreter, TraceKind::AgentStarted, json!({"request": request, "tool": tool})));
                        self.tool_error(AgentId::Interpreter, tool, e.to_string());
                        None
                    }
                }
            }
        };
        if let Some(text) = text {
            self.notes.push(format!("Interpretation: {text}"));
            self.state.last_interpretation = Some(text.clone());
            self.interpretation = Some(text.clone());
            let attachments = self.attachments.clone();
            self.state.push_message(Sender::Agent(AgentId::Interpreter), MessageKind::Interpretation, text, attachments);
        }
        Ok(())
    }

    fn compose(&self, lead: &str) -> String {
        let executed = self.executed.as_ref();
        compose_answer(&AnswerParts {
            lead,
            entities: if executed.is_some() { &self.entities } else { &[] },
            payload: executed.and_then(|r| r.payload.as_ref()),
            data_absent: executed.is_some_and(|r| r.diagnosis == Some(Diagnosis::DataAbsent)),
            interpretation: self.interpretation.as_deref(),
            errors: &self.errors,
            query: executed.and_then(|r| r.query.as_deref()),
        })
    }
}

fn status_text(status: AttemptStatus) -> &'static str {
    match status {
        AttemptStatus::OkRows => "rows",
        AttemptStatus::OkEmpty => "no rows",
        AttemptStatus::SyntaxError => "the query could not be parsed",
        AttemptStatus::EndpointError => "the endpoint failed",
    }
}

/// Resolver used when the KG agent's reply cannot be parsed.
pub fn default_tool(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Taxon => tools::TAXON_RESOLVER,
        EntityKind::ChemicalClass => tools::CHEMICAL_RESOLVER,
        EntityKind::Target => tools::TARGET_RESOLVER,
        EntityKind::Structure => tools::SMILES_RESOLVER,
    }
}

/// Plot requests get a chart spec, spectrum requests a viewer link, and
/// everything else a summary.
pub fn interpretation_tool(request: &str) -> &'static str {
    let r = request.to_lowercase();
    if ["plot", "chart", "distribution", "histogram"].iter().any(|k| r.contains(k)) {
        tools::CHART_SPEC
    } else if r.contains("spectrum") || r.contains("spectra") || r.contains("usi") {
        tools::SPECTRUM_PLOTTER
    } else {
        tools::RESULT_SUMMARY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpretation_tool_choice() {
        assert_eq!(interpretation_tool("Can you generate a distribution plot for the count of features?"), tools::CHART_SPEC);
        assert_eq!(interpretation_tool("show the spectrum"), tools::SPECTRUM_PLOTTER);
        assert_eq!(interpretation_tool("summarize"), tools::RESULT_SUMMARY);
    }
}
