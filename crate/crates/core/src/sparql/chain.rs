//! Question to SPARQL to rows: generation, sanitization, compliance check,
//! execution with CSV spill, a single refinement pass, and empty-result
//! diagnosis.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{within_result_budget, ChatMessage, ChatRequest, Completion, Gateway, GatewayError, TokenCounter, TokenUsage};
use crate::prompts::{self, PromptError, PromptLibrary};
use crate::resolvers::{EntityKind, ResolvedEntity};

use super::compliance::{validate_schema_compliance, Violation};
use super::endpoint::{EndpointError, SelectResults, SparqlEndpoint};
use super::refinement::RefinementStore;
use super::sanitize::sanitize_query;
use super::schema::SchemaDocument;

pub const DATA_ABSENT_MESSAGE: &str = "The requested data does not appear to exist in the knowledge graph: \
both the original query and one corrected query returned no results. Errors in query construction may \
persist, so rephrasing the question with more specific terms could still help.";

/// Phrase shown to the user whenever results were too large to inline.
pub const SPILL_NOTICE: &str = "retrieve the complete output from the generated CSV file";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    OkRows,
    OkEmpty,
    SyntaxError,
    EndpointError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparqlAttempt {
    pub attempt_index: u8,
    pub raw_llm_output: String,
    /// `None` when no SELECT query could be extracted.
    pub sanitized_query: Option<String>,
    pub status: AttemptStatus,
    pub row_count: usize,
    pub spill_path: Option<PathBuf>,
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub results: Option<SelectResults>,
}

impl SparqlAttempt {
    pub fn has_rows(&self) -> bool {
        self.status == AttemptStatus::OkRows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    /// The refined query returned rows, so the first one was badly built.
    Resolved,
    /// Both queries ran and returned nothing.
    DataAbsent,
    /// The refined query still failed to parse or execute.
    ConstructionError,
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("refinement already performed for this turn")]
    RefinementExhausted,
    #[error("refinement requires an empty or unparsable first attempt, got {0:?}")]
    RefinementPrecondition(AttemptStatus),
    #[error("empty-result diagnosis requires a first attempt without rows")]
    DiagnosisPrecondition,
    #[error("cannot write results to {path}: {message}")]
    Spill { path: String, message: String },
}

/// Hooks through which the caller records what the chain does.
pub trait ChainObserver: Send + Sync {
    fn on_completion(&self, _purpose: &str, _completion: &Completion) {}
    fn on_attempt(&self, _attempt: &SparqlAttempt) {}
    fn on_warning(&self, _message: &str) {}
}

pub struct NoopObserver;

impl ChainObserver for NoopObserver {}

/// Read-only state shared by every chain instance.
#[derive(Clone)]
pub struct ChainResources {
    pub gateway: Arc<Gateway>,
    pub prompts: Arc<PromptLibrary>,
    pub schema: Arc<SchemaDocument>,
    pub endpoint: Arc<dyn SparqlEndpoint>,
    pub store: Arc<RefinementStore>,
    pub model_ref: String,
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub attempts: Vec<SparqlAttempt>,
    pub diagnosis: Option<Diagnosis>,
}

impl ChainOutcome {
    pub fn final_attempt(&self) -> &SparqlAttempt {
        self.attempts.last().expect("at least one attempt")
    }

    pub fn answered(&self) -> bool {
        self.final_attempt().has_rows()
    }
}

/// One chain per turn. Refinement can happen once per instance.
pub struct SparqlChain {
    res: ChainResources,
    spill_path: PathBuf,
    refined: bool,
    observer: Arc<dyn ChainObserver>,
}

impl SparqlChain {
    /// Results of this turn are written to `{spill_dir}/{turn}-results.csv`.
    pub fn new(res: ChainResources, spill_dir: impl AsRef<Path>, turn: &str, observer: Arc<dyn ChainObserver>) -> Self {
        let spill_path = spill_dir.as_ref().join(format!("{turn}-results.csv"));
        Self { res, spill_path, refined: false, observer }
    }

    pub fn spill_path(&self) -> &Path {
        &self.spill_path
    }

    pub fn generation_prompt(&self, question: &str, entities: &[ResolvedEntity]) -> Result<String, PromptError> {
        let schema = self.res.schema.compact_summary();
        let block = entity_block(entities);
        self.res
            .prompts
            .render(prompts::SPARQL_GENERATION, &[("schema", &schema), ("entities", &block), ("question", question)])
    }

    pub async fn generate_query(&self, question: &str, entities: &[ResolvedEntity]) -> Result<Completion, ChainError> {
        let prompt = self.generation_prompt(question, entities)?;
        self.complete("sparql_generation", prompt).await
    }

    pub fn refinement_prompt(&self, question: &str, failed: &SparqlAttempt) -> Result<String, PromptError> {
        let failure = match failed.status {
            AttemptStatus::OkEmpty => "it executed but returned no results".to_owned(),
            _ => format!(
                "it could not be used as a SPARQL SELECT query ({})",
                failed.error.as_deref().unwrap_or("no query found")
            ),
        };
        let failed_query = failed.sanitized_query.as_deref().unwrap_or(&failed.raw_llm_output);
        let related: String = self
            .res
            .schema
            .related_terms(&format!("{question}\n{failed_query}"))
            .iter()
            .map(|t| format!("- {}\n", self.res.schema.compact(t)))
            .collect();
        let related = if related.is_empty() { "- none found\n".to_owned() } else { related };
        let exemplar = match self.res.store.retrieve(question) {
            Some(e) => format!("\nA similar question with its correct query:\nQuestion: {}\n```sparql\n{}\n```\n", e.question, e.query),
            None => String::new(),
        };
        self.res.prompts.render(
            prompts::SPARQL_REFINEMENT,
            &[
                ("failure", &failure),
                ("question", question),
                ("failed_query", failed_query),
                ("prefixes", &self.res.schema.prefix_declarations()),
                ("related", &related),
                ("exemplar", &exemplar),
            ],
        )
    }

    pub async fn refine_query(&mut self, question: &str, failed: &SparqlAttempt) -> Result<Completion, ChainError> {
        if self.refined {
            return Err(ChainError::RefinementExhausted);
        }
        if !matches!(failed.status, AttemptStatus::OkEmpty | AttemptStatus::SyntaxError) {
            return Err(ChainError::RefinementPrecondition(failed.status));
        }
        self.refined = true;
        if self.res.store.is_empty() {
            self.observer.on_warning("refinement store is empty; refining without an exemplar");
        }
        let prompt = self.refinement_prompt(question, failed)?;
        self.complete("sparql_refinement", prompt).await
    }

    /// Runs a sanitized query and spills non-empty results.
    pub async fn execute_query(&self, query: &str) -> Result<(AttemptStatus, Option<SelectResults>, Option<String>), ChainError> {
        match self.res.endpoint.select(query).await {
            Ok(results) if is_effectively_empty(&results) => Ok((AttemptStatus::OkEmpty, Some(results), None)),
            Ok(results) => {
                write_spill(&self.spill_path, &results.to_csv()).await?;
                Ok((AttemptStatus::OkRows, Some(results), None))
            }
            Err(e @ EndpointError::Query(_)) => Ok((AttemptStatus::SyntaxError, None, Some(e.to_string()))),
            Err(e) => Ok((AttemptStatus::EndpointError, None, Some(e.to_string()))),
        }
    }

    async fn attempt(&self, index: u8, completion: Completion) -> Result<SparqlAttempt, ChainError> {
        let mut attempt = SparqlAttempt {
            attempt_index: index,
            raw_llm_output: completion.text,
            sanitized_query: None,
            status: AttemptStatus::SyntaxError,
            row_count: 0,
            spill_path: None,
            usage: completion.usage,
            violations: Vec::new(),
            error: None,
            results: None,
        };
        match sanitize_query(&attempt.raw_llm_output, &self.res.schema.inventory.prefixes) {
            Err(e) => attempt.error = Some(e.to_string()),
            Ok(query) => {
                attempt.violations = validate_schema_compliance(&query, &self.res.schema);
                for v in &attempt.violations {
                    let hint = v.suggestion.as_deref().map(|s| format!("; did you mean {s}?")).unwrap_or_default();
                    self.observer.on_warning(&format!("{:?} {} is not in the schema{hint}", v.role, v.iri));
                }
                let (status, results, error) = self.execute_query(&query).await?;
                attempt.sanitized_query = Some(query);
                attempt.status = status;
                attempt.error = error;
                if status == AttemptStatus::OkRows {
                    attempt.row_count = results.as_ref().map_or(0, SelectResults::len);
                    attempt.spill_path = Some(self.spill_path.clone());
                }
                attempt.results = results;
            }
        }
        self.observer.on_attempt(&attempt);
        Ok(attempt)
    }

    pub fn diagnose_empty(first: &SparqlAttempt, second: &SparqlAttempt) -> Result<Diagnosis, ChainError> {
        if first.has_rows() {
            return Err(ChainError::DiagnosisPrecondition);
        }
        Ok(match second.status {
            AttemptStatus::OkRows => Diagnosis::Resolved,
            AttemptStatus::OkEmpty => Diagnosis::DataAbsent,
            AttemptStatus::SyntaxError | AttemptStatus::EndpointError => Diagnosis::ConstructionError,
        })
    }

    /// Generate, execute, and refine once if the first query was empty or
    /// unusable.
    pub async fn run(&mut self, question: &str, entities: &[ResolvedEntity]) -> Result<ChainOutcome, ChainError> {
        let completion = self.generate_query(question, entities).await?;
        let first = self.attempt(1, completion).await?;
        if !matches!(first.status, AttemptStatus::OkEmpty | AttemptStatus::SyntaxError) {
            return Ok(ChainOutcome { attempts: vec![first], diagnosis: None });
        }
        let completion = self.refine_query(question, &first).await?;
        let second = self.attempt(2, completion).await?;
        let diagnosis = Self::diagnose_empty(&first, &second)?;
        Ok(ChainOutcome { attempts: vec![first, second], diagnosis: Some(diagnosis) })
    }

    async fn complete(&self, purpose: &str, prompt: String) -> Result<Completion, ChainError> {
        let request = ChatRequest::new(self.res.model_ref.clone(), vec![ChatMessage::user(prompt)]);
        let completion = self.res.gateway.complete(&request).await?;
        self.observer.on_completion(purpose, &completion);
        Ok(completion)
    }
}

/// No rows, or a single row whose cells are all unbound or numeric zero (an
/// aggregate over nothing, such as `COUNT` on a failed match).
pub fn is_effectively_empty(results: &SelectResults) -> bool {
    match results.rows.as_slice() {
        [] => true,
        [row] => row.iter().all(|cell| match cell {
            None => true,
            Some(term) => term.value().trim().parse::<f64>().is_ok_and(|v| v == 0.0),
        }),
        _ => false,
    }
}

async fn write_spill(path: &Path, csv: &str) -> Result<(), ChainError> {
    let err = |e: std::io::Error| ChainError::Spill { path: path.display().to_string(), message: e.to_string() };
    if let Some(dir) = path.parent() {
        tokio::fs::create_dir_all(dir).await.map_err(err)?;
    }
    tokio::fs::write(path, csv).await.map_err(err)
}

/// The resolved-entity section of the generation prompt; empty when there
/// are no entities.
pub fn entity_block(entities: &[ResolvedEntity]) -> String {
    if entities.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nResolved entities (use these identifiers exactly):\n");
    for e in entities {
        let id = match e.kind {
            EntityKind::Structure => format!("InChIKey \"{}\"", e.identifier),
            _ => format!("<{}>", e.identifier),
        };
        out.push_str(&format!("- {} ({}): {id}\n", e.surface, e.kind));
    }
    out
}

/// What a downstream prompt may see of a result set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultPayload {
    Inline { csv: String, row_count: usize },
    Spilled { path: PathBuf, row_count: usize, columns: Vec<String> },
}

impl ResultPayload {
    /// Inline rows iff query, question and CSV text fit the result budget.
    pub fn decide(
        counter: &dyn TokenCounter,
        question: &str,
        query: &str,
        results: &SelectResults,
        spill_path: &Path,
    ) -> Self {
        Self::from_csv(counter, question, query, results.to_csv(), results.len(), results.variables.clone(), spill_path)
    }

    /// Same rule applied to CSV text already on disk.
    pub fn from_csv(
        counter: &dyn TokenCounter,
        question: &str,
        query: &str,
        csv: String,
        row_count: usize,
        columns: Vec<String>,
        spill_path: &Path,
    ) -> Self {
        if within_result_budget(counter, query, question, &csv) {
            ResultPayload::Inline { csv, row_count }
        } else {
            ResultPayload::Spilled { path: spill_path.to_owned(), row_count, columns }
        }
    }

    pub fn is_inline(&self) -> bool {
        matches!(self, ResultPayload::Inline { .. })
    }

    pub fn row_count(&self) -> usize {
        match self {
            ResultPayload::Inline { row_count, .. } | ResultPayload::Spilled { row_count, .. } => *row_count,
        }
    }

    /// File name of the spilled CSV, as shown in prompts and answers.
    pub fn artifact_name(&self) -> Option<String> {
        match self {
            ResultPayload::Inline { .. } => None,
            ResultPayload::Spilled { path, .. } => {
                Some(path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()))
            }
        }
    }

    /// Text placed in prompts. Spilled results never include data rows.
    pub fn prompt_text(&self) -> String {
        match self {
            ResultPayload::Inline { csv, row_count } => format!("{row_count} rows (CSV):\n{csv}"),
            ResultPayload::Spilled { row_count, columns, .. } => format!(
                "{row_count} rows, too many to include here. They were saved to the CSV file {} with columns: {}.",
                self.artifact_name().unwrap_or_default(),
                columns.join(", ")
            ),
        }
    }

    /// Text shown to the user in the final answer.
    pub fn user_text(&self) -> String {
        match self {
            ResultPayload::Inline { csv, row_count } => format!("Results ({row_count} rows):\n{csv}"),
            ResultPayload::Spilled { row_count, .. } => format!(
                "The query returned {row_count} rows, which is too large to display here. Please {SPILL_NOTICE}: {}",
                self.artifact_name().unwrap_or_default()
            ),
        }
    }
}
