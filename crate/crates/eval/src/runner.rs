use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use metabokg_core::agents::{Ledger, NullSink, Runtime, SessionState, TraceEvent, TraceKind};
use metabokg_core::setup::{RuntimeSettings, SetupError};
use metabokg_core::sparql::chain::{NoopObserver, SparqlChain};
use metabokg_core::sparql::sanitize_query;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::classify_error;
use crate::dataset::EvalQuestion;
use crate::judge::{Judge, Judgement, LlmJudge, Verdict};
use crate::metrics::{EvalRecord, Exclusion};

/// What is being evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    /// The whole agent graph, from submission to the final answer.
    #[default]
    Pipeline,
    /// One generation completion with the schema and no entity resolution,
    /// from submission to the query text.
    SingleShot,
}

impl Configuration {
    pub fn as_str(&self) -> &'static str {
        match self {
            Configuration::Pipeline => "pipeline",
            Configuration::SingleShot => "single_shot",
        }
    }
}

/// Contents of an evaluation config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Report label; defaults to the configuration name.
    pub label: Option<String>,
    pub configuration: Configuration,
    /// Questions run at the same time, each in its own session.
    pub concurrency: usize,
    /// Ask the model when result sets differ or cannot be compared.
    pub llm_judge: bool,
    pub exclude: Vec<Exclusion>,
    pub runtime: RuntimeSettings,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            label: None,
            configuration: Configuration::Pipeline,
            concurrency: 1,
            llm_judge: false,
            exclude: Vec::new(),
            runtime: RuntimeSettings::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
}

impl EvalConfig {
    /// Reads a TOML config. Relative paths are taken from the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: shown.clone(), message: e.to_string() })?;
        let mut cfg: EvalConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?;
        cfg.runtime.relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.configuration.as_str().to_owned())
    }
}

/// One evaluated question with the trace it produced.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub record: EvalRecord,
    pub trace: Vec<TraceEvent>,
}

pub struct Runner {
    runtime: Runtime,
    judge: Judge,
    configuration: Configuration,
    label: String,
    concurrency: usize,
    work_dir: PathBuf,
}

impl Runner {
    pub fn new(runtime: Runtime, configuration: Configuration, label: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        let judge = Judge::new(runtime.resources().endpoint.clone());
        Self { runtime, judge, configuration, label: label.into(), concurrency: 1, work_dir: work_dir.into() }
    }

    /// Builds the runtime and judge described by `config`.
    pub fn from_config(config: &EvalConfig, work_dir: impl Into<PathBuf>) -> Result<Self, SetupError> {
        config.runtime.validate()?;
        let gateway = Arc::new(config.runtime.gateway()?);
        let runtime = config.runtime.runtime(gateway)?;
        let mut runner = Self::new(runtime, config.configuration, config.label(), work_dir).with_concurrency(config.concurrency);
        if config.llm_judge {
            runner = runner.with_llm_judge();
        }
        Ok(runner)
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn with_llm_judge(mut self) -> Self {
        let res = self.runtime.resources();
        self.judge = self.judge.with_llm(LlmJudge {
            gateway: res.gateway.clone(),
            prompts: res.prompts.clone(),
            model_ref: res.model_ref.clone(),
        });
        self
    }

    /// Runs one question in a fresh session. The refinement store never
    /// sees the question's own reference query.
    pub async fn run_question(&self, q: &EvalQuestion) -> Evaluated {
        let runtime = self.runtime.without_exemplar(&q.question);
        let dir = self.work_dir.join(&q.id);
        let mut state = SessionState::new(format!("eval-{}-{}", self.label, q.id));
        let (generated, latency, usage, problem) = match std::fs::create_dir_all(&dir) {
            Err(e) => (None, 0.0, Ledger::default(), Some(format!("cannot create {}: {e}", dir.display()))),
            Ok(()) => match self.configuration {
                Configuration::Pipeline => {
                    let start = Instant::now();
                    let outcome = runtime.run_turn(&mut state, &dir, &q.question, &NullSink).await;
                    let latency = start.elapsed().as_secs_f64();
                    let problem = outcome.retriable.map(|_| outcome.message.body.clone());
                    (last_generated_query(&state.trace), latency, state.ledger, problem)
                }
                Configuration::SingleShot => single_shot(&runtime, &dir, &q.question).await,
            },
        };
        let mut judgement = self.judge.judge_answer(&q.question, &q.reference_query, generated.as_deref()).await;
        if let (Verdict::NotGenerated, Some(p)) = (judgement.verdict, &problem) {
            judgement.rationale = format!("{} {p}", judgement.rationale);
        }
        let Judgement { verdict, rationale, stage, needs_review, .. } = judgement;
        let record = EvalRecord {
            question_id: q.id.clone(),
            config: self.label.clone(),
            complexity: q.complexity,
            question: q.question.clone(),
            generated_query: generated,
            verdict,
            error_type: classify_error(&state.trace, verdict, &q.entities),
            latency_secs: latency,
            usage,
            judge_stage: stage,
            judge_rationale: rationale,
            needs_review,
        };
        Evaluated { record, trace: state.trace }
    }

    /// Runs every question, up to the configured concurrency, and reports
    /// each result in dataset order as soon as it and its predecessors are
    /// done.
    pub async fn run_all(&self, questions: &[EvalQuestion], mut on_done: impl FnMut(&Evaluated)) -> Vec<Evaluated> {
        let mut out = Vec::with_capacity(questions.len());
        let mut results = stream::iter(questions).map(|q| self.run_question(q)).buffered(self.concurrency);
        while let Some(e) = results.next().await {
            tracing::info!(question = %e.record.question_id, verdict = %e.record.verdict, error = %e.record.error_type, "evaluated");
            on_done(&e);
            out.push(e);
        }
        out
    }
}

/// The last query the SPARQL runner executed in the trace.
pub fn last_generated_query(trace: &[TraceEvent]) -> Option<String> {
    trace
        .iter()
        .rev()
        .filter(|e| e.kind == TraceKind::QueryGenerated)
        .find_map(|e| e.payload.get("query").and_then(|q| q.as_str()).map(str::to_owned))
}

async fn single_shot(runtime: &Runtime, dir: &Path, question: &str) -> (Option<String>, f64, Ledger, Option<String>) {
    let res = runtime.resources().clone();
    let prefixes = res.schema.inventory.prefixes.clone();
    let chain = SparqlChain::new(res, dir, "1", Arc::new(NoopObserver));
    let mut usage = Ledger::default();
    let start = Instant::now();
    match chain.generate_query(question, &[]).await {
        Ok(c) => {
            let query = sanitize_query(&c.text, &prefixes).ok();
            let latency = start.elapsed().as_secs_f64();
            usage.add(&c.usage, 1);
            (query, latency, usage, None)
        }
        Err(e) => (None, start.elapsed().as_secs_f64(), usage, Some(e.to_string())),
    }
}
