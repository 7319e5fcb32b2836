//! Benchmark harness: load a question set, run it through the agent graph
//! or a single generation call, judge the queries and aggregate accuracy,
//! latency and cost per complexity stratum.

pub mod classify;
pub mod dataset;
pub mod judge;
pub mod metrics;
pub mod runner;

pub use classify::{classify_error, ErrorType};
pub use dataset::{load_dataset, parse_dataset, Complexity, DatasetError, EvalQuestion};
pub use judge::{result_sets_equal, Judge, JudgeStage, Judgement, LlmJudge, Verdict};
pub use metrics::{aggregate_metrics, Accuracy, AggregateError, EvalRecord, EvalReport, Exclusion, StratumReport};
pub use runner::{last_generated_query, Configuration, ConfigError, EvalConfig, Evaluated, Runner};
