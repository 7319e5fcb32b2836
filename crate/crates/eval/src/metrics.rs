use std::collections::BTreeMap;
use std::fmt::Write;

use metabokg_core::agents::Ledger;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ErrorType;
use crate::dataset::Complexity;
use crate::judge::{JudgeStage, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub config: String,
    pub complexity: Complexity,
    pub question: String,
    pub generated_query: Option<String>,
    pub verdict: Verdict,
    pub error_type: ErrorType,
    pub latency_secs: f64,
    pub usage: Ledger,
    pub judge_stage: JudgeStage,
    pub judge_rationale: String,
    pub needs_review: bool,
}

impl EvalRecord {
    /// Checks that verdict and error type agree.
    pub fn check(&self) -> Result<(), String> {
        match (self.verdict, self.error_type) {
            (Verdict::Correct, ErrorType::None) => Ok(()),
            (Verdict::Correct, e) => Err(format!("{}: correct but labelled {e}", self.question_id)),
            (_, ErrorType::None) => Err(format!("{}: {} without an error type", self.question_id, self.verdict)),
            (Verdict::NotGenerated, ErrorType::T1 | ErrorType::T3) => Ok(()),
            (Verdict::NotGenerated, e) => Err(format!("{}: not_generated labelled {e}", self.question_id)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub counted: usize,
    /// `None` when nothing was counted.
    pub percent: Option<f64>,
}

impl Accuracy {
    fn new(correct: usize, counted: usize) -> Self {
        let percent = (counted > 0).then(|| 100.0 * correct as f64 / counted as f64);
        Self { correct, counted, percent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub total: usize,
    pub excluded: usize,
    /// Excluded questions removed from the denominator.
    pub accuracy: Accuracy,
    /// Every question counted, excluded ones included.
    pub accuracy_without_exclusion: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: String,
    pub total: usize,
    pub excluded: Vec<Exclusion>,
    /// Configured exclusions that name no record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmatched_exclusions: Vec<Exclusion>,
    pub overall: Accuracy,
    pub overall_without_exclusion: Accuracy,
    pub strata: BTreeMap<Complexity, StratumReport>,
    pub mean_latency_secs: f64,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    pub mean_total_tokens: f64,
    pub mean_cost: f64,
    pub verdicts: BTreeMap<Verdict, usize>,
    pub error_types: BTreeMap<ErrorType, usize>,
    pub needs_review: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("no records to aggregate")]
    Empty,
}

fn n_correct<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> usize {
    records.filter(|r| r.verdict == Verdict::Correct).count()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Accuracy per stratum and overall, and means over the records that are
/// not excluded. The first record's configuration labels the report.
pub fn aggregate_metrics(records: &[EvalRecord], exclusions: &[Exclusion]) -> Result<EvalReport, AggregateError> {
    let first = records.first().ok_or(AggregateError::Empty)?;
    let is_excluded = |r: &EvalRecord| exclusions.iter().any(|x| x.id == r.question_id);
    let included: Vec<&EvalRecord> = records.iter().filter(|r| !is_excluded(r)).collect();

    let mut strata = BTreeMap::new();
    for c in Complexity::ALL {
        let all: Vec<&EvalRecord> = records.iter().filter(|r| r.complexity == c).collect();
        let kept: Vec<&EvalRecord> = all.iter().copied().filter(|r| !is_excluded(r)).collect();
        strata.insert(
            c,
            StratumReport {
                total: all.len(),
                excluded: all.len() - kept.len(),
                accuracy: Accuracy::new(n_correct(kept.iter().copied()), kept.len()),
                accuracy_without_exclusion: Accuracy::new(n_correct(all.iter().copied()), all.len()),
            },
        );
    }

    let (excluded, unmatched) =
        exclusions.iter().cloned().partition(|x| records.iter().any(|r| r.question_id == x.id));
    let mut verdicts = BTreeMap::new();
    let mut error_types = BTreeMap::new();
    for r in &included {
        *verdicts.entry(r.verdict).or_insert(0) += 1;
        *error_types.entry(r.error_type).or_insert(0) += 1;
    }
    Ok(EvalReport {
        config: first.config.clone(),
        total: records.len(),
        excluded,
        unmatched_exclusions: unmatched,
        overall: Accuracy::new(n_correct(included.iter().copied()), included.len()),
        overall_without_exclusion: Accuracy::new(n_correct(records.iter()), records.len()),
        strata,
        mean_latency_secs: mean(included.iter().map(|r| r.latency_secs)),
        mean_prompt_tokens: mean(included.iter().map(|r| r.usage.prompt_tokens as f64)),
        mean_completion_tokens: mean(included.iter().map(|r| r.usage.completion_tokens as f64)),
        mean_total_tokens: mean(included.iter().map(|r| r.usage.total_tokens as f64)),
        mean_cost: mean(included.iter().map(|r| r.usage.estimated_cost)),
        verdicts,
        error_types,
        needs_review: records.iter().filter(|r| r.needs_review).map(|r| r.question_id.clone()).collect(),
    })
}

fn pct(a: &Accuracy) -> String {
    match a.percent {
        Some(p) => format!("{p:6.2}% ({}/{})", a.correct, a.counted),
        None => "     - (0/0)".into(),
    }
}

impl EvalReport {
    /// Plain-text summary for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "configuration: {}", self.config);
        let _ = writeln!(out, "{:<10} {:>6} {:>9}  {:<20} {:<20}", "stratum", "total", "excluded", "accuracy", "with excluded");
        for (c, s) in &self.strata {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>9}  {:<20} {:<20}",
                c.as_str(),
                s.total,
                s.excluded,
                pct(&s.accuracy),
                pct(&s.accuracy_without_exclusion)
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>9}  {:<20} {:<20}",
            "overall",
            self.total,
            self.excluded.len(),
            pct(&self.overall),
            pct(&self.overall_without_exclusion)
        );
        let _ = writeln!(
            out,
            "mean latency {:.2} s, mean tokens {:.1}, mean cost ${:.4}",
            self.mean_latency_secs, self.mean_total_tokens, self.mean_cost
        );
        let errors: Vec<String> =
            self.error_types.iter().filter(|(e, _)| **e != ErrorType::None).map(|(e, n)| format!("{e}={n}")).collect();
        let _ = writeln!(out, "errors: {}", if errors.is_empty() { "none".into() } else { errors.join(" ") });
        for x in &self.excluded {
            let _ = writeln!(out, "excluded {}: {}", x.id, x.reason);
        }
        if !self.needs_review.is_empty() {
            let _ = writeln!(out, "needs review: {}", self.needs_review.join(", "));
        }
        out
    }
}
