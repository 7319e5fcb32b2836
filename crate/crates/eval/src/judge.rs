use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use metabokg_core::agents::extract_json_object;
use metabokg_core::llm::{ChatMessage, ChatRequest, Gateway};
use metabokg_core::prompts::{self, PromptLibrary};
use metabokg_core::sparql::{RdfTerm, SelectResults, SparqlEndpoint};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    NotGenerated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
            Verdict::NotGenerated => "not_generated",
        })
    }
}

/// Which stage produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeStage {
    /// Nothing to judge.
    None,
    ResultSet,
    Llm,
    /// Results differed or could not be compared and no LLM judge was
    /// available.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub verdict: Verdict,
    pub rationale: String,
    pub stage: JudgeStage,
    /// Set for every verdict not backed by equal result sets.
    pub needs_review: bool,
    /// Either query could not be executed.
    pub endpoint_failed: bool,
}

/// One comparable cell. Blank node labels are local to a result set, so
/// all blank nodes compare equal.
fn cell_key(term: &Option<RdfTerm>) -> String {
    match term {
        None => "unbound".into(),
        Some(RdfTerm::Uri { value }) => format!("uri:{value}"),
        Some(RdfTerm::Bnode { .. }) => "bnode".into(),
        Some(RdfTerm::Literal { value, datatype, lang }) => format!(
            "lit:{value}^^{}@{}",
            datatype.as_deref().unwrap_or(""),
            lang.as_deref().map(str::to_ascii_lowercase).unwrap_or_default()
        ),
    }
}

fn multiset(rows: impl Iterator<Item = Vec<String>>) -> BTreeMap<Vec<String>, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(r).or_insert(0) += 1;
    }
    m
}

/// Multiset equality of bindings, ignoring row order.
///
/// Single-column results ignore the column name. Wider results align
/// columns by name when both sides project the same names and by position
/// otherwise.
pub fn result_sets_equal(a: &SelectResults, b: &SelectResults) -> bool {
    if a.variables.len() != b.variables.len() || a.rows.len() != b.rows.len() {
        return false;
    }
    let keyed = |r: &SelectResults, order: &[usize]| {
        multiset(r.rows.iter().map(|row| order.iter().map(|&i| cell_key(row.get(i).unwrap_or(&None))).collect()))
    };
    let identity: Vec<usize> = (0..a.variables.len()).collect();
    let mut names_a = a.variables.clone();
    let mut names_b = b.variables.clone();
    names_a.sort();
    names_b.sort();
    let b_order: Vec<usize> = if a.variables.len() > 1 && names_a == names_b {
        a.variables.iter().map(|v| b.variables.iter().position(|w| w == v).expect("same names")).collect()
    } else {
        identity.clone()
    };
    keyed(a, &identity) == keyed(b, &b_order)
}

#[derive(Deserialize)]
struct JudgeReply {
    verdict: String,
    #[serde(default)]
    rationale: String,
}

/// LLM fallback for the judge.
#[derive(Clone)]
pub struct LlmJudge {
    pub gateway: Arc<Gateway>,
    pub prompts: Arc<PromptLibrary>,
    pub model_ref: String,
}

#[derive(Clone)]
pub struct Judge {
    endpoint: Arc<dyn SparqlEndpoint>,
    llm: Option<LlmJudge>,
}

impl Judge {
    pub fn new(endpoint: Arc<dyn SparqlEndpoint>) -> Self {
        Self { endpoint, llm: None }
    }

    pub fn with_llm(mut self, llm: LlmJudge) -> Self {
        self.llm = Some(llm);
        self
    }

    pub async fn judge_answer(&self, question: &str, reference: &str, generated: Option<&str>) -> Judgement {
        let Some(generated) = generated.filter(|g| !g.trim().is_empty()) else {
            return Judgement {
                verdict: Verdict::NotGenerated,
                rationale: "No query was generated.".into(),
                stage: JudgeStage::None,
                needs_review: false,
                endpoint_failed: false,
            };
        };
        let reference_rows = self.endpoint.select(reference).await;
        let generated_rows = self.endpoint.select(generated).await;
        let (notes, endpoint_failed) = match (&reference_rows, &generated_rows) {
            (Ok(r), Ok(g)) => {
                if result_sets_equal(r, g) {
                    return Judgement {
                        verdict: Verdict::Correct,
                        rationale: format!("Both queries return the same {} row(s).", r.len()),
                        stage: JudgeStage::ResultSet,
                        needs_review: false,
                        endpoint_failed: false,
                    };
                }
                (
                    format!(
                        "The result sets differ: reference returned {} row(s) over {:?}, generated returned {} row(s) over {:?}.",
                        r.len(),
                        r.variables,
                        g.len(),
                        g.variables
                    ),
                    false,
                )
            }
            (Err(e), _) => (format!("The reference query could not be executed: {e}."), true),
            (Ok(_), Err(e)) => (format!("The generated query could not be executed: {e}."), true),
        };
        match &self.llm {
            Some(llm) => self.ask_llm(llm, question, reference, generated, &notes, endpoint_failed).await,
            None => Judgement {
                verdict: Verdict::Incorrect,
                rationale: notes,
                stage: JudgeStage::Fallback,
                needs_review: endpoint_failed,
                endpoint_failed,
            },
        }
    }

    async fn ask_llm(
        &self,
        llm: &LlmJudge,
        question: &str,
        reference: &str,
        generated: &str,
        notes: &str,
        endpoint_failed: bool,
    ) -> Judgement {
        let failed = |rationale: String| Judgement {
            verdict: Verdict::Incorrect,
            rationale,
            stage: JudgeStage::Fallback,
            needs_review: true,
            endpoint_failed,
        };
        let prompt = match llm.prompts.render(
            prompts::JUDGE,
            &[("question", question), ("reference", reference), ("generated", generated), ("notes", notes)],
        ) {
            Ok(p) => p,
            Err(e) => return failed(format!("{notes} The judge prompt failed: {e}.")),
        };
        let request = ChatRequest::new(llm.model_ref.clone(), vec![ChatMessage::user(prompt)]);
        let text = match llm.gateway.complete(&request).await {
            Ok(c) => c.text,
            Err(e) => return failed(format!("{notes} The LLM judge failed: {e}.")),
        };
        let reply = extract_json_object(&text).and_then(|j| serde_json::from_str::<JudgeReply>(j).ok());
        match reply {
            Some(r) if r.verdict.trim().eq_ignore_ascii_case("correct") => Judgement {
                verdict: Verdict::Correct,
                rationale: r.rationale,
                stage: JudgeStage::Llm,
                needs_review: true,
                endpoint_failed,
            },
            Some(r) => Judgement {
                verdict: Verdict::Incorrect,
                rationale: r.rationale,
                stage: JudgeStage::Llm,
                needs_review: true,
                endpoint_failed,
            },
            None => failed(format!("{notes} The LLM judge reply was not understood.")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(vars: &[&str], rows: &[&[&str]]) -> SelectResults {
        SelectResults {
            variables: vars.iter().map(|v| v.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|c| Some(RdfTerm::literal(*c))).collect()).collect(),
        }
    }

    #[test]
    fn single_column_ignores_name_and_order() {
        assert!(result_sets_equal(&rs(&["n"], &[&["1"], &["2"]]), &rs(&["count"], &[&["2"], &["1"]])));
    }

    #[test]
    fn duplicates_matter() {
        assert!(!result_sets_equal(&rs(&["n"], &[&["1"], &["1"]]), &rs(&["n"], &[&["1"], &["2"]])));
    }

    #[test]
    fn multi_column_by_name_then_position() {
        let a = rs(&["x", "y"], &[&["1", "a"]]);
        assert!(result_sets_equal(&a, &rs(&["y", "x"], &[&["a", "1"]])));
        assert!(result_sets_equal(&a, &rs(&["p", "q"], &[&["1", "a"]])));
        assert!(!result_sets_equal(&a, &rs(&["p", "q"], &[&["a", "1"]])));
        assert!(!result_sets_equal(&a, &rs(&["x"], &[&["1"]])));
    }

    #[test]
    fn literal_datatype_counts() {
        let typed = SelectResults {
            variables: vec!["n".into()],
            rows: vec![vec![Some(RdfTerm::Literal {
                value: "3".into(),
                datatype: Some("http://www.w3.org/2001/XMLSchema#integer".into()),
                lang: None,
            })]],
        };
        assert!(!result_sets_equal(&typed, &rs(&["n"], &[&["3"]])));
        assert!(!result_sets_equal(&rs(&["n"], &[&["3"]]), &SelectResults {
            variables: vec!["n".into()],
            rows: vec![vec![Some(RdfTerm::uri("3"))]],
        }));
    }
}
