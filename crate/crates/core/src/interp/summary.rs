use std::path::Path;

use crate::llm::{ChatMessage, ChatRequest, Completion, Gateway};
use crate::prompts::{self, PromptLibrary};
use crate::sparql::chain::ResultPayload;

use super::{io_error, InterpError};

/// The interpreter prompt for a spilled result. Rows are included only
/// when question, query and CSV text fit the result budget.
pub fn summary_prompt(
    prompts: &PromptLibrary,
    gateway: &Gateway,
    spill_path: &Path,
    question: &str,
    query: &str,
    request: &str,
) -> Result<(String, ResultPayload), InterpError> {
    let csv = std::fs::read_to_string(spill_path).map_err(|e| io_error(spill_path, e))?;
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let columns: Vec<String> = reader.headers().map_err(|e| io_error(spill_path, e))?.iter().map(str::to_owned).collect();
    let row_count = reader.records().count();
    let counter = gateway.token_counter();
    let payload = ResultPayload::from_csv(counter.as_ref(), question, query, csv, row_count, columns, spill_path);
    let prompt = prompts.render(
        prompts::INTERPRETER,
        &[("question", question), ("request", request), ("query", query), ("results", &payload.prompt_text())],
    )?;
    Ok((prompt, payload))
}

/// One completion summarizing the results in `spill_path`.
pub async fn summarize_results(
    prompts: &PromptLibrary,
    gateway: &Gateway,
    model_ref: &str,
    spill_path: &Path,
    question: &str,
    query: &str,
    request: &str,
) -> Result<(Completion, ResultPayload), InterpError> {
    let (prompt, payload) = summary_prompt(prompts, gateway, spill_path, question, query, request)?;
    let request = ChatRequest::new(model_ref, vec![ChatMessage::user(prompt)]);
    Ok((gateway.complete(&request).await?, payload))
}
