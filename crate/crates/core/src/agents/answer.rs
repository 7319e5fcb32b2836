use crate::resolvers::{EntityKind, ResolvedEntity};
use crate::sparql::{ResultPayload, DATA_ABSENT_MESSAGE};

pub const QUERY_HEADING: &str = "Here is the generated SPARQL query used:";

/// Resolved entities as prompt and answer lines; `(none)` when empty.
pub fn entity_lines(entities: &[ResolvedEntity]) -> String {
    if entities.is_empty() {
        return "(none)".into();
    }
    entities
        .iter()
        .map(|e| {
            let id = match e.kind {
                EntityKind::Structure => format!("InChIKey {}", e.identifier),
                _ => e.identifier.clone(),
            };
            format!("- {} ({}): {id}\n", e.surface, e.kind)
        })
        .collect()
}

pub struct AnswerParts<'a> {
    pub lead: &'a str,
    pub entities: &'a [ResolvedEntity],
    pub payload: Option<&'a ResultPayload>,
    pub data_absent: bool,
    pub interpretation: Option<&'a str>,
    pub errors: &'a [String],
    pub query: Option<&'a str>,
}

/// Final answer text. Sections appear in a fixed order and empty ones are
/// left out.
pub fn compose_answer(p: &AnswerParts<'_>) -> String {
    let mut sections: Vec<String> = Vec::new();
    let lead = p.lead.trim();
    if !lead.is_empty() {
        sections.push(lead.to_owned());
    }
    if !p.entities.is_empty() {
        sections.push(format!("Resolved entities:\n{}", entity_lines(p.entities).trim_end()));
    }
    if let Some(payload) = p.payload {
        sections.push(payload.user_text().trim_end().to_owned());
    }
    if p.data_absent {
        sections.push(DATA_ABSENT_MESSAGE.to_owned());
    }
    if let Some(i) = p.interpretation.map(str::trim).filter(|i| !i.is_empty() && *i != lead) {
        sections.push(i.to_owned());
    }
    if !p.errors.is_empty() {
        let lines: Vec<String> = p.errors.iter().map(|e| format!("- {e}")).collect();
        sections.push(format!("Problems encountered:\n{}", lines.join("\n")));
    }
    if let Some(q) = p.query {
        sections.push(format!("{QUERY_HEADING}\n```sparql\n{}\n```", q.trim()));
    }
    if sections.is_empty() {
        return "No answer was produced.".into();
    }
    sections.join("\n\n")
}
