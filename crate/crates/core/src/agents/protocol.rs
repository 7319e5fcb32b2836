//! JSON replies expected from each agent prompt.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::resolvers::EntityKind;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("cannot parse {agent} reply: {message}")]
pub struct ProtocolError {
    pub agent: &'static str,
    pub message: String,
}

fn perr(agent: &'static str, message: impl Into<String>) -> ProtocolError {
    ProtocolError { agent, message: message.into() }
}

/// The first balanced `{...}` in `text`, ignoring braces inside strings.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' if start.is_some() => in_string = true,
            b'{' => {
                start.get_or_insert(i);
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    return start.map(|s| &text[s..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_object(agent: &'static str, text: &str) -> Result<serde_json::Map<String, Value>, ProtocolError> {
    let raw = extract_json_object(text).ok_or_else(|| perr(agent, "no JSON object in reply"))?;
    match serde_json::from_str(raw) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(perr(agent, "reply is not a JSON object")),
        Err(e) => Err(perr(agent, e.to_string())),
    }
}

fn str_field<'a>(map: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a str> {
    map.get(key).and_then(Value::as_str).map(str::trim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NewKnowledge,
    HelpMeUnderstand,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::NewKnowledge => "new_knowledge",
            Classification::HelpMeUnderstand => "help_me_understand",
        }
    }
}

pub fn parse_classification(text: &str) -> Result<Classification, ProtocolError> {
    let map = parse_object("entry", text)?;
    match str_field(&map, "classification").map(str::to_ascii_lowercase).as_deref() {
        Some("new_knowledge") => Ok(Classification::NewKnowledge),
        Some("help_me_understand") => Ok(Classification::HelpMeUnderstand),
        other => Err(perr("entry", format!("unknown classification {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorReply {
    pub valid: bool,
    pub feedback: String,
    pub plants: Vec<String>,
}

pub fn parse_validator(text: &str) -> Result<ValidatorReply, ProtocolError> {
    let map = parse_object("validator", text)?;
    let valid = match str_field(&map, "verdict").map(str::to_ascii_lowercase).as_deref() {
        Some("valid") => true,
        Some("invalid") => false,
        other => return Err(perr("validator", format!("unknown verdict {other:?}"))),
    };
    let plants = match map.get("plants") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::to_owned)
            .collect(),
        Some(_) => return Err(perr("validator", "plants is not a list")),
    };
    Ok(ValidatorReply { valid, feedback: str_field(&map, "feedback").unwrap_or_default().to_owned(), plants })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub text: String,
    pub kind: EntityKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Directive {
    ToKg { mentions: Vec<Mention> },
    ToSparqlRunner,
    ToInterpreter { request: String },
    Finish { answer: String },
}

/// A supervisor directive plus the mentions dropped for carrying an
/// unknown kind tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDirective {
    pub directive: Directive,
    pub dropped: Vec<(String, String)>,
}

pub fn parse_directive(text: &str) -> Result<ParsedDirective, ProtocolError> {
    let map = parse_object("supervisor", text)?;
    let action = str_field(&map, "action").map(str::to_ascii_lowercase);
    let mut dropped = Vec::new();
    let directive = match action.as_deref() {
        Some("kg") => {
            let items = map.get("mentions").and_then(Value::as_array).ok_or_else(|| perr("supervisor", "kg action without mentions"))?;
            let mut mentions = Vec::new();
            for item in items {
                let text = item.get("text").and_then(Value::as_str).map(str::trim).unwrap_or_default();
                let tag = item.get("kind").and_then(Value::as_str).unwrap_or_default();
                match EntityKind::from_tag(tag) {
                    Some(kind) if !text.is_empty() => mentions.push(Mention { text: text.to_owned(), kind }),
                    _ => dropped.push((text.to_owned(), tag.to_owned())),
                }
            }
            Directive::ToKg { mentions }
        }
        Some("sparql") => Directive::ToSparqlRunner,
        Some("interpret") => Directive::ToInterpreter { request: str_field(&map, "request").unwrap_or_default().to_owned() },
        Some("finish") => Directive::Finish { answer: str_field(&map, "answer").unwrap_or_default().to_owned() },
        other => return Err(perr("supervisor", format!("unknown action {other:?}"))),
    };
    Ok(ParsedDirective { directive, dropped })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub input: String,
}

pub fn parse_tool_calls(text: &str) -> Result<Vec<ToolCall>, ProtocolError> {
    let map = parse_object("kg", text)?;
    let items = map.get("calls").and_then(Value::as_array).ok_or_else(|| perr("kg", "no calls list"))?;
    items
        .iter()
        .map(|c| {
            let tool = c.get("tool").and_then(Value::as_str).map(str::trim).unwrap_or_default();
            let input = c.get("input").and_then(Value::as_str).map(str::trim).unwrap_or_default();
            if tool.is_empty() {
                Err(perr("kg", "call without a tool"))
            } else {
                Ok(ToolCall { tool: tool.to_owned(), input: input.to_owned() })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunnerPlan {
    Graph { question: String },
    Wikidata { question: String, taxon: String },
}

pub fn parse_runner(text: &str) -> Result<RunnerPlan, ProtocolError> {
    let map = parse_object("sparql_runner", text)?;
    let question = str_field(&map, "question").unwrap_or_default().to_owned();
    if question.is_empty() {
        return Err(perr("sparql_runner", "empty question"));
    }
    match str_field(&map, "tool") {
        Some(crate::agents::tools::GRAPH_SPARQL_CHAIN) => Ok(RunnerPlan::Graph { question }),
        Some(crate::agents::tools::WIKIDATA_STRUCTURE_SEARCH) => {
            let taxon = str_field(&map, "taxon").unwrap_or_default().to_owned();
            if taxon.is_empty() {
                return Err(perr("sparql_runner", "wikidata search without a taxon"));
            }
            Ok(RunnerPlan::Wikidata { question, taxon })
        }
        other => Err(perr("sparql_runner", format!("unknown tool {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_first_object_around_prose() {
        assert_eq!(extract_json_object("Sure: {\"a\": \"}{\"} trailing {\"b\":1}"), Some("{\"a\": \"}{\"}"));
        assert_eq!(extract_json_object("```json\n{\"a\": {\"b\": 1}}\n```"), Some("{\"a\": {\"b\": 1}}"));
        assert_eq!(extract_json_object("no json"), None);
        assert_eq!(extract_json_object("{\"unterminated\": 1"), None);
    }

    #[test]
    fn classification() {
        assert_eq!(parse_classification(r#"{"classification": "help_me_understand"}"#).unwrap(), Classification::HelpMeUnderstand);
        assert!(parse_classification(r#"{"classification": "other"}"#).is_err());
    }

    #[test]
    fn validator_reply() {
        let r = parse_validator(r#"{"verdict":"Valid","feedback":"","plants":["Tabernaemontana coffeoides", " "]}"#).unwrap();
        assert!(r.valid);
        assert_eq!(r.plants, ["Tabernaemontana coffeoides"]);
        assert!(!parse_validator(r#"{"verdict":"invalid","feedback":"off topic"}"#).unwrap().valid);
    }

    #[test]
    fn unknown_mention_kinds_are_dropped() {
        let p = parse_directive(
            r#"{"action":"kg","mentions":[{"text":"Leishmania donovani","kind":"target"},{"text":"malaria","kind":"disease"}]}"#,
        )
        .unwrap();
        assert_eq!(p.directive, Directive::ToKg { mentions: vec![Mention { text: "Leishmania donovani".into(), kind: EntityKind::Target }] });
        assert_eq!(p.dropped, [("malaria".to_owned(), "disease".to_owned())]);
    }

    #[test]
    fn other_directives() {
        assert_eq!(parse_directive(r#"{"action":"sparql"}"#).unwrap().directive, Directive::ToSparqlRunner);
        assert_eq!(
            parse_directive(r#"{"action":"interpret","request":"plot"}"#).unwrap().directive,
            Directive::ToInterpreter { request: "plot".into() }
        );
        assert!(parse_directive(r#"{"action":"dance"}"#).is_err());
        assert!(parse_directive("I think we should query").is_err());
    }

    #[test]
    fn runner_and_tool_calls() {
        assert_eq!(parse_runner(r#"{"tool":"graph_sparql_chain","question":"q"}"#).unwrap(), RunnerPlan::Graph { question: "q".into() });
        assert!(parse_runner(r#"{"tool":"wikidata_structure_search","question":"q"}"#).is_err());
        let calls = parse_tool_calls(r#"{"calls":[{"tool":"taxon_resolver","input":"x"}]}"#).unwrap();
        assert_eq!(calls[0].tool, "taxon_resolver");
    }
}
