//! Prompt templates keyed by prompt reference.
//!
//! Built-in templates are compiled in; a directory of `<prompt_ref>.txt`
//! files can override any of them at startup. Placeholders are `{{name}}`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

pub const ENTRY: &str = "entry";
pub const VALIDATOR: &str = "validator";
pub const SUPERVISOR: &str = "supervisor";
pub const KG_AGENT: &str = "kg_agent";
pub const SPARQL_RUNNER: &str = "sparql_runner";
pub const SPARQL_GENERATION: &str = "sparql_generation";
pub const SPARQL_REFINEMENT: &str = "sparql_refinement";
pub const INTERPRETER: &str = "interpreter";
pub const JUDGE: &str = "judge";

const BUILTIN: [(&str, &str); 9] = [
    (ENTRY, include_str!("../prompts/entry.txt")),
    (VALIDATOR, include_str!("../prompts/validator.txt")),
    (SUPERVISOR, include_str!("../prompts/supervisor.txt")),
    (KG_AGENT, include_str!("../prompts/kg_agent.txt")),
    (SPARQL_RUNNER, include_str!("../prompts/sparql_runner.txt")),
    (SPARQL_GENERATION, include_str!("../prompts/sparql_generation.txt")),
    (SPARQL_REFINEMENT, include_str!("../prompts/sparql_refinement.txt")),
    (INTERPRETER, include_str!("../prompts/interpreter.txt")),
    (JUDGE, include_str!("../prompts/judge.txt")),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt template {0:?}")]
    Unknown(String),
    #[error("template {template:?} has no value for placeholder {name:?}")]
    MissingValue { template: String, name: String },
    #[error("unterminated placeholder in template {0:?}")]
    Unterminated(String),
    #[error("cannot read prompt directory {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self { templates: BUILTIN.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect() }
    }

    /// Built-ins overridden by every `*.txt` file in `dir`.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| PromptError::Io { path: dir.display().to_string(), message: e.to_string() };
        let mut lib = Self::builtin();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            lib.templates.insert(stem.to_owned(), std::fs::read_to_string(&path).map_err(io)?);
        }
        Ok(lib)
    }

    pub fn insert(&mut self, prompt_ref: impl Into<String>, template: impl Into<String>) {
        self.templates.insert(prompt_ref.into(), template.into());
    }

    pub fn contains(&self, prompt_ref: &str) -> bool {
        self.templates.contains_key(prompt_ref)
    }

    pub fn render(&self, prompt_ref: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let template = self.templates.get(prompt_ref).ok_or_else(|| PromptError::Unknown(prompt_ref.to_owned()))?;
        let mut out = String::with_capacity(template.len());
        let mut rest = template.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| PromptError::Unterminated(prompt_ref.to_owned()))?;
            let name = after[..close].trim();
            let value = values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| {
                PromptError::MissingValue { template: prompt_ref.to_owned(), name: name.to_owned() }
            })?;
            out.push_str(value);
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
