use std::fmt;
use std::path::Path;
use std::str::FromStr;

use metabokg_core::agents::Mention;
use metabokg_core::resolvers::EntityKind;
use metabokg_core::sparql::check_query_syntax;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Low,
    Medium,
    High,
}

impl Complexity {
    pub const ALL: [Complexity; 3] = [Complexity::Low, Complexity::Medium, Complexity::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            Complexity::Low => "low",
            Complexity::Medium => "medium",
            Complexity::High => "high",
        }
    }
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Complexity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Complexity::Low),
            "medium" => Ok(Complexity::Medium),
            "high" => Ok(Complexity::High),
            other => Err(format!("unknown complexity {other:?}; expected low, medium or high")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub id: String,
    pub question: String,
    pub reference_query: String,
    pub complexity: Complexity,
    /// Entity mentions a correct run has to resolve. Read from the optional
    /// `entities` column as `kind:surface` pairs separated by `;`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<Mention>,
}

/// Rows are numbered from 1, not counting the header.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset header lacks the {0:?} column")]
    MissingColumn(&'static str),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row}: duplicate question id {id:?}")]
    DuplicateId { row: usize, id: String },
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalQuestion>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<EvalQuestion>, DatasetError> {
    if text.trim().is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DatasetError::Row { row: 0, message: e.to_string() })?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let question_col = col("question").ok_or(DatasetError::MissingColumn("question"))?;
    let query_col = col("reference_query").ok_or(DatasetError::MissingColumn("reference_query"))?;
    let complexity_col = col("complexity").ok_or(DatasetError::MissingColumn("complexity"))?;
    let id_col = col("id");
    let entities_col = col("entities");

    let mut out: Vec<EvalQuestion> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let err = |message: String| DatasetError::Row { row, message };
        let record = record.map_err(|e| err(e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("").trim().to_owned();
        let question = field(question_col);
        if question.is_empty() {
            return Err(err("empty question".into()));
        }
        let reference_query = field(query_col);
        check_query_syntax(&reference_query).map_err(|e| err(format!("reference query does not parse: {e}")))?;
        let complexity = field(complexity_col).parse().map_err(err)?;
        let id = id_col.map(field).filter(|s| !s.is_empty()).unwrap_or_else(|| format!("q{row:02}"));
        if out.iter().any(|q| q.id == id) {
            return Err(DatasetError::DuplicateId { row, id });
        }
        let entities = match entities_col {
            Some(c) => parse_entities(&field(c)).map_err(err)?,
            None => Vec::new(),
        };
        out.push(EvalQuestion { id, question, reference_query, complexity, entities });
    }
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

fn parse_entities(cell: &str) -> Result<Vec<Mention>, String> {
    cell.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (kind, surface) = pair.split_once(':').ok_or_else(|| format!("entity {pair:?} is not kind:surface"))?;
            let kind = EntityKind::from_tag(kind).ok_or_else(|| format!("unknown entity kind {kind:?}"))?;
            Ok(Mention { text: surface.trim().to_owned(), kind })
        })
        .collect()
}
