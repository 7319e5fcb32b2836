//! SPARQL 1.1 Protocol access.
//!
//! [`HttpSparqlEndpoint`] talks to any remote endpoint and requests JSON
//! results. [`MemoryEndpoint`] evaluates queries against an in-process graph
//! and backs the bundled fixtures.

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use oxigraph::io::RdfFormat;
use oxigraph::model::Term;
use oxigraph::sparql::{QueryResults, SparqlEvaluator};
use oxigraph::store::Store;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One RDF term as it appears in SPARQL JSON results.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RdfTerm {
    Uri {
        value: String,
    },
    #[serde(alias = "typed-literal")]
    Literal {
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        datatype: Option<String>,
        #[serde(rename = "xml:lang", default, skip_serializing_if = "Option::is_none")]
        lang: Option<String>,
    },
    Bnode {
        value: String,
    },
}

impl RdfTerm {
    pub fn uri(value: impl Into<String>) -> Self {
        RdfTerm::Uri { value: value.into() }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        RdfTerm::Literal { value: value.into(), datatype: None, lang: None }
    }

    /// Lexical form, as written to CSV.
    pub fn value(&self) -> &str {
        match self {
            RdfTerm::Uri { value } | RdfTerm::Literal { value, .. } | RdfTerm::Bnode { value } => value,
        }
    }
}

impl fmt::Display for RdfTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.value())
    }
}

impl From<&Term> for RdfTerm {
    fn from(term: &Term) -> Self {
        match term {
            Term::NamedNode(n) => RdfTerm::uri(n.as_str()),
            Term::BlankNode(b) => RdfTerm::Bnode { value: b.as_str().to_owned() },
            Term::Literal(l) => {
                let lang = l.language().map(str::to_owned);
                let datatype = if lang.is_some() || l.datatype().as_str() == XSD_STRING {
                    None
                } else {
                    Some(l.datatype().as_str().to_owned())
                };
                RdfTerm::Literal { value: l.value().to_owned(), datatype, lang }
            }
            #[allow(unreachable_patterns)]
            other => RdfTerm::literal(other.to_string()),
        }
    }
}

const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";

/// Tabular SELECT results.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectResults {
    pub variables: Vec<String>,
    pub rows: Vec<Vec<Option<RdfTerm>>>,
}

#[derive(Serialize, Deserialize)]
struct JsonResults {
    head: JsonHead,
    results: JsonBindings,
}

#[derive(Serialize, Deserialize)]
struct JsonHead {
    #[serde(default)]
    vars: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonBindings {
    bindings: Vec<serde_json::Map<String, serde_json::Value>>,
}

impl SelectResults {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Parses `application/sparql-results+json`.
    pub fn from_json(body: &str) -> Result<Self, EndpointError> {
        let parsed: JsonResults =
            serde_json::from_str(body).map_err(|e| EndpointError::Payload(e.to_string()))?;
        let variables = parsed.head.vars;
        let mut rows = Vec::with_capacity(parsed.results.bindings.len());
        for binding in parsed.results.bindings {
            let mut row = Vec::with_capacity(variables.len());
            for var in &variables {
                let term = match binding.get(var) {
                    Some(v) => Some(
                        serde_json::from_value::<RdfTerm>(v.clone())
                            .map_err(|e| EndpointError::Payload(format!("binding {var}: {e}")))?,
                    ),
                    None => None,
                };
                row.push(term);
            }
            rows.push(row);
        }
        Ok(Self { variables, rows })
    }

    pub fn to_json(&self) -> String {
        let bindings = self
            .rows
            .iter()
            .map(|row| {
                self.variables
                    .iter()
                    .zip(row)
                    .filter_map(|(var, term)| {
                        term.as_ref().map(|t| (var.clone(), serde_json::to_value(t).expect("term")))
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string(&JsonResults {
            head: JsonHead { vars: self.variables.clone() },
            results: JsonBindings { bindings },
        })
        .expect("results serialize")
    }

    /// RFC 4180 CSV with a header row of variable names and lexical values.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.variables).expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record(row.iter().map(|t| t.as_ref().map(RdfTerm::value).unwrap_or("")))
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("flush")).expect("utf8 csv")
    }
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("endpoint unreachable: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("endpoint rejected query: {0}")]
    Query(String),
    #[error("unexpected results payload: {0}")]
    Payload(String),
    #[error("query is not a SELECT")]
    NotSelect,
}

impl EndpointError {
    pub fn is_retriable(&self) -> bool {
        match self {
            EndpointError::Transport(_) => true,
            EndpointError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[async_trait]
pub trait SparqlEndpoint: Send + Sync {
    async fn select(&self, query: &str) -> Result<SelectResults, EndpointError>;

    fn location(&self) -> String;
}

pub struct HttpSparqlEndpoint {
    client: reqwest::Client,
    url: String,
}

impl HttpSparqlEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self::with_timeout(url, Duration::from_secs(60))
    }

    pub fn with_timeout(url: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("metabokg/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client");
        Self { client, url: url.into() }
    }
}

#[async_trait]
impl SparqlEndpoint for HttpSparqlEndpoint {
    async fn select(&self, query: &str) -> Result<SelectResults, EndpointError> {
        let response = self
            .client
            .post(&self.url)
            .header(reqwest::header::ACCEPT, "application/sparql-results+json")
            .form(&[("query", query)])
            .send()
            .await
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().await.map_err(|e| EndpointError::Transport(e.to_string()))?;
        if status.as_u16() == 400 {
            return Err(EndpointError::Query(body));
        }
        if !status.is_success() {
            return Err(EndpointError::Http { status: status.as_u16(), message: body });
        }
        SelectResults::from_json(&body)
    }

    fn location(&self) -> String {
        self.url.clone()
    }
}

/// In-process graph evaluated with oxigraph.
pub struct MemoryEndpoint {
    store: Store,
    name: String,
}

impl MemoryEndpoint {
    pub fn from_turtle(name: impl Into<String>, turtle: &str) -> Result<Self, EndpointError> {
        let store = Store::new().map_err(|e| EndpointError::Transport(e.to_string()))?;
        store
            .load_from_slice(RdfFormat::Turtle, turtle.as_bytes())
            .map_err(|e| EndpointError::Payload(e.to_string()))?;
        Ok(Self { store, name: name.into() })
    }

    pub fn from_turtle_file(path: impl AsRef<std::path::Path>) -> Result<Self, EndpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EndpointError::Transport(format!("{}: {e}", path.display())))?;
        Self::from_turtle(format!("file:{}", path.display()), &text)
    }

    pub fn select_sync(&self, query: &str) -> Result<SelectResults, EndpointError> {
        let prepared =
            SparqlEvaluator::new().parse_query(query).map_err(|e| EndpointError::Query(e.to_string()))?;
        let results = prepared
            .on_store(&self.store)
            .execute()
            .map_err(|e| EndpointError::Query(e.to_string()))?;
        let QueryResults::Solutions(solutions) = results else {
            return Err(EndpointError::NotSelect);
        };
        let variables: Vec<String> = solutions.variables().iter().map(|v| v.as_str().to_owned()).collect();
        let mut rows = Vec::new();
        for solution in solutions {
            let solution = solution.map_err(|e| EndpointError::Query(e.to_string()))?;
            rows.push(variables.iter().map(|v| solution.get(v.as_str()).map(RdfTerm::from)).collect());
        }
        Ok(SelectResults { variables, rows })
    }
}

#[async_trait]
impl SparqlEndpoint for MemoryEndpoint {
    async fn select(&self, query: &str) -> Result<SelectResults, EndpointError> {
        self.select_sync(query)
    }

    fn location(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRAPH: &str = r#"
        @prefix ex: <http://example.org/> .
        ex:a ex:p "1"^^<http://www.w3.org/2001/XMLSchema#integer> .
        ex:b ex:p "two, \"quoted\"" .
        ex:c ex:p "deux"@fr .
    "#;

    #[test]
    fn memory_select_and_csv() {
        let ep = MemoryEndpoint::from_turtle("t", GRAPH).unwrap();
        let res = ep
            .select_sync("SELECT ?s ?o WHERE { ?s <http://example.org/p> ?o } ORDER BY ?s")
            .unwrap();
        assert_eq!(res.variables, ["s", "o"]);
        assert_eq!(res.len(), 3);
        let csv = res.to_csv();
        assert_eq!(
            csv,
            "s,o\nhttp://example.org/a,1\nhttp://example.org/b,\"two, \"\"quoted\"\"\"\nhttp://example.org/c,deux\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let ep = MemoryEndpoint::from_turtle("t", GRAPH).unwrap();
        let res = ep
            .select_sync("SELECT ?s ?o ?missing WHERE { ?s <http://example.org/p> ?o } ORDER BY ?s")
            .unwrap();
        let back = SelectResults::from_json(&res.to_json()).unwrap();
        assert_eq!(back, res);
        assert!(back.rows.iter().all(|r| r[2].is_none()));
    }

    #[test]
    fn memory_rejects_bad_query() {
        let ep = MemoryEndpoint::from_turtle("t", GRAPH).unwrap();
        assert!(matches!(ep.select_sync("SELEC nope"), Err(EndpointError::Query(_))));
        assert!(matches!(ep.select_sync("ASK { ?s ?p ?o }"), Err(EndpointError::NotSelect)));
    }

    #[test]
    fn parses_typed_literal_alias() {
        let body = r#"{"head":{"vars":["x"]},"results":{"bindings":[{"x":{"type":"typed-literal","value":"5","datatype":"http://www.w3.org/2001/XMLSchema#integer"}}]}}"#;
        let res = SelectResults::from_json(body).unwrap();
        assert_eq!(res.rows[0][0].as_ref().unwrap().value(), "5");
    }
}
