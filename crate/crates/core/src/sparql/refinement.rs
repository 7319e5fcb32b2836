//! Exemplar store used by the one-shot refinement step.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{normalize, TrigramIndex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub query: String,
}

#[derive(Debug, Error)]
#[error("cannot load refinement store {path}: {message}")]
pub struct StoreError {
    pub path: String,
    pub message: String,
}

/// (question, reference query) pairs with a similarity index over the
/// questions.
#[derive(Debug, Clone)]
pub struct RefinementStore {
    exemplars: Vec<Exemplar>,
    index: TrigramIndex,
}

impl Default for RefinementStore {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl RefinementStore {
    pub fn new(exemplars: Vec<Exemplar>) -> Self {
        let index = TrigramIndex::build(exemplars.iter().map(|e| e.question.as_str()));
        Self { exemplars, index }
    }

    /// CSV with `question` and `reference_query` (or `query`) columns; other
    /// columns are ignored, so an evaluation dataset loads directly.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let err = |message: String| StoreError { path: path.display().to_string(), message };
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
        let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
        let q = find(&["question"]).ok_or_else(|| err("missing column \"question\"".into()))?;
        let s = find(&["reference_query", "query"]).ok_or_else(|| err("missing column \"reference_query\"".into()))?;
        let mut exemplars = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| err(e.to_string()))?;
            let (question, query) = (record.get(q).unwrap_or("").trim(), record.get(s).unwrap_or("").trim());
            if !question.is_empty() && !query.is_empty() {
                exemplars.push(Exemplar { question: question.to_owned(), query: query.to_owned() });
            }
        }
        Ok(Self::new(exemplars))
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    /// A copy without any exemplar whose question equals `question` after
    /// normalization. Used during evaluation so a question never retrieves
    /// its own reference query.
    pub fn excluding(&self, question: &str) -> Self {
        let key = normalize(question);
        Self::new(self.exemplars.iter().filter(|e| normalize(&e.question) != key).cloned().collect())
    }

    /// The single most similar exemplar; `None` only when the store is
    /// empty.
    pub fn retrieve(&self, question: &str) -> Option<&Exemplar> {
        match self.index.best(question) {
            Some(hit) => self.exemplars.get(hit.doc),
            None => self.exemplars.first(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> RefinementStore {
        RefinementStore::new(vec![
            Exemplar { question: "How many features have a sirius annotation?".into(), query: "Q1".into() },
            Exemplar { question: "Which extracts were tested against Leishmania donovani?".into(), query: "Q2".into() },
        ])
    }

    #[test]
    fn retrieves_exactly_one_nearest() {
        let s = store();
        assert_eq!(s.retrieve("extracts tested on leishmania").unwrap().query, "Q2");
        // no trigram overlap still yields one exemplar
        assert!(s.retrieve("%%%").is_some());
    }

    #[test]
    fn exclusion_removes_the_question_under_test() {
        let s = store().excluding("  which extracts were tested against LEISHMANIA donovani ");
        assert_eq!(s.len(), 1);
        assert_eq!(s.retrieve("Which extracts were tested against Leishmania donovani?").unwrap().query, "Q1");
    }

    #[test]
    fn empty_store_retrieves_nothing() {
        assert!(RefinementStore::default().retrieve("anything").is_none());
    }

    #[test]
    fn loads_dataset_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.csv");
        std::fs::write(&p, "question,reference_query,complexity\n\"q, one\",\"SELECT ?x WHERE { ?x ?p ?o }\",simple\n").unwrap();
        let s = RefinementStore::load(&p).unwrap();
        assert_eq!(s.exemplars()[0].question, "q, one");
        assert!(RefinementStore::load(dir.path().join("missing.csv")).unwrap_err().to_string().contains("missing.csv"));
    }
}
