use std::path::Path;

use crate::similarity::{Hit, TrigramIndex};

use super::{EntityKind, EntitySource, ResolveError, ResolvedEntity};

pub const DEFAULT_CHEMICAL_THRESHOLD: f64 = 0.25;

/// Similarity search over chemical class labels. The default backend is the
/// character-trigram TF-IDF index; anything returning a best hit by label
/// position can stand in.
pub trait SimilarityBackend: Send + Sync {
    fn best(&self, query: &str) -> Option<Hit>;
}

impl SimilarityBackend for TrigramIndex {
    fn best(&self, query: &str) -> Option<Hit> {
        TrigramIndex::best(self, query)
    }
}

pub struct ChemicalIndex {
    entries: Vec<(String, String)>,
    backend: Box<dyn SimilarityBackend>,
    threshold: f64,
}

impl std::fmt::Debug for ChemicalIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChemicalIndex")
            .field("entries", &self.entries.len())
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl ChemicalIndex {
    pub fn from_entries(entries: Vec<(String, String)>) -> Self {
        let backend = TrigramIndex::build(entries.iter().map(|(label, _)| label.as_str()));
        Self { entries, backend: Box::new(backend), threshold: DEFAULT_CHEMICAL_THRESHOLD }
    }

    /// CSV with `label` and `iri` columns.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ResolveError> {
        let path = path.as_ref();
        let load_err = |message: String| ResolveError::Load { path: path.display().to_string(), message };
        let mut reader = csv::Reader::from_path(path).map_err(|e| load_err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| load_err(e.to_string()))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| load_err(format!("missing column {name:?}")))
        };
        let (label_idx, iri_idx) = (col("label")?, col("iri")?);
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| load_err(e.to_string()))?;
            let label = record.get(label_idx).unwrap_or("").trim();
            let iri = record.get(iri_idx).unwrap_or("").trim();
            if !label.is_empty() && !iri.is_empty() {
                entries.push((label.to_owned(), iri.to_owned()));
            }
        }
        Ok(Self::from_entries(entries))
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_backend(mut self, backend: Box<dyn SimilarityBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, name: &str) -> Result<ResolvedEntity, ResolveError> {
        let no_match = |hint: String| ResolveError::NoMatch { surface: name.to_owned(), hint };
        if name.trim().is_empty() {
            return Err(no_match("empty chemical class name".into()));
        }
        let hit = self.backend.best(name).ok_or_else(|| no_match("no similar chemical class label".into()))?;
        if hit.score < self.threshold {
            return Err(no_match(format!(
                "closest label {:?} scored {:.3}, below {:.2}",
                self.entries.get(hit.doc).map(|e| e.0.as_str()).unwrap_or(""),
                hit.score,
                self.threshold
            )));
        }
        let (_, iri) = self.entries.get(hit.doc).ok_or_else(|| no_match("similarity backend returned an unknown entry".into()))?;
        Ok(ResolvedEntity {
            surface: name.to_owned(),
            kind: EntityKind::ChemicalClass,
            identifier: iri.clone(),
            source: EntitySource::ChemicalIndex,
            score: Some(hit.score),
        })
    }
}
