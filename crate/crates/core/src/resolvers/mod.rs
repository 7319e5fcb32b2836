//! Entity resolution tools used by the KG agent.
//!
//! Every resolver returns identifiers copied verbatim from its source: a row
//! of a local file, an index entry, or an upstream API payload.

mod chemical;
mod plant_db;
mod smiles;
mod target;
mod taxon;
pub mod transport;

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chemical::{ChemicalIndex, SimilarityBackend, DEFAULT_CHEMICAL_THRESHOLD};
pub use plant_db::{normalize_plant_name, PlantDb, PlantPresence};
pub use smiles::{SmilesResolver, DEFAULT_GNPS_BASE};
pub use target::{TargetResolver, CHEMBL_TARGET_IRI_PREFIX, DEFAULT_CHEMBL_BASE};
pub use taxon::TaxonResolver;
pub use transport::{HttpResponse, HttpTransport, MockTransport, ReqwestTransport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Taxon,
    ChemicalClass,
    Target,
    Structure,
}

impl EntityKind {
    /// Parses a mention kind tag. `smiles` and `structure` both mean a
    /// chemical structure.
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.trim().to_ascii_lowercase().as_str() {
            "taxon" => Some(EntityKind::Taxon),
            "chemical_class" => Some(EntityKind::ChemicalClass),
            "target" => Some(EntityKind::Target),
            "smiles" | "structure" => Some(EntityKind::Structure),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityKind::Taxon => "taxon",
            EntityKind::ChemicalClass => "chemical_class",
            EntityKind::Target => "target",
            EntityKind::Structure => "structure",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    PlantDb,
    ChemicalIndex,
    GnpsApi,
    ChemblApi,
    WikidataEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedEntity {
    pub surface: String,
    pub kind: EntityKind,
    pub identifier: String,
    pub source: EntitySource,
    /// Similarity score, chemical classes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

static INCHIKEY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z]{14}-[A-Z]{10}-[A-Z]$").unwrap());

pub fn is_inchikey(text: &str) -> bool {
    INCHIKEY.is_match(text)
}

pub fn is_absolute_iri(text: &str) -> bool {
    url::Url::parse(text).is_ok_and(|u| u.has_host() || u.scheme() == "urn")
}

impl ResolvedEntity {
    /// Identifier syntax matches the kind and the score is present iff the
    /// kind is a chemical class.
    pub fn is_well_formed(&self) -> bool {
        let id_ok = match self.kind {
            EntityKind::Structure => is_inchikey(&self.identifier),
            _ => is_absolute_iri(&self.identifier),
        };
        let score_ok = match (self.kind, self.score) {
            (EntityKind::ChemicalClass, Some(s)) => (0.0..=1.0).contains(&s),
            (EntityKind::ChemicalClass, None) => false,
            (_, s) => s.is_none(),
        };
        id_ok && score_ok
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ResolveError {
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("no match for {surface:?}: {hint}")]
    NoMatch { surface: String, hint: String },
    #[error("ambiguous {surface:?}; candidates: {}", candidates.join(", "))]
    Ambiguous { surface: String, candidates: Vec<String> },
    #[error("upstream error (retriable: {retriable}): {message}")]
    Upstream { message: String, retriable: bool },
    #[error("cannot load {path}: {message}")]
    Load { path: String, message: String },
}

impl ResolveError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ResolveError::Upstream { retriable: true, .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inchikey_pattern() {
        assert!(is_inchikey("SIKJAQJRHWYJAI-UHFFFAOYSA-N"));
        assert!(!is_inchikey("SIKJAQJRHWYJAI-UHFFFAOYSA"));
        assert!(!is_inchikey("sikjaqjrhwyjai-uhfffaoysa-n"));
        assert_eq!("SIKJAQJRHWYJAI-UHFFFAOYSA-N".len(), 27);
    }

    #[test]
    fn well_formedness() {
        let mut e = ResolvedEntity {
            surface: "flavonoids".into(),
            kind: EntityKind::ChemicalClass,
            identifier: "https://enpkg.commons-lab.org/kg/npc_Flavonoids".into(),
            source: EntitySource::ChemicalIndex,
            score: Some(1.0),
        };
        assert!(e.is_well_formed());
        e.score = None;
        assert!(!e.is_well_formed());
        e.kind = EntityKind::Taxon;
        assert!(e.is_well_formed());
        e.identifier = "not an iri".into();
        assert!(!e.is_well_formed());
    }

    #[test]
    fn kind_tags() {
        assert_eq!(EntityKind::from_tag("SMILES"), Some(EntityKind::Structure));
        assert_eq!(EntityKind::from_tag("chemical_class"), Some(EntityKind::ChemicalClass));
        assert_eq!(EntityKind::from_tag("disease"), None);
    }
}
