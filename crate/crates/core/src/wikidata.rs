//! Genus-level compound lookup on Wikidata and intersection with
//! knowledge-graph results.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparql::endpoint::{EndpointError, SparqlEndpoint};

pub const WIKIDATA_ENTITY: &str = "http://www.wikidata.org/entity/";

static ENTITY_ID: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^<?(?:(?:https?://(?:www\.)?wikidata\.org/(?:entity|wiki)/)|wd:)?(Q[1-9][0-9]*)>?$").unwrap()
});

/// `Q123`, `wd:Q123`, or an entity/wiki URL (optionally in angle brackets)
/// to `http://www.wikidata.org/entity/Q123`. Surrounding whitespace is
/// ignored.
pub fn canonical_entity(text: &str) -> Option<String> {
    ENTITY_ID.captures(text.trim()).map(|c| format!("{WIKIDATA_ENTITY}{}", &c[1]))
}

fn q_number(iri: &str) -> u64 {
    iri.rsplit('Q').next().and_then(|n| n.parse().ok()).unwrap_or(u64::MAX)
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("not a Wikidata entity id: {0:?}")]
    InvalidId(String),
    #[error("Wikidata endpoint error: {0}")]
    Endpoint(#[from] EndpointError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: no column of Wikidata ids")]
    NoIdColumn { path: String },
}

impl BridgeError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BridgeError::Endpoint(e) if e.is_retriable())
    }
}

/// Property and item ids used by the genus query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenusQueryConfig {
    pub found_in_taxon: String,
    pub parent_taxon: String,
    pub taxon_rank: String,
    pub genus_rank: String,
    pub row_cap: usize,
}

impl Default for GenusQueryConfig {
    fn default() -> Self {
        Self {
            found_in_taxon: "P703".into(),
            parent_taxon: "P171".into(),
            taxon_rank: "P105".into(),
            genus_rank: "Q34740".into(),
            row_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompoundIdList {
    pub spill_path: PathBuf,
    pub ids: Vec<String>,
}

pub struct WikidataBridge {
    endpoint: Arc<dyn SparqlEndpoint>,
    config: GenusQueryConfig,
}

impl WikidataBridge {
    pub fn new(endpoint: Arc<dyn SparqlEndpoint>, config: GenusQueryConfig) -> Self {
        Self { endpoint, config }
    }

    pub fn genus_query(&self, taxon_iri: &str) -> String {
        let c = &self.config;
        format!(
            "PREFIX wd: <http://www.wikidata.org/entity/>\n\
             PREFIX wdt: <http://www.wikidata.org/prop/direct/>\n\
             SELECT DISTINCT ?compound WHERE {{\n  \
             <{taxon_iri}> wdt:{parent}* ?genus .\n  \
             ?genus wdt:{rank} wd:{genus_rank} .\n  \
             ?species wdt:{parent}* ?genus .\n  \
             ?compound wdt:{found} ?species .\n}}\nLIMIT {cap}",
            parent = c.parent_taxon,
            rank = c.taxon_rank,
            genus_rank = c.genus_rank,
            found = c.found_in_taxon,
            cap = c.row_cap,
        )
    }

    /// Compounds annotated to any species in the genus of `taxon_id`,
    /// written to `spill_path`. `None` when Wikidata has none.
    pub async fn genus_compounds(&self, taxon_id: &str, spill_path: &Path) -> Result<Option<CompoundIdList>, BridgeError> {
        let taxon = canonical_entity(taxon_id).ok_or_else(|| BridgeError::InvalidId(taxon_id.to_owned()))?;
        let results = self.endpoint.select(&self.genus_query(&taxon)).await?;
        let col = results.variables.iter().position(|v| v == "compound").unwrap_or(0);
        let ids: BTreeSet<String> = results
            .rows
            .iter()
            .filter_map(|row| row.get(col).cloned().flatten())
            .filter_map(|t| canonical_entity(t.value()))
            .collect();
        if ids.is_empty() {
            return Ok(None);
        }
        let ids = sorted_by_q(ids);
        write_ids(spill_path, &ids)?;
        Ok(Some(CompoundIdList { spill_path: spill_path.to_owned(), ids }))
    }
}

fn sorted_by_q(ids: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.sort_by_key(|id| q_number(id));
    ids.dedup();
    ids
}

fn write_ids(path: &Path, ids: &[String]) -> Result<(), BridgeError> {
    let err = |e: &dyn std::fmt::Display| BridgeError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| err(&e))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| err(&e))?;
    writer.write_record(["wikidata_id"]).map_err(|e| err(&e))?;
    for id in ids {
        writer.write_record([id]).map_err(|e| err(&e))?;
    }
    writer.flush().map_err(|e| err(&e))
}

/// Canonical ids from the first column whose non-empty cells are all
/// Wikidata ids.
pub fn read_id_column(path: &Path) -> Result<BTreeSet<String>, BridgeError> {
    let err = |e: &dyn std::fmt::Display| BridgeError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| err(&e))?;
    let width = reader.headers().map_err(|e| err(&e))?.len();
    let mut records = Vec::new();
    for record in reader.records() {
        records.push(record.map_err(|e| err(&e))?);
    }
    for col in 0..width {
        let cells: Vec<&str> = records.iter().filter_map(|r| r.get(col)).map(str::trim).filter(|c| !c.is_empty()).collect();
        let ids: Option<BTreeSet<String>> = cells.iter().map(|c| canonical_entity(c)).collect();
        match ids {
            Some(ids) if !ids.is_empty() || records.is_empty() => return Ok(ids),
            _ => continue,
        }
    }
    Err(BridgeError::NoIdColumn { path: path.display().to_string() })
}

/// Ids present in both files, deduplicated and sorted by Q-number, written
/// to `out_path` under a `wikidata_id` header (header only when disjoint).
pub fn merge_outputs(enpkg_csv: &Path, wikidata_csv: &Path, out_path: &Path) -> Result<Vec<String>, BridgeError> {
    let a = read_id_column(enpkg_csv)?;
    let b = read_id_column(wikidata_csv)?;
    let common = sorted_by_q(a.intersection(&b).cloned());
    write_ids(out_path, &common)?;
    Ok(common)
}
