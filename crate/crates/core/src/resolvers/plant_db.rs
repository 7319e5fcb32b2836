use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ResolveError;

/// Trim, case-fold, and collapse internal whitespace.
pub fn normalize_plant_name(name: &str) -> String {
    name.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantPresence {
    Present,
    Absent,
}

/// Plant names from one column of a CSV file, matched exactly after
/// normalization.
#[derive(Debug, Clone, Default)]
pub struct PlantDb {
    names: HashSet<String>,
}

impl PlantDb {
    pub fn load(path: impl AsRef<Path>, column: &str) -> Result<Self, ResolveError> {
        let path = path.as_ref();
        let load_err = |message: String| ResolveError::Load { path: path.display().to_string(), message };
        let mut reader = csv::Reader::from_path(path).map_err(|e| load_err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| load_err(e.to_string()))?.clone();
        let idx = headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| load_err(format!("no column {column:?}; columns are {:?}", headers.iter().collect::<Vec<_>>())))?;
        let mut names = HashSet::new();
        for record in reader.records() {
            let record = record.map_err(|e| load_err(e.to_string()))?;
            if let Some(name) = record.get(idx) {
                let norm = normalize_plant_name(name);
                if !norm.is_empty() {
                    names.insert(norm);
                }
            }
        }
        Ok(Self { names })
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            names: names
                .into_iter()
                .map(|n| normalize_plant_name(n.as_ref()))
                .filter(|n| !n.is_empty())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn check(&self, name: &str) -> PlantPresence {
        let norm = normalize_plant_name(name);
        if !norm.is_empty() && self.names.contains(&norm) {
            PlantPresence::Present
        } else {
            PlantPresence::Absent
        }
    }
}
