//! User files and query results: file summaries, result summaries, chart
//! specs, and spectrum viewer links.

mod chart;
mod files;
mod spectrum;
mod summary;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use chart::{make_chart_spec, ChartData, ChartSpec, ChartType, CHART_SPEC_VERSION};
pub use files::{analyze_file, FileDetails, FileKind, FileSummary, SAMPLE_ROWS};
pub use spectrum::{spectrum_url, SPECTRUM_VIEWER_PREFIX};
pub use summary::{summarize_results, summary_prompt};

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("{path} is outside the session directory")]
    OutsideSession { path: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot chart this result: {0}")]
    Chart(String),
    #[error("{0}")]
    Usi(String),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
    #[error(transparent)]
    Gateway(#[from] crate::llm::GatewayError),
}

pub(crate) fn io_error(path: &Path, e: impl std::fmt::Display) -> InterpError {
    InterpError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Resolves `path` (absolute, or relative to `session_dir`) and checks that
/// it stays inside `session_dir` after following symlinks.
pub fn confine(path: &Path, session_dir: &Path) -> Result<PathBuf, InterpError> {
    let candidate = if path.is_absolute() { path.to_owned() } else { session_dir.join(path) };
    let root = session_dir.canonicalize().map_err(|e| io_error(session_dir, e))?;
    let resolved = candidate.canonicalize().map_err(|e| io_error(&candidate, e))?;
    if resolved.starts_with(&root) {
        Ok(resolved)
    } else {
        Err(InterpError::OutsideSession { path: path.display().to_string() })
    }
}

/// Header and records of a CSV file.
pub(crate) fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), InterpError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| io_error(path, e))?;
    let headers = reader.headers().map_err(|e| io_error(path, e))?.iter().map(|h| h.trim().to_owned()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(|e| io_error(path, e))?.iter().map(str::to_owned).collect());
    }
    Ok((headers, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confine_rejects_escapes() {
        let root = tempfile::tempdir().unwrap();
        let session = root.path().join("s1");
        std::fs::create_dir(&session).unwrap();
        std::fs::write(session.join("a.csv"), "x\n").unwrap();
        std::fs::write(root.path().join("secret.txt"), "x\n").unwrap();
        assert!(confine(Path::new("a.csv"), &session).is_ok());
        assert!(matches!(confine(Path::new("../secret.txt"), &session), Err(InterpError::OutsideSession { .. })));
        assert!(matches!(confine(&root.path().join("secret.txt"), &session), Err(InterpError::OutsideSession { .. })));
    }
}
