use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{confine, io_error, InterpError};

pub const SAMPLE_ROWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Spreadsheet,
    Mgf,
    Text,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FileDetails {
    Spreadsheet { rows: usize, columns: usize, headers: Vec<String>, sample_rows: Vec<Vec<String>> },
    Mgf { spectrum_count: usize, end_ions_count: usize, feature_ids: usize },
    Text { line_count: usize },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSummary {
    pub path: String,
    pub size_bytes: u64,
    pub kind: FileKind,
    pub details: FileDetails,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn kind_from_extension(path: &Path) -> Option<FileKind> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "csv" | "tsv" => FileKind::Spreadsheet,
        "mgf" => FileKind::Mgf,
        "txt" | "text" | "md" | "log" | "json" | "sparql" | "rq" => FileKind::Text,
        _ => return None,
    })
}

fn sniff(bytes: &[u8]) -> FileKind {
    match std::str::from_utf8(bytes) {
        Ok(text) if text.lines().any(|l| l.trim() == "BEGIN IONS") => FileKind::Mgf,
        Ok(_) => FileKind::Text,
        Err(_) => FileKind::Unknown,
    }
}

/// Summarizes a file inside `session_dir`. The kind comes from the
/// extension when it is known, otherwise from the content.
pub fn analyze_file(path: &Path, session_dir: &Path) -> Result<FileSummary, InterpError> {
    let path = confine(path, session_dir)?;
    let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
    let kind = kind_from_extension(&path).unwrap_or_else(|| sniff(&bytes));
    let mut warnings = Vec::new();
    let details = match kind {
        FileKind::Spreadsheet => {
            let delimiter = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) { b'\t' } else { b',' };
            let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).from_reader(bytes.as_slice());
            let headers: Vec<String> = reader.headers().map_err(|e| io_error(&path, e))?.iter().map(str::to_owned).collect();
            let mut rows = 0;
            let mut sample_rows = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| io_error(&path, e))?;
                if sample_rows.len() < SAMPLE_ROWS {
                    sample_rows.push(record.iter().map(str::to_owned).collect());
                }
                rows += 1;
            }
            FileDetails::Spreadsheet { rows, columns: headers.len(), headers, sample_rows }
        }
        FileKind::Mgf => {
            let text = String::from_utf8_lossy(&bytes);
            let count = |marker: &str| text.lines().filter(|l| l.trim() == marker).count();
            let (begin, end) = (count("BEGIN IONS"), count("END IONS"));
            if begin != end {
                warnings.push(format!("malformed MGF: {begin} BEGIN IONS lines but {end} END IONS lines"));
            }
            let feature_ids = text.lines().filter(|l| l.trim_start().to_ascii_uppercase().starts_with("FEATURE_ID=")).count();
            FileDetails::Mgf { spectrum_count: begin, end_ions_count: end, feature_ids }
        }
        FileKind::Text => FileDetails::Text { line_count: String::from_utf8_lossy(&bytes).lines().count() },
        FileKind::Unknown => FileDetails::Unknown,
    };
    Ok(FileSummary { path: path.display().to_string(), size_bytes: bytes.len() as u64, kind, details, warnings })
}

impl FileSummary {
    /// One-paragraph description used in prompts.
    pub fn describe(&self, name: &str) -> String {
        match &self.details {
            FileDetails::Spreadsheet { rows, columns, headers, .. } => {
                format!("{name}: spreadsheet, {rows} rows x {columns} columns ({})", headers.join(", "))
            }
            FileDetails::Mgf { spectrum_count, .. } => format!("{name}: MGF file with {spectrum_count} spectra"),
            FileDetails::Text { line_count } => format!("{name}: text file, {line_count} lines"),
            FileDetails::Unknown => format!("{name}: {} bytes of unrecognized content", self.size_bytes),
        }
    }
}
