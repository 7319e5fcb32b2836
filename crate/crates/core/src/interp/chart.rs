use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, read_csv, InterpError};

pub const CHART_SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Bar,
    Histogram,
    Scatter,
    Line,
}

impl ChartType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChartType::Bar => "bar",
            ChartType::Histogram => "histogram",
            ChartType::Scatter => "scatter",
            ChartType::Line => "line",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartData {
    /// CSV artifact in the same session directory as the spec.
    Artifact { name: String },
    Inline { x: Vec<String>, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub spec_version: u32,
    pub chart_type: ChartType,
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
    pub title: String,
    pub data: ChartData,
}

#[derive(Debug)]
struct Column {
    name: String,
    numeric: bool,
}

fn columns(headers: &[String], rows: &[Vec<String>]) -> Vec<Column> {
    headers
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut cells = rows.iter().filter_map(|r| r.get(i)).map(|c| c.trim()).filter(|c| !c.is_empty()).peekable();
            let numeric = cells.peek().is_some() && cells.all(|c| c.parse::<f64>().is_ok());
            Column { name: name.clone(), numeric }
        })
        .collect()
}

fn requested_type(request: &str) -> ChartType {
    let r = request.to_lowercase();
    if r.contains("histogram") {
        ChartType::Histogram
    } else if r.contains("scatter") {
        ChartType::Scatter
    } else if r.contains("line") || r.contains("trend") || r.contains("over time") {
        ChartType::Line
    } else {
        ChartType::Bar
    }
}

/// Columns named in the request come first, keeping CSV order otherwise.
fn by_mention<'a>(cols: impl Iterator<Item = &'a Column>, request: &str) -> Vec<&'a Column> {
    let r = request.to_lowercase();
    let mentioned = |c: &Column| {
        let name = c.name.to_lowercase();
        !name.is_empty() && (r.contains(&name) || name.split(|ch: char| !ch.is_alphanumeric()).any(|t| t.len() > 2 && r.contains(t)))
    };
    let (mut yes, no): (Vec<_>, Vec<_>) = cols.partition(|c| mentioned(c));
    yes.extend(no);
    yes
}

/// Builds a chart spec over the CSV at `spill_path` and writes it to
/// `out_path` as JSON. "Distribution" requests become bar charts of a
/// numeric column per category; a histogram is produced only when a single
/// numeric column is charted.
pub fn make_chart_spec(spill_path: &Path, request: &str, out_path: &Path) -> Result<ChartSpec, InterpError> {
    let (headers, rows) = read_csv(spill_path)?;
    let cols = columns(&headers, &rows);
    let numeric = by_mention(cols.iter().filter(|c| c.numeric), request);
    let categorical = by_mention(cols.iter().filter(|c| !c.numeric), request);
    if numeric.is_empty() {
        return Err(InterpError::Chart(format!(
            "no numeric columns to plot; the result has only text columns ({})",
            headers.join(", ")
        )));
    }
    let mut chart_type = requested_type(request);
    if cols.len() == 1 {
        chart_type = ChartType::Histogram;
    }
    let (x, y) = match chart_type {
        ChartType::Histogram => (numeric[0].name.clone(), None),
        ChartType::Bar | ChartType::Line => {
            let y = numeric[0];
            let x = categorical.first().copied().or_else(|| numeric.get(1).copied());
            match x {
                Some(x) => (x.name.clone(), Some(y.name.clone())),
                None => {
                    chart_type = ChartType::Histogram;
                    (y.name.clone(), None)
                }
            }
        }
        ChartType::Scatter => {
            if numeric.len() < 2 {
                return Err(InterpError::Chart(format!(
                    "a scatter plot needs two numeric columns; only {} is numeric",
                    numeric[0].name
                )));
            }
            (numeric[0].name.clone(), Some(numeric[1].name.clone()))
        }
    };
    let title = match (&y, chart_type) {
        (None, _) => format!("Distribution of {x}"),
        (Some(y), ChartType::Bar) => format!("{y} per {x}"),
        (Some(y), _) => format!("{y} vs {x}"),
    };
    let name = spill_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let spec = ChartSpec { spec_version: CHART_SPEC_VERSION, chart_type, x, y, title, data: ChartData::Artifact { name } };
    let json = serde_json::to_string_pretty(&spec).expect("chart spec serializes");
    if let Some(dir) = out_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_error(out_path, e))?;
    }
    std::fs::write(out_path, json).map_err(|e| io_error(out_path, e))?;
    Ok(spec)
}
