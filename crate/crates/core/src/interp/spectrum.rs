use std::path::Path;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use super::{read_csv, InterpError};

pub const SPECTRUM_VIEWER_PREFIX: &str = "https://metabolomics-usi.gnps2.org/dashinterface/?usi1=";

/// Everything except unreserved characters is escaped.
const USI_VALUE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

/// Spectrum viewer URL for a USI, or for the `usi` column of the first row
/// of a CSV file when `input` names an existing `.csv` file.
pub fn spectrum_url(input: &str) -> Result<String, InterpError> {
    let trimmed = input.trim();
    let path = Path::new(trimmed);
    let usi = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) && path.is_file() {
        let (headers, rows) = read_csv(path)?;
        let col = headers.iter().position(|h| h.eq_ignore_ascii_case("usi")).ok_or_else(|| {
            InterpError::Usi(format!("{} has no \"usi\" column; columns are: {}", path.display(), headers.join(", ")))
        })?;
        rows.first().and_then(|r| r.get(col)).map(|s| s.trim().to_owned()).unwrap_or_default()
    } else {
        trimmed.to_owned()
    };
    if usi.is_empty() {
        return Err(InterpError::Usi("empty USI".into()));
    }
    Ok(format!("{SPECTRUM_VIEWER_PREFIX}{}", utf8_percent_encode(&usi, USI_VALUE)))
}
