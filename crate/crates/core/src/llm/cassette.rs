//! JSON-lines cassettes of recorded chat exchanges.
//!
//! One entry per line: `{"fingerprint", "request", "response", "usage"}`.
//! Replay consumes entries by fingerprint, in recorded order for repeated
//! identical requests.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatMessage, ChatRequest, TokenUsage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub request: ChatRequest,
    pub response: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
}

/// Hash of model + messages. Temperature is not part of the fingerprint.
pub fn fingerprint(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        model_ref: &'a str,
        messages: &'a [ChatMessage],
    }
    let key = serde_json::to_vec(&Key { model_ref: &request.model_ref, messages: &request.messages })
        .expect("chat request serializes");
    hex::encode(Sha256::digest(&key))
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path)
            .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), lineno + 1),
                )
            })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn push(&mut self, entry: CassetteEntry) {
        self.entries.push(entry);
    }

    /// Removes and returns the earliest entry with this fingerprint.
    pub fn take(&mut self, fingerprint: &str) -> Option<CassetteEntry> {
        let idx = self.entries.iter().position(|e| e.fingerprint == fingerprint)?;
        Some(self.entries.remove(idx))
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn append_entry(path: &Path, entry: &CassetteEntry) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    file.write_all(line.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_temperature_but_not_messages() {
        let a = ChatRequest::new("m", vec![ChatMessage::user("x")]);
        let mut b = a.clone();
        b.temperature = 0.7;
        assert_eq!(fingerprint(&a), fingerprint(&b));
        let c = ChatRequest::new("m", vec![ChatMessage::user("y")]);
        assert_ne!(fingerprint(&a), fingerprint(&c));
        let d = ChatRequest::new("other", vec![ChatMessage::user("x")]);
        assert_ne!(fingerprint(&a), fingerprint(&d));
    }

    #[test]
    fn load_reports_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"nope\":1}\n").unwrap();
        let err = Cassette::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad.jsonl:1"));
    }
}
