use std::path::{Path, PathBuf};

use metabokg_core::setup::{GatewayKind, RuntimeSettings, SetupError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_UPLOAD_LIMIT: usize = 50 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Session state and artifacts live under this directory.
    pub artifact_root: PathBuf,
    pub upload_limit_bytes: usize,
    pub runtime: RuntimeSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            artifact_root: PathBuf::from("sessions"),
            upload_limit_bytes: DEFAULT_UPLOAD_LIMIT,
            runtime: RuntimeSettings::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value {value:?} for {var}")]
    Env { var: &'static str, value: String },
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error("artifact root {path}: {message}")]
    Storage { path: String, message: String },
}

/// Variables that override config file values. Provider credentials are
/// read from the environment only, when a live gateway is built.
pub const ENV_OVERRIDES: [&str; 7] = [
    "METABOKG_BIND",
    "METABOKG_ARTIFACT_ROOT",
    "METABOKG_MODE",
    "METABOKG_CASSETTE",
    "METABOKG_MODEL",
    "METABOKG_KG_ENDPOINT",
    "METABOKG_WIKIDATA_ENDPOINT",
];

impl ServiceConfig {
    /// Reads a TOML file. Relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: shown.clone(), message: e.to_string() })?;
        let mut cfg: ServiceConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.artifact_root.is_relative() {
            cfg.artifact_root = base.join(&cfg.artifact_root);
        }
        cfg.runtime.relative_to(base);
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("METABOKG_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("METABOKG_ARTIFACT_ROOT") {
            self.artifact_root = v.into();
        }
        if let Some(v) = var("METABOKG_MODE") {
            self.runtime.mode = match v.to_ascii_lowercase().as_str() {
                "live" => GatewayKind::Live,
                "replay" => GatewayKind::Replay,
                "record" => GatewayKind::Record,
                _ => return Err(ConfigError::Env { var: "METABOKG_MODE", value: v }),
            };
        }
        if let Some(v) = var("METABOKG_CASSETTE") {
            self.runtime.cassette = Some(v.into());
        }
        if let Some(v) = var("METABOKG_MODEL") {
            self.runtime.model_ref = v;
        }
        if let Some(v) = var("METABOKG_KG_ENDPOINT") {
            self.runtime.kg_endpoint = v;
        }
        if let Some(v) = var("METABOKG_WIKIDATA_ENDPOINT") {
            self.runtime.wikidata_endpoint = v;
        }
        Ok(())
    }

    /// Checks the runtime files and makes sure the artifact root exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.runtime.validate()?;
        std::fs::create_dir_all(&self.artifact_root).map_err(|e| ConfigError::Storage {
            path: self.artifact_root.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file_values() {
        let mut c = ServiceConfig::default();
        c.apply_env(|k| match k {
            "METABOKG_MODE" => Some("live".into()),
            "METABOKG_ARTIFACT_ROOT" => Some("/srv/mkg".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.runtime.mode, GatewayKind::Live);
        assert_eq!(c.artifact_root, PathBuf::from("/srv/mkg"));
        assert!(c.apply_env(|k| (k == "METABOKG_MODE").then(|| "sometimes".into())).is_err());
    }

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("service.toml");
        std::fs::write(&p, "bind = \"0.0.0.0:9000\"\nartifact_root = \"data\"\n[runtime]\ncassette = \"c.jsonl\"\n").unwrap();
        let c = ServiceConfig::load(&p).unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.artifact_root, dir.path().join("data"));
        assert_eq!(c.runtime.cassette, Some(dir.path().join("c.jsonl")));
        assert_eq!(c.upload_limit_bytes, DEFAULT_UPLOAD_LIMIT);
        std::fs::write(&p, "unknown = 1\n").unwrap();
        assert!(matches!(ServiceConfig::load(&p), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn replay_without_cassette_fails_validation() {
        let mut c = ServiceConfig::default();
        c.artifact_root = tempfile::tempdir().unwrap().path().join("root");
        assert!(matches!(c.validate(), Err(ConfigError::Setup(_))));
    }
}
