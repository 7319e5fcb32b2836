//! HTTP service around the agent runtime: sessions, messages, uploads,
//! live event streams, artifacts and traces.

pub mod api;
pub mod config;
pub mod store;

use std::sync::Arc;

pub use api::{router, AppState, ApiError, Created, TurnReply};
pub use config::{ConfigError, ServiceConfig, DEFAULT_UPLOAD_LIMIT};
pub use store::{plain_file_name, Session, SessionStore, StoreError};

/// Validates the config and builds the shared handler state.
pub fn build_state(config: &ServiceConfig) -> Result<AppState, ConfigError> {
    config.validate()?;
    let gateway = Arc::new(config.runtime.gateway()?);
    let runtime = config.runtime.runtime(gateway)?;
    Ok(AppState {
        runtime: Arc::new(runtime),
        store: Arc::new(SessionStore::new(&config.artifact_root)),
        upload_limit: config.upload_limit_bytes,
    })
}
