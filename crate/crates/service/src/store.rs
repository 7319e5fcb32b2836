use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use metabokg_core::agents::{EventSink, SessionState, TraceEvent};
use thiserror::Error;
use tokio::sync::{broadcast, MutexGuard};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("storage error at {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// A live session. Turns and uploads take the state lock, which queues
/// them in arrival order.
pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    state_path: PathBuf,
    state: tokio::sync::Mutex<SessionState>,
    log: Mutex<Vec<TraceEvent>>,
    tx: broadcast::Sender<TraceEvent>,
}

impl Session {
    fn new(id: String, root: &Path, state: SessionState) -> Self {
        let (tx, _) = broadcast::channel(1024);
        Self {
            dir: root.join(&id),
            state_path: root.join(format!("{id}.json")),
            log: Mutex::new(state.trace.clone()),
            state: tokio::sync::Mutex::new(state),
            tx,
            id,
        }
    }

    /// Waits for any turn in flight.
    pub async fn lock(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().await
    }

    /// Events recorded so far with `seq > since`, and a receiver for every
    /// later event. Taken under one lock so nothing falls between them.
    pub fn subscribe(&self, since: Option<u64>) -> (Vec<TraceEvent>, broadcast::Receiver<TraceEvent>) {
        let log = self.log.lock().expect("event log lock");
        let past = log.iter().filter(|e| since.is_none_or(|s| e.seq > s)).cloned().collect();
        (past, self.tx.subscribe())
    }

    pub fn persist(&self, state: &SessionState) -> Result<(), StoreError> {
        let tmp = self.state_path.with_extension("json.tmp");
        let body = serde_json::to_vec(state).expect("session state serializes");
        std::fs::write(&tmp, body).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &self.state_path).map_err(|e| io_err(&self.state_path, e))
    }
}

impl EventSink for Session {
    fn emit(&self, event: &TraceEvent) {
        let mut log = self.log.lock().expect("event log lock");
        log.push(event.clone());
        let _ = self.tx.send(event.clone());
    }
}

/// Sessions under one root: `{root}/{id}.json` holds the state and
/// `{root}/{id}/` the artifacts.
pub struct SessionStore {
    root: PathBuf,
    live: Mutex<HashMap<String, Arc<Session>>>,
}

fn valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), live: Mutex::new(HashMap::new()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<Arc<Session>, StoreError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(id.clone(), &self.root, SessionState::new(&id));
        std::fs::create_dir_all(&session.dir).map_err(|e| io_err(&session.dir, e))?;
        session.persist(&SessionState::new(&id))?;
        let session = Arc::new(session);
        self.live.lock().expect("session map lock").insert(id, session.clone());
        Ok(session)
    }

    /// A live session, or one loaded from disk.
    pub fn get(&self, id: &str) -> Result<Arc<Session>, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.into()));
        }
        let mut live = self.live.lock().expect("session map lock");
        if let Some(s) = live.get(id) {
            return Ok(s.clone());
        }
        let path = self.root.join(format!("{id}.json"));
        let text = match std::fs::read(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.into())),
            Err(e) => return Err(io_err(&path, e)),
        };
        let state: SessionState = serde_json::from_slice(&text).map_err(|e| io_err(&path, e))?;
        let session = Arc::new(Session::new(id.into(), &self.root, state));
        live.insert(id.into(), session.clone());
        Ok(session)
    }
}

/// A single path component that is safe to join onto a session directory.
pub fn plain_file_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 255
        && !name.starts_with('.')
        && !name.contains(['/', '\\', '\0', ':'])
        && Path::new(name).components().count() == 1
}
