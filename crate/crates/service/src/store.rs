//! Data directory layout:
//!
//! ```text
//! <root>/datasets/<id>/{manifest.json, windows.ndjson}
//! <root>/models/<id>.json
//! <root>/sessions/<id>/{session.json, events.ndjson}
//! ```

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use pdm_core::data::{load_dataset, load_manifest, save_dataset, Dataset, LabelingStats};
use pdm_core::tcn::{load_model, save_model, TcnConfig, TcnModel};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::events::SessionEvent;

pub const SESSION_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.ndjson";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub dataset_id: String,
    pub model_id: String,
    /// Labeled dataset the distractors are drawn from.
    pub explainer_dataset_id: String,
    pub created_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub channel_names: Vec<String>,
    pub window_len: usize,
    pub window_count: usize,
    /// Three-sigma statistics when the dataset was labeled as one run.
    pub labeling: Option<LabelingStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub config: TcnConfig,
    pub parameter_count: usize,
}

/// Ids become path components, so only a conservative character set is
/// accepted.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(ServiceError::NotFound(format!("{kind} {id:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn put_dataset(&self, id: &str, ds: &Dataset) -> Result<()> {
        check_id("dataset", id)?;
        Ok(save_dataset(ds, &self.datasets_dir().join(id))?)
    }

    pub fn put_model(&self, id: &str, model: &TcnModel) -> Result<()> {
        check_id("model", id)?;
        Ok(save_model(model, &self.models_dir().join(format!("{id}.json")))?)
    }

    fn dataset_dir(&self, id: &str) -> Result<PathBuf> {
        check_id("dataset", id)?;
        let dir = self.datasets_dir().join(id);
        if dir.is_dir() {
            Ok(dir)
        } else {
            Err(ServiceError::NotFound(format!("dataset {id:?}")))
        }
    }

    pub fn dataset_summary(&self, id: &str) -> Result<DatasetSummary> {
        let m = load_manifest(&self.dataset_dir(id)?)?;
        Ok(DatasetSummary {
            id: id.to_string(),
            channel_names: m.channel_names,
            window_len: m.window_len,
            window_count: m.window_count,
            labeling: m.labeling,
        })
    }

    pub fn load_dataset(&self, id: &str) -> Result<Dataset> {
        Ok(load_dataset(&self.dataset_dir(id)?)?)
    }

    pub fn load_model(&self, id: &str) -> Result<TcnModel> {
        check_id("model", id)?;
        let path = self.models_dir().join(format!("{id}.json"));
        if !path.is_file() {
            return Err(ServiceError::NotFound(format!("model {id:?}")));
        }
        Ok(load_model(&path)?)
    }

    /// Sorted entry names of `dir`, optionally keeping only a suffix and
    /// stripping it. A missing directory lists as empty.
    fn entries(dir: &Path, suffix: Option<&str>) -> Result<Vec<String>> {
        let read = match fs::read_dir(dir) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ServiceError::io(dir, e)),
        };
        let mut names = Vec::new();
        for entry in read {
            let entry = entry.map_err(|e| ServiceError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let name = match suffix {
                Some(s) => match name.strip_suffix(s) {
                    Some(stem) => stem.to_string(),
                    None => continue,
                },
                None => name,
            };
            if valid_id(&name) {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn list_datasets(&self) -> Result<Vec<DatasetSummary>> {
        Self::entries(&self.datasets_dir(), None)?
            .iter()
            .map(|id| self.dataset_summary(id))
            .collect()
    }

    pub fn list_models(&self) -> Result<Vec<ModelSummary>> {
        Self::entries(&self.models_dir(), Some(".json"))?
            .into_iter()
            .map(|id| {
                let model = self.load_model(&id)?;
                Ok(ModelSummary {
                    parameter_count: model.parameter_count(),
                    config: model.config,
                    id,
                })
            })
            .collect()
    }

    pub fn list_sessions(&self) -> Result<Vec<String>> {
        Self::entries(&self.sessions_dir(), None)
    }

    fn session_dir(&self, id: &str) -> Result<PathBuf> {
        check_id("session", id)?;
        Ok(self.sessions_dir().join(id))
    }

    /// Persists a new session with an empty event log.
    pub fn create_session(&self, meta: &SessionMeta) -> Result<()> {
        let dir = self.session_dir(&meta.id)?;
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        let path = dir.join(SESSION_FILE);
        let text = serde_json::to_string_pretty(meta).map_err(|e| ServiceError::Internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| ServiceError::io(&path, e))?;
        let events = dir.join(EVENTS_FILE);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events)
            .map_err(|e| ServiceError::io(&events, e))?;
        Ok(())
    }

    pub fn read_session(&self, id: &str) -> Result<SessionMeta> {
        let path = self.session_dir(id)?.join(SESSION_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::NotFound(format!("session {id:?}")))
            }
            Err(e) => return Err(ServiceError::io(&path, e)),
        };
        serde_json::from_str(&text).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
    }

    pub fn read_events(&self, id: &str) -> Result<Vec<SessionEvent>> {
        let path = self.session_dir(id)?.join(EVENTS_FILE);
        let file = fs::File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::NotFound(format!("session {id:?}")),
            _ => ServiceError::io(&path, e),
        })?;
        let mut events = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| ServiceError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line)
                .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
            events.push(event);
        }
        Ok(events)
    }

    /// Appends one event line and syncs it to disk before returning.
    pub fn append_event(&self, id: &str, event: &SessionEvent) -> Result<()> {
        let path = self.session_dir(id)?.join(EVENTS_FILE);
        let mut line = serde_json::to_string(event).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::io(&path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| ServiceError::io(&path, e))?;
        file.sync_data().map_err(|e| ServiceError::io(&path, e))
    }
}
