use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Backend, BackendError, BackendReply, CacheKey, CallRecord, ModelRequest};
use crate::error::{Error, Result};

/// Serves responses recorded in a previous run's call log. A request not in
/// the log is a fatal error.
pub struct ReplayBackend {
    entries: HashMap<CacheKey, BackendReply>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = CallRecord>) -> Self {
        let entries = records
            .into_iter()
            .map(|r| {
                (
                    r.key,
                    BackendReply {
                        text: r.text,
                        usage: r.usage,
                    },
                )
            })
            .collect();
        ReplayBackend { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str::<CallRecord>(&line)?);
            }
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> &'static str {
        "replay"
    }

    fn call(&self, req: &ModelRequest, sample_index: u32) -> Result<BackendReply, BackendError> {
        let key = CacheKey::new(req, sample_index);
        self.entries.get(&key).cloned().ok_or_else(|| {
            BackendError::Fatal(format!(
                "replay log has no entry for model {} sample {} prompt {}",
                key.model_id, key.sample_index, key.prompt_digest
            ))
        })
    }
}
