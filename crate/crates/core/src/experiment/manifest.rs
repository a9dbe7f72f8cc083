use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::runner::Runner;
use crate::error::{Error, Result};
use crate::gateway::GatewayStats;
use crate::records::write_json;
use crate::seed::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_calls: Option<u64>,
    pub max_tokens: Option<u64>,
    pub calls_used: u64,
    pub tokens_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub design: String,
    pub status: String,
    pub config_digest: String,
    pub dataset_digests: BTreeMap<String, String>,
    pub backend_kind: String,
    pub started_at: String,
    pub finished_at: String,
    pub gateway: GatewayStats,
    pub budget: Budget,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Files whose bytes must match between a run and its replay.
pub(super) fn is_reproducible(path: &str) -> bool {
    !matches!(path, "config.json" | "calls.jsonl")
}

fn skip_in_listing(rel: &str) -> bool {
    rel == "manifest.json" || rel.starts_with("cache/") || rel.starts_with("replay/") || rel.ends_with(".tmp")
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<ArtifactEntry>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        let rel = path
            .strip_prefix(root)
            .expect("walk stays under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if path.is_dir() {
            if !skip_in_listing(&format!("{rel}/")) {
                walk(root, &path, out)?;
            }
        } else if !skip_in_listing(&rel) {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.push(ArtifactEntry {
                path: rel,
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
    }
    Ok(())
}

pub fn list_artifacts(run_dir: &Path) -> Result<Vec<ArtifactEntry>> {
    let mut out = Vec::new();
    walk(run_dir, run_dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

impl RunManifest {
    pub(super) fn collect(runner: &Runner, started: DateTime<Utc>, status: &str) -> Result<Self> {
        let cfg = runner.config();
        let (source, target) = runner.datasets();
        let mut dataset_digests = BTreeMap::new();
        dataset_digests.insert("source".to_string(), source.digest());
        if let Some(t) = target {
            dataset_digests.insert("target".to_string(), t.digest());
        }
        let stats = runner.gateway().stats();
        let gw = runner.gateway().config();
        Ok(RunManifest {
            run_id: runner.run_id().to_string(),
            design: cfg.design.as_str().to_string(),
            status: status.to_string(),
            config_digest: cfg.digest(),
            dataset_digests,
            backend_kind: runner.gateway().backend_kind().to_string(),
            started_at: started.to_rfc3339(),
            finished_at: Utc::now().to_rfc3339(),
            gateway: stats,
            budget: Budget {
                max_calls: gw.max_calls,
                max_tokens: gw.max_tokens,
                calls_used: stats.backend_calls,
                tokens_used: stats.prompt_tokens + stats.output_tokens,
            },
            artifacts: list_artifacts(runner.run_dir())?,
        })
    }
}

pub(super) fn write(run_dir: &Path, m: &RunManifest) -> Result<()> {
    write_json(&run_dir.join("manifest.json"), m)
}
