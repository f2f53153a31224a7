//! `manifest.json`: which stages ran, with which config, and the checkpoint
//! lineage.
//!
//! Stage records are keyed by stage name. Re-running a stage replaces its
//! record in place, so identical re-runs leave the file byte-identical;
//! otherwise records are only ever appended.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use chrono::{DateTime, SecondsFormat};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub stages: Vec<StageRecord>,
    pub lineage: Vec<LineageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_checksum: String,
    pub seed: u64,
    pub timestamp: String,
    /// Output path (relative to the workdir) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub name: String,
    pub path: String,
    pub sha256: String,
    pub parent: Option<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION").to_owned(), stages: Vec::new(), lineage: Vec::new() }
    }
}

/// RFC 3339 time of the stage. `SOURCE_DATE_EPOCH` pins it for reproducible
/// artifacts.
pub fn stage_timestamp() -> String {
    let secs =
        std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse::<i64>().ok()).unwrap_or_else(
            || SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0),
        );
    DateTime::from_timestamp(secs, 0).unwrap_or_default().to_rfc3339_opts(SecondsFormat::Secs, true)
}

impl Manifest {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            io::read_json(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn record_stage(&mut self, record: StageRecord) {
        self.tool_version = env!("CARGO_PKG_VERSION").to_owned();
        match self.stages.iter_mut().find(|s| s.stage == record.stage) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    pub fn record_checkpoint(&mut self, entry: LineageEntry) {
        match self.lineage.iter_mut().find(|e| e.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.lineage.push(entry),
        }
    }

    /// Drop lineage entries whose name starts with `prefix` (stale iterations
    /// of an earlier, longer run).
    pub fn forget_checkpoints(&mut self, prefix: &str) {
        self.lineage.retain(|e| !e.name.starts_with(prefix));
    }

    /// Every listed checkpoint exists with the recorded checksum and names a
    /// parent that is itself listed.
    pub fn verify_lineage(&self, workdir: &Path) -> Result<()> {
        for e in &self.lineage {
            let path = workdir.join(&e.path);
            let sha = io::sha256_hex(&io::read_bytes(&path)?);
            if sha != e.sha256 {
                return Err(CliError::format(&path, "checksum differs from manifest"));
            }
            let ck: io::Checkpoint = io::read_json(&path)?;
            if ck.parent != e.parent {
                return Err(CliError::format(&path, "parent differs from manifest"));
            }
            if let Some(p) = &e.parent {
                if !self.lineage.iter().any(|x| &x.sha256 == p) {
                    return Err(CliError::format(&path, format!("parent {p} is not in the lineage")));
                }
            }
        }
        Ok(())
    }
}
