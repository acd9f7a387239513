//! Run manifest: everything needed to repeat a run, plus an index of what it
//! wrote. It is written before any output and rewritten atomically as the
//! run progresses.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::budget::MemoryBudget;
use crate::error::Result;
use crate::grid::GridSpec;
use crate::implicit::ImplicitPosterior;
use crate::io;
use crate::kernels::PriorModel;
use crate::operators::OperatorKind;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLogEntry {
    /// Which posterior the stage belongs to, e.g. a design name.
    pub track: String,
    pub index: usize,
    pub operator: OperatorKind,
    pub rows: usize,
    pub tau2: f64,
    pub jitter: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageEntry {
    pub track: String,
    pub grid_points: usize,
    pub stages: usize,
    pub implicit_bytes: u64,
    pub explicit_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: RunStatus,
    pub seed: u64,
    pub threads: Option<usize>,
    pub memory_budget: MemoryBudget,
    pub config: serde_json::Value,
    pub grid: GridSpec,
    pub model: PriorModel,
    pub stages: Vec<StageLogEntry>,
    pub storage: Vec<StorageEntry>,
    pub outputs: Vec<OutputEntry>,
    #[serde(skip)]
    dir: PathBuf,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn create<C: Serialize>(
        dir: &Path,
        command: &str,
        config: &C,
        seed: u64,
        threads: Option<usize>,
        budget: MemoryBudget,
        grid: GridSpec,
        model: PriorModel,
    ) -> Result<Self> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: RunStatus::Running,
            seed,
            threads,
            memory_budget: budget,
            config: serde_json::to_value(config)?,
            grid,
            model,
            stages: Vec::new(),
            storage: Vec::new(),
            outputs: Vec::new(),
            dir: dir.to_path_buf(),
        };
        manifest.save()?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut m: RunManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
        m.dir = dir.to_path_buf();
        Ok(m)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn save(&self) -> Result<()> {
        io::write_json(&self.dir.join(MANIFEST_FILE), self)
    }

    /// Records a file written under the run directory.
    pub fn output(&mut self, name: &str, description: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o.path == name) {
            self.outputs.push(OutputEntry {
                path: name.to_string(),
                description: description.to_string(),
            });
        }
        self.dir.join(name)
    }

    /// Logs the stages of `post` not logged yet under `track`.
    pub fn log_stages(&mut self, track: &str, post: &ImplicitPosterior) {
        let done = self.stages.iter().filter(|s| s.track == track).count();
        for (i, st) in post.stages().iter().enumerate().skip(done) {
            self.stages.push(StageLogEntry {
                track: track.to_string(),
                index: i + 1,
                operator: st.operator().kind(),
                rows: st.rows(),
                tau2: st.tau2(),
                jitter: st.jitter(),
                timestamp: now(),
            });
        }
    }

    pub fn record_storage(&mut self, track: &str, post: &ImplicitPosterior) {
        let entry = StorageEntry {
            track: track.to_string(),
            grid_points: post.grid().len(),
            stages: post.n_stages(),
            implicit_bytes: post.storage_bytes(8),
            explicit_bytes: crate::implicit::explicit_storage_bytes(post.grid().len(), 8),
        };
        match self.storage.iter_mut().find(|s| s.track == track) {
            Some(s) => *s = entry,
            None => self.storage.push(entry),
        }
    }

    pub fn finish(&mut self) -> Result<()> {
        self.status = RunStatus::Complete;
        self.save()
    }
}
