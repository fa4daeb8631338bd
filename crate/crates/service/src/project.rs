//! Projects and their lifecycle.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use storyreel_core::domain::{ArtifactRef, StoryProposal, StyleSpec};
use storyreel_core::rag::RecordLog;
use storyreel_core::workflow::WorkflowVersions;

const PROJECT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectStatus {
    Draft,
    AwaitingApproval,
    Running,
    NeedsReview,
    Completed,
    Failed,
}

impl ProjectStatus {
    /// The declared transitions. Rejecting a proposed workflow sends a
    /// project back to `Draft`; everything else moves forward or cycles
    /// between `Running` and `NeedsReview`.
    pub fn can_become(self, next: ProjectStatus) -> bool {
        use ProjectStatus::*;
        matches!(
            (self, next),
            (Draft, AwaitingApproval)
                | (AwaitingApproval, Draft)
                | (AwaitingApproval, Running)
                | (Running, NeedsReview)
                | (Running, Completed)
                | (Running, Failed)
                | (NeedsReview, Running)
                | (NeedsReview, Completed)
        )
    }
}

impl fmt::Display for ProjectStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub proposal: StoryProposal,
    pub style: StyleSpec,
    pub workflow_versions: WorkflowVersions,
    /// Run ids, oldest first.
    pub runs: Vec<String>,
    pub current_script: Option<ArtifactRef>,
    pub status: ProjectStatus,
    /// Why the last run failed, if it did.
    #[serde(default)]
    pub last_error: Option<String>,
}

impl Project {
    pub fn current_run(&self) -> Option<&str> {
        self.runs.last().map(String::as_str)
    }

    /// Move to `next`, refusing undeclared transitions.
    pub fn transition(&mut self, next: ProjectStatus) -> Result<(), (ProjectStatus, ProjectStatus)> {
        if !self.status.can_become(next) {
            return Err((self.status, next));
        }
        self.status = next;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ProjectRecord {
    schema_version: u32,
    project: Project,
}

/// Projects persisted as an append-only log of snapshots; the last snapshot
/// of each id wins on replay.
pub struct ProjectStore {
    projects: RwLock<BTreeMap<String, Project>>,
    writer: Mutex<()>,
    log: RecordLog,
}

impl ProjectStore {
    pub fn open(path: &Path) -> io::Result<Self> {
        let log = RecordLog::new(path);
        let mut projects = BTreeMap::new();
        for r in log.read_all::<ProjectRecord>()? {
            if r.schema_version != PROJECT_SCHEMA_VERSION {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("project record schema {} is not supported", r.schema_version),
                ));
            }
            projects.insert(r.project.id.clone(), r.project);
        }
        Ok(Self {
            projects: RwLock::new(projects),
            writer: Mutex::new(()),
            log,
        })
    }

    pub fn get(&self, id: &str) -> Option<Project> {
        self.projects.read().get(id).cloned()
    }

    pub fn all(&self) -> Vec<Project> {
        self.projects.read().values().cloned().collect()
    }

    /// Next free id of the form `p-0001`.
    pub fn next_id(&self) -> String {
        format!("p-{:04}", self.projects.read().len() + 1)
    }

    /// Persist a snapshot, then publish it.
    pub fn save(&self, project: &Project) -> io::Result<()> {
        let _w = self.writer.lock();
        self.log.append(&ProjectRecord {
            schema_version: PROJECT_SCHEMA_VERSION,
            project: project.clone(),
        })?;
        self.projects.write().insert(project.id.clone(), project.clone());
        Ok(())
    }

    /// Insert a new project under a fresh id chosen inside the writer lock.
    pub fn create(&self, build: impl FnOnce(String) -> Project) -> io::Result<Project> {
        let _w = self.writer.lock();
        let project = build(self.next_id());
        self.log.append(&ProjectRecord {
            schema_version: PROJECT_SCHEMA_VERSION,
            project: project.clone(),
        })?;
        self.projects.write().insert(project.id.clone(), project.clone());
        Ok(project)
    }
}
