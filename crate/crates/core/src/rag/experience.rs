use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::log::RecordLog;
use super::{rank_candidates, Embedder, Embedding, RagError, RetrievalHit};
use crate::clock::Clock;
use crate::domain::ArtifactRef;

const EXPERIENCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperienceCategory {
    Workflow,
    Prompt,
    Utility,
    Image,
}

impl fmt::Display for ExperienceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Workflow => "Workflow",
            Self::Prompt => "Prompt",
            Self::Utility => "Utility",
            Self::Image => "Image",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ExperienceCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "workflow" => Ok(Self::Workflow),
            "prompt" => Ok(Self::Prompt),
            "utility" => Ok(Self::Utility),
            "image" => Ok(Self::Image),
            other => Err(format!("unknown experience category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceEntry {
    pub id: String,
    pub category: ExperienceCategory,
    pub text: String,
    pub embedding: Embedding,
    pub version: u32,
    /// Feedback id behind each version, oldest first.
    pub provenance: Vec<String>,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackTarget {
    Artifact(ArtifactRef),
    Node(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackAuthor {
    HumanExpert,
    MultiModalCritic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub id: String,
    pub category: ExperienceCategory,
    pub text: String,
    pub target: Option<FeedbackTarget>,
    pub author: FeedbackAuthor,
}

impl FeedbackRecord {
    pub fn new(
        id: impl Into<String>,
        category: ExperienceCategory,
        text: impl Into<String>,
        target: Option<FeedbackTarget>,
        author: FeedbackAuthor,
    ) -> Self {
        Self {
            id: id.into(),
            category,
            text: text.into(),
            target,
            author,
        }
    }
}

/// One version of an experience entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub entry_id: String,
    pub version: u32,
    pub text: String,
    pub feedback_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperienceUpdate {
    Updated(ExperienceEntry),
    Inserted(ExperienceEntry),
}

impl ExperienceUpdate {
    pub fn entry(&self) -> &ExperienceEntry {
        match self {
            Self::Updated(e) | Self::Inserted(e) => e,
        }
    }

    pub fn is_inserted(&self) -> bool {
        matches!(self, Self::Inserted(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct SynthesisError(pub String);

/// The agent that distils feedback into experience statements.
pub trait ExperienceSynthesizer: Send + Sync {
    /// Fold feedback `s` into the existing experience text.
    fn merge(&self, feedback: &str, experience: &str) -> Result<String, SynthesisError>;
    /// Turn feedback `s` into a fresh experience statement.
    fn create(&self, feedback: &str) -> Result<String, SynthesisError>;
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    schema_version: u32,
    entry: ExperienceEntry,
}

#[derive(Serialize, Deserialize)]
struct HistoryLine {
    schema_version: u32,
    record: HistoryRecord,
}

#[derive(Default, Clone, Serialize)]
struct Inner {
    entries: Vec<ExperienceEntry>,
    /// Superseded versions per entry, oldest first.
    history: BTreeMap<String, Vec<HistoryRecord>>,
}

struct Logs {
    entries: RecordLog,
    history: RecordLog,
}

/// Versioned experience store.
///
/// Updates rewrite an entry in place (its id is stable) and archive the
/// superseded text. All writes go through one writer lock held for the full
/// retrieve, synthesize, commit span of [`ExperienceStore::update_experience`].
pub struct ExperienceStore {
    embedder: Arc<dyn Embedder>,
    clock: Arc<dyn Clock>,
    inner: RwLock<Inner>,
    writer: Mutex<Option<Logs>>,
}

impl ExperienceStore {
    pub fn in_memory(embedder: Arc<dyn Embedder>, clock: Arc<dyn Clock>) -> Self {
        Self {
            embedder,
            clock,
            inner: RwLock::new(Inner::default()),
            writer: Mutex::new(None),
        }
    }

    /// Open `dir/experience.log` and `dir/history.log`.
    pub fn open(dir: &Path, embedder: Arc<dyn Embedder>, clock: Arc<dyn Clock>) -> Result<Self, RagError> {
        let logs = Logs {
            entries: RecordLog::new(dir.join("experience.log")),
            history: RecordLog::new(dir.join("history.log")),
        };
        let mut inner = Inner::default();
        for rec in logs.entries.read_all::<EntryRecord>()? {
            if rec.schema_version != EXPERIENCE_SCHEMA_VERSION {
                return Err(RagError::Corrupt(format!("unsupported experience record version {}", rec.schema_version)));
            }
            match inner.entries.iter_mut().find(|e| e.id == rec.entry.id) {
                Some(slot) => *slot = rec.entry,
                None => inner.entries.push(rec.entry),
            }
        }
        for line in logs.history.read_all::<HistoryLine>()? {
            let rec = line.record;
            // History is written before the entry record; a superseded version
            // only counts once the entry has moved past it.
            let committed = inner
                .entries
                .iter()
                .any(|e| e.id == rec.entry_id && e.version > rec.version);
            if committed {
                let chain = inner.history.entry(rec.entry_id.clone()).or_default();
                if !chain.iter().any(|h| h.version == rec.version) {
                    chain.push(rec);
                }
            }
        }
        Ok(Self {
            embedder,
            clock,
            inner: RwLock::new(inner),
            writer: Mutex::new(Some(logs)),
        })
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    /// Top-`k` entries for `query`, optionally restricted to one category.
    pub fn retrieve(
        &self,
        query: &str,
        category: Option<ExperienceCategory>,
        k: usize,
        min_score: f64,
    ) -> Result<Vec<RetrievalHit>, RagError> {
        let q = self.embedder.embed(query)?;
        let inner = self.inner.read();
        rank_candidates(
            &q,
            inner
                .entries
                .iter()
                .filter(|e| category.is_none_or(|c| e.category == c))
                .map(|e| (e.id.as_str(), &e.embedding)),
            k,
            min_score,
        )
    }

    /// Retrieve and resolve to entries in one read snapshot.
    pub fn retrieve_entries(
        &self,
        query: &str,
        category: Option<ExperienceCategory>,
        k: usize,
        min_score: f64,
    ) -> Result<Vec<(RetrievalHit, ExperienceEntry)>, RagError> {
        let q = self.embedder.embed(query)?;
        let inner = self.inner.read();
        let hits = rank_candidates(
            &q,
            inner
                .entries
                .iter()
                .filter(|e| category.is_none_or(|c| e.category == c))
                .map(|e| (e.id.as_str(), &e.embedding)),
            k,
            min_score,
        )?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let entry = inner.entries.iter().find(|e| e.id == h.entry_id).cloned().expect("hit ids come from entries");
                (h, entry)
            })
            .collect())
    }

    /// Fold one piece of feedback into the store.
    ///
    /// The closest same-category entry scoring at least `tau_update` is
    /// merged with the feedback and rewritten in place; otherwise a new entry
    /// is created. The store is untouched if anything fails.
    pub fn update_experience(
        &self,
        feedback: &FeedbackRecord,
        synthesizer: &dyn ExperienceSynthesizer,
        tau_update: f64,
    ) -> Result<ExperienceUpdate, RagError> {
        if feedback.text.trim().is_empty() {
            return Err(RagError::InvalidFeedback("feedback text is empty".into()));
        }
        let writer = self.writer.lock();

        let hit = self.retrieve(&feedback.text, Some(feedback.category), 1, tau_update)?.into_iter().next();
        let now = self.clock.now_ms();

        match hit {
            Some(hit) => {
                let current = self.get(&hit.entry_id).ok_or_else(|| RagError::NotFound(hit.entry_id.clone()))?;
                let text = synthesizer.merge(&feedback.text, &current.text)?;
                if text.trim().is_empty() {
                    return Err(SynthesisError("synthesizer returned empty experience".into()).into());
                }
                let embedding = self.embedder.embed(&text)?;
                let superseded = HistoryRecord {
                    entry_id: current.id.clone(),
                    version: current.version,
                    text: current.text.clone(),
                    feedback_id: current.provenance.last().cloned().unwrap_or_default(),
                };
                let mut provenance = current.provenance.clone();
                provenance.push(feedback.id.clone());
                let updated = ExperienceEntry {
                    text,
                    embedding,
                    version: current.version + 1,
                    provenance,
                    updated_at: now,
                    ..current
                };
                if let Some(logs) = writer.as_ref() {
                    logs.history.append(&HistoryLine {
                        schema_version: EXPERIENCE_SCHEMA_VERSION,
                        record: superseded.clone(),
                    })?;
                    logs.entries.append(&EntryRecord {
                        schema_version: EXPERIENCE_SCHEMA_VERSION,
                        entry: updated.clone(),
                    })?;
                }
                let mut inner = self.inner.write();
                if let Some(slot) = inner.entries.iter_mut().find(|e| e.id == updated.id) {
                    *slot = updated.clone();
                }
                inner.history.entry(updated.id.clone()).or_default().push(superseded);
                Ok(ExperienceUpdate::Updated(updated))
            }
            None => {
                let text = synthesizer.create(&feedback.text)?;
                if text.trim().is_empty() {
                    return Err(SynthesisError("synthesizer returned empty experience".into()).into());
                }
                let embedding = self.embedder.embed(&text)?;
                let id = format!("exp-{:04}", self.inner.read().entries.len() + 1);
                let entry = ExperienceEntry {
                    id,
                    category: feedback.category,
                    text,
                    embedding,
                    version: 1,
                    provenance: vec![feedback.id.clone()],
                    created_at: now,
                    updated_at: now,
                };
                if let Some(logs) = writer.as_ref() {
                    logs.entries.append(&EntryRecord {
                        schema_version: EXPERIENCE_SCHEMA_VERSION,
                        entry: entry.clone(),
                    })?;
                }
                self.inner.write().entries.push(entry.clone());
                Ok(ExperienceUpdate::Inserted(entry))
            }
        }
    }

    /// Every version of an entry, oldest first, ending with the current one.
    pub fn experience_history(&self, entry_id: &str) -> Result<Vec<HistoryRecord>, RagError> {
        let inner = self.inner.read();
        let entry = inner
            .entries
            .iter()
            .find(|e| e.id == entry_id)
            .ok_or_else(|| RagError::NotFound(entry_id.to_string()))?;
        let mut chain = inner.history.get(entry_id).cloned().unwrap_or_default();
        chain.push(HistoryRecord {
            entry_id: entry.id.clone(),
            version: entry.version,
            text: entry.text.clone(),
            feedback_id: entry.provenance.last().cloned().unwrap_or_default(),
        });
        Ok(chain)
    }

    pub fn get(&self, id: &str) -> Option<ExperienceEntry> {
        self.inner.read().entries.iter().find(|e| e.id == id).cloned()
    }

    pub fn entries(&self, category: Option<ExperienceCategory>) -> Vec<ExperienceEntry> {
        self.inner
            .read()
            .entries
            .iter()
            .filter(|e| category.is_none_or(|c| e.category == c))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Serialized in-memory state plus on-disk log bytes, for equality checks.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&*self.inner.read()).expect("store state serializes");
        if let Some(logs) = self.writer.lock().as_ref() {
            out.extend(logs.entries.bytes().unwrap_or_default());
            out.extend(logs.history.bytes().unwrap_or_default());
        }
        out
    }
}
