//! Retrieval-augmented stores.
//!
//! Two stores share one embedding space: the knowledge store (append-only
//! chunks of expert documents and utility instructions) and the experience
//! store (versioned statements distilled from reviewer and critic feedback).

mod embed;
mod experience;
mod knowledge;
mod log;

use thiserror::Error;

pub use embed::{cosine, fnv1a64, tokenize, Embedder, Embedding, HashEmbedder, DEFAULT_DIMENSION};
pub use experience::{
    ExperienceCategory, ExperienceEntry, ExperienceStore, ExperienceSynthesizer, ExperienceUpdate, FeedbackAuthor,
    FeedbackRecord, FeedbackTarget, HistoryRecord, SynthesisError,
};
pub use knowledge::{chunk_document, KnowledgeEntry, KnowledgeStore, CHUNK_MAX_TOKENS, CHUNK_TARGET_TOKENS};
pub use log::RecordLog;

use serde::{Deserialize, Serialize};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("text has no alphanumeric tokens")]
    EmptyText,
    #[error("embedding dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("document {0:?} is already indexed")]
    DuplicateDoc(String),
    #[error("entry {0:?} not found")]
    NotFound(String),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("experience synthesizer failed: {0}")]
    Synthesizer(#[from] SynthesisError),
    #[error("store persistence failed: {0}")]
    Persistence(#[from] std::io::Error),
    #[error("store log is corrupt: {0}")]
    Corrupt(String),
}

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Score `candidates` against `query` and keep the best `k` with
/// `score >= min_score`. Candidates must be given in insertion order; ties
/// keep that order.
pub fn rank_candidates<'a>(
    query: &Embedding,
    candidates: impl IntoIterator<Item = (&'a str, &'a Embedding)>,
    k: usize,
    min_score: f64,
) -> Result<Vec<RetrievalHit>, RagError> {
    let mut scored = Vec::new();
    for (id, emb) in candidates {
        let score = cosine(query, emb)?;
        if score >= min_score {
            scored.push((id, score));
        }
    }
    // stable: equal scores stay in insertion order
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("cosine scores are finite"));
    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, score))| RetrievalHit {
            entry_id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect())
}
