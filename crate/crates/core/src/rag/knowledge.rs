use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::log::RecordLog;
use super::{rank_candidates, Embedder, Embedding, RagError, RetrievalHit};

/// A chunk is closed once it holds at least this many tokens.
pub const CHUNK_TARGET_TOKENS: usize = 200;
/// No chunk ever holds more tokens than this.
pub const CHUNK_MAX_TOKENS: usize = 400;

const KNOWLEDGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub source_doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub embedding: Embedding,
    pub tags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct KnowledgeRecord {
    schema_version: u32,
    entry: KnowledgeEntry,
}

/// Split a document into retrieval chunks.
///
/// Paragraphs are separated by blank lines. Adjacent paragraphs are merged
/// until a chunk reaches [`CHUNK_TARGET_TOKENS`] whitespace tokens; a
/// paragraph that would push the chunk past [`CHUNK_MAX_TOKENS`] starts a new
/// one, and paragraphs longer than the cap are cut every `CHUNK_MAX_TOKENS`
/// tokens.
pub fn chunk_document(text: &str) -> Vec<String> {
    let mut pieces: Vec<(String, usize)> = Vec::new();
    for paragraph in paragraphs(text) {
        let tokens: Vec<&str> = paragraph.split_whitespace().collect();
        if tokens.len() <= CHUNK_MAX_TOKENS {
            let n = tokens.len();
            pieces.push((paragraph.clone(), n));
        } else {
            for part in tokens.chunks(CHUNK_MAX_TOKENS) {
                pieces.push((part.join(" "), part.len()));
            }
        }
    }

    let mut chunks = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut count = 0;
    for (piece, n) in pieces {
        if !current.is_empty() && count + n > CHUNK_MAX_TOKENS {
            chunks.push(current.join("\n\n"));
            current.clear();
            count = 0;
        }
        current.push(piece);
        count += n;
        if count >= CHUNK_TARGET_TOKENS {
            chunks.push(current.join("\n\n"));
            current.clear();
            count = 0;
        }
    }
    if !current.is_empty() {
        chunks.push(current.join("\n\n"));
    }
    chunks
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut lines: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !lines.is_empty() {
                out.push(lines.join("\n").trim().to_string());
                lines.clear();
            }
        } else {
            lines.push(line);
        }
    }
    if !lines.is_empty() {
        out.push(lines.join("\n").trim().to_string());
    }
    out
}

#[derive(Default)]
struct Inner {
    entries: Vec<KnowledgeEntry>,
    docs: HashSet<String>,
}

/// Append-only knowledge store.
pub struct KnowledgeStore {
    embedder: Arc<dyn Embedder>,
    inner: RwLock<Inner>,
    writer: Mutex<Option<RecordLog>>,
}

impl KnowledgeStore {
    pub fn in_memory(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            inner: RwLock::new(Inner::default()),
            writer: Mutex::new(None),
        }
    }

    /// Open `dir/knowledge.log`, replaying every record.
    pub fn open(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, RagError> {
        let log = RecordLog::new(dir.join("knowledge.log"));
        let mut inner = Inner::default();
        for record in log.read_all::<KnowledgeRecord>()? {
            if record.schema_version != KNOWLEDGE_SCHEMA_VERSION {
                return Err(RagError::Corrupt(format!(
                    "unsupported knowledge record version {}",
                    record.schema_version
                )));
            }
            inner.docs.insert(record.entry.source_doc_id.clone());
            inner.entries.push(record.entry);
        }
        Ok(Self {
            embedder,
            inner: RwLock::new(inner),
            writer: Mutex::new(Some(log)),
        })
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    /// Chunk, embed and append a document. Fails without side effects if the
    /// document id is already indexed.
    pub fn index_knowledge(&self, doc_id: &str, full_text: &str, tags: &[String]) -> Result<Vec<KnowledgeEntry>, RagError> {
        if full_text.trim().is_empty() {
            return Err(RagError::EmptyText);
        }
        let writer = self.writer.lock();
        if self.inner.read().docs.contains(doc_id) {
            return Err(RagError::DuplicateDoc(doc_id.to_string()));
        }
        let mut entries = Vec::new();
        for (chunk_index, text) in chunk_document(full_text).into_iter().enumerate() {
            let embedding = self.embedder.embed(&text)?;
            entries.push(KnowledgeEntry {
                id: format!("{doc_id}#{chunk_index}"),
                source_doc_id: doc_id.to_string(),
                chunk_index,
                text,
                embedding,
                tags: tags.to_vec(),
            });
        }
        if entries.is_empty() {
            return Err(RagError::EmptyText);
        }
        if let Some(log) = writer.as_ref() {
            let records: Vec<_> = entries
                .iter()
                .map(|e| KnowledgeRecord {
                    schema_version: KNOWLEDGE_SCHEMA_VERSION,
                    entry: e.clone(),
                })
                .collect();
            log.append_all(&records)?;
        }
        let mut inner = self.inner.write();
        inner.docs.insert(doc_id.to_string());
        inner.entries.extend(entries.iter().cloned());
        Ok(entries)
    }

    pub fn retrieve(&self, query: &str, k: usize, min_score: f64) -> Result<Vec<RetrievalHit>, RagError> {
        self.retrieve_where(query, k, min_score, |_| true)
    }

    /// Retrieval restricted to entries matching `filter`.
    pub fn retrieve_where(
        &self,
        query: &str,
        k: usize,
        min_score: f64,
        filter: impl Fn(&KnowledgeEntry) -> bool,
    ) -> Result<Vec<RetrievalHit>, RagError> {
        let q = self.embedder.embed(query)?;
        let inner = self.inner.read();
        rank_candidates(
            &q,
            inner
                .entries
                .iter()
                .filter(|e| filter(e))
                .map(|e| (e.id.as_str(), &e.embedding)),
            k,
            min_score,
        )
    }

    pub fn get(&self, id: &str) -> Option<KnowledgeEntry> {
        self.inner.read().entries.iter().find(|e| e.id == id).cloned()
    }

    pub fn entries(&self) -> Vec<KnowledgeEntry> {
        self.inner.read().entries.clone()
    }

    pub fn with_tag(&self, tag: &str) -> Vec<KnowledgeEntry> {
        self.inner
            .read()
            .entries
            .iter()
            .filter(|e| e.tags.iter().any(|t| t == tag))
            .cloned()
            .collect()
    }

    pub fn contains_doc(&self, doc_id: &str) -> bool {
        self.inner.read().docs.contains(doc_id)
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::HashEmbedder;

    fn words(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn store() -> KnowledgeStore {
        KnowledgeStore::in_memory(Arc::new(HashEmbedder::default()))
    }

    #[test]
    fn three_short_paragraphs_merge() {
        let doc = format!("{}\n\n{}\n\n{}", words("a", 50), words("b", 50), words("c", 50));
        let chunks = chunk_document(&doc);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].split_whitespace().count(), 150);
    }

    #[test]
    fn overlong_paragraph_is_cut_at_cap() {
        let chunks = chunk_document(&words("w", 450));
        let counts: Vec<_> = chunks.iter().map(|c| c.split_whitespace().count()).collect();
        assert_eq!(counts, vec![400, 50]);
    }

    #[test]
    fn merge_stops_at_target_and_respects_cap() {
        // 150 + 150 reaches the target; 350 alone would exceed the cap with 100.
        let doc = [words("a", 150), words("b", 150), words("c", 100), words("d", 350)].join("\n\n");
        let counts: Vec<_> = chunk_document(&doc).iter().map(|c| c.split_whitespace().count()).collect();
        assert_eq!(counts, vec![300, 100, 350]);
    }

    #[test]
    fn whitespace_only_lines_separate_paragraphs() {
        let chunks = chunk_document("one two\n   \nthree");
        assert_eq!(chunks, vec!["one two\n\nthree".to_string()]);
    }

    #[test]
    fn duplicate_doc_is_rejected_without_change() {
        let s = store();
        let tags = vec!["screenwriting".to_string()];
        let entries = s.index_knowledge("guide", "Frame the hero in a close view.", &tags).unwrap();
        assert_eq!(entries[0].id, "guide#0");
        assert!(matches!(s.index_knowledge("guide", "other", &tags), Err(RagError::DuplicateDoc(_))));
        assert_eq!(s.len(), 1);
        assert!(matches!(s.index_knowledge("x", "  \n ", &tags), Err(RagError::EmptyText)));
    }

    #[test]
    fn self_query_ranks_first() {
        let s = store();
        s.index_knowledge("a", "dragons guard castles", &[]).unwrap();
        s.index_knowledge("b", "bears eat porridge in the morning", &[]).unwrap();
        let hits = s.retrieve("bears eat porridge in the morning", 3, -1.0).unwrap();
        assert_eq!(hits[0].entry_id, "b#0");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
        assert!(store().retrieve("anything", 3, 0.0).unwrap().is_empty());
    }

    #[test]
    fn persisted_log_replays_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let emb: Arc<dyn Embedder> = Arc::new(HashEmbedder::default());
        let s = KnowledgeStore::open(dir.path(), emb.clone()).unwrap();
        s.index_knowledge("doc", &format!("{}\n\n{}", words("x", 300), words("y", 10)), &["t".into()])
            .unwrap();
        let reopened = KnowledgeStore::open(dir.path(), emb).unwrap();
        assert_eq!(reopened.entries(), s.entries());
        assert!(reopened.contains_doc("doc"));
        assert_eq!(reopened.with_tag("t").len(), 2);
    }
}
