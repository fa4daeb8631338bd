//! Weighted scoring of scripts and images, aggregation across stories, and
//! reviewer score intake.
//!
//! Scores live on a `[0, 100]` scale. Script overalls are reported with one
//! decimal and image overalls with two, rounded half-up; the unrounded value
//! is always kept alongside.

use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::clock::Clock;
use crate::domain::ArtifactRef;
use crate::rag::{
    ExperienceCategory, ExperienceStore, ExperienceSynthesizer, ExperienceUpdate, FeedbackAuthor, FeedbackRecord,
    FeedbackTarget, RagError, RecordLog,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("weights are invalid: {0}")]
    WeightInvalid(String),
    #[error("score {name} = {value} is outside [0, 100]")]
    ScoreOutOfRange { name: &'static str, value: f64 },
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("review target {0} does not exist")]
    UnknownTarget(String),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error("score log I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-up rounding to `decimals` places. A tiny bias absorbs binary
/// representation error so that e.g. `70.095` rounds up.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    ((x * scale) + 0.5 + 1e-9).floor() / scale
}

/// Three-dimension score record with fixed dimension names.
pub trait ScoreTriple: Sized + Copy {
    const NAMES: [&'static str; 3];
    /// Decimal places used when reporting the overall score.
    const REPORT_DECIMALS: u32;
    fn dims(&self) -> [f64; 3];
    fn from_dims(d: [f64; 3]) -> Self;
    fn default_weights() -> WeightVector;

    fn validate(&self) -> Result<(), EvalError> {
        for (name, value) in Self::NAMES.iter().zip(self.dims()) {
            if !(0.0..=100.0).contains(&value) {
                return Err(EvalError::ScoreOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptScores {
    pub completeness: f64,
    pub fidelity: f64,
    pub logical_coherence: f64,
}

impl ScriptScores {
    pub fn new(completeness: f64, fidelity: f64, logical_coherence: f64) -> Self {
        Self {
            completeness,
            fidelity,
            logical_coherence,
        }
    }
}

impl ScoreTriple for ScriptScores {
    const NAMES: [&'static str; 3] = ["completeness", "fidelity", "logical_coherence"];
    const REPORT_DECIMALS: u32 = 1;
    fn dims(&self) -> [f64; 3] {
        [self.completeness, self.fidelity, self.logical_coherence]
    }
    fn from_dims(d: [f64; 3]) -> Self {
        Self::new(d[0], d[1], d[2])
    }
    fn default_weights() -> WeightVector {
        WeightVector::new([0.3, 0.3, 0.4]).expect("default script weights are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub fidelity: f64,
    pub rationality: f64,
    pub element_state: f64,
}

impl ImageScores {
    pub fn new(fidelity: f64, rationality: f64, element_state: f64) -> Self {
        Self {
            fidelity,
            rationality,
            element_state,
        }
    }
}

impl ScoreTriple for ImageScores {
    const NAMES: [&'static str; 3] = ["fidelity", "rationality", "element_state"];
    const REPORT_DECIMALS: u32 = 2;
    fn dims(&self) -> [f64; 3] {
        [self.fidelity, self.rationality, self.element_state]
    }
    fn from_dims(d: [f64; 3]) -> Self {
        Self::new(d[0], d[1], d[2])
    }
    fn default_weights() -> WeightVector {
        WeightVector::new([0.5, 0.3, 0.2]).expect("default image weights are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: [f64; 3],
}

impl WeightVector {
    pub fn new(weights: [f64; 3]) -> Result<Self, EvalError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EvalError::WeightInvalid(format!("{weights:?} has a negative or non-finite weight")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EvalError::WeightInvalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub raw: f64,
    pub reported: f64,
}

/// Weighted overall of one score record.
pub fn overall<S: ScoreTriple>(scores: &S, weights: &WeightVector) -> Result<Overall, EvalError> {
    scores.validate()?;
    let raw: f64 = scores.dims().iter().zip(weights.weights).map(|(s, w)| s * w).sum();
    Ok(Overall {
        raw,
        reported: round_half_up(raw, S::REPORT_DECIMALS),
    })
}

/// Script overall with the default weights 0.3 / 0.3 / 0.4.
pub fn script_overall(scores: &ScriptScores) -> Result<Overall, EvalError> {
    overall(scores, &ScriptScores::default_weights())
}

/// Image overall with the default weights 0.5 / 0.3 / 0.2.
pub fn image_overall(scores: &ImageScores) -> Result<Overall, EvalError> {
    overall(scores, &ImageScores::default_weights())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate<S> {
    pub count: usize,
    pub means: S,
    /// Weighted overall of the per-dimension means. Because the overall is
    /// linear this equals the mean of the per-item overalls.
    pub overall: Overall,
}

pub fn aggregate<S: ScoreTriple>(scores: &[S], weights: &WeightVector) -> Result<Aggregate<S>, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sums = [0.0; 3];
    for s in scores {
        s.validate()?;
        for (acc, v) in sums.iter_mut().zip(s.dims()) {
            *acc += v;
        }
    }
    let n = scores.len() as f64;
    let means = S::from_dims(sums.map(|v| v / n));
    Ok(Aggregate {
        count: scores.len(),
        means,
        overall: overall(&means, weights)?,
    })
}

/// What a review is about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReviewTarget {
    WorkflowNode { node_id: String },
    PromptArtifact { artifact: ArtifactRef },
    ImageArtifact { artifact: ArtifactRef },
    UtilityReport { report_id: String },
}

impl ReviewTarget {
    /// Experience category that free-text feedback on this target feeds.
    pub fn category(&self) -> ExperienceCategory {
        match self {
            Self::WorkflowNode { .. } => ExperienceCategory::Workflow,
            Self::PromptArtifact { .. } => ExperienceCategory::Prompt,
            Self::ImageArtifact { .. } => ExperienceCategory::Image,
            Self::UtilityReport { .. } => ExperienceCategory::Utility,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::WorkflowNode { node_id } => format!("node {node_id}"),
            Self::PromptArtifact { artifact } | Self::ImageArtifact { artifact } => {
                format!("artifact {}", artifact.content_hash)
            }
            Self::UtilityReport { report_id } => format!("utility report {report_id}"),
        }
    }

    fn feedback_target(&self) -> Option<FeedbackTarget> {
        match self {
            Self::WorkflowNode { node_id } => Some(FeedbackTarget::Node(node_id.clone())),
            Self::PromptArtifact { artifact } | Self::ImageArtifact { artifact } => {
                Some(FeedbackTarget::Artifact(artifact.clone()))
            }
            Self::UtilityReport { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "scores", rename_all = "snake_case")]
pub enum DimensionScores {
    Script(ScriptScores),
    Image(ImageScores),
}

impl DimensionScores {
    pub fn overall(&self) -> Result<Overall, EvalError> {
        match self {
            Self::Script(s) => script_overall(s),
            Self::Image(s) => image_overall(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub target: ReviewTarget,
    pub scores: Option<DimensionScores>,
    pub overall: Option<Overall>,
    pub free_text: String,
    pub author: FeedbackAuthor,
    pub created_at: u64,
    /// Feedback record created from the free text, if any.
    pub feedback_id: Option<String>,
}

/// Everything a review produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewOutcome {
    pub record: ScoreRecord,
    pub feedback: Option<(FeedbackRecord, ExperienceUpdate)>,
}

/// Persisted score records.
pub struct ScoreBook {
    records: RwLock<Vec<ScoreRecord>>,
    writer: Mutex<()>,
    log: Option<RecordLog>,
    clock: Arc<dyn Clock>,
}

impl ScoreBook {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            records: RwLock::new(Vec::new()),
            writer: Mutex::new(()),
            log: None,
            clock,
        }
    }

    /// Open (or create) a score book backed by an append-only log.
    pub fn open(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, EvalError> {
        let log = RecordLog::new(path.as_ref());
        let records = log.read_all()?;
        Ok(Self {
            records: RwLock::new(records),
            writer: Mutex::new(()),
            log: Some(log),
            clock,
        })
    }

    pub fn records(&self) -> Vec<ScoreRecord> {
        self.records.read().clone()
    }

    pub fn for_target(&self, target: &ReviewTarget) -> Vec<ScoreRecord> {
        self.records.read().iter().filter(|r| &r.target == target).cloned().collect()
    }

    /// Store a review. `exists` decides whether the target resolves; free
    /// text becomes feedback routed to the target's experience category.
    /// On any error nothing is stored.
    #[allow(clippy::too_many_arguments)]
    pub fn ingest_review(
        &self,
        target: ReviewTarget,
        scores: Option<DimensionScores>,
        free_text: &str,
        author: FeedbackAuthor,
        exists: &dyn Fn(&ReviewTarget) -> bool,
        erag: &ExperienceStore,
        synthesizer: &dyn ExperienceSynthesizer,
        tau_update: f64,
    ) -> Result<ReviewOutcome, EvalError> {
        if !exists(&target) {
            return Err(EvalError::UnknownTarget(target.describe()));
        }
        let overall = scores.as_ref().map(DimensionScores::overall).transpose()?;
        let _guard = self.writer.lock();
        let id = format!("review-{}", self.records.read().len() + 1);
        let feedback = if free_text.trim().is_empty() {
            None
        } else {
            let record = FeedbackRecord::new(
                format!("{id}-feedback"),
                target.category(),
                free_text.trim(),
                target.feedback_target(),
                author,
            );
            let update = erag.update_experience(&record, synthesizer, tau_update)?;
            Some((record, update))
        };
        let record = ScoreRecord {
            id,
            target,
            scores,
            overall,
            free_text: free_text.to_string(),
            author,
            created_at: self.clock.now_ms(),
            feedback_id: feedback.as_ref().map(|(f, _)| f.id.clone()),
        };
        if let Some(log) = &self.log {
            log.append(&record)?;
        }
        self.records.write().push(record.clone());
        Ok(ReviewOutcome { record, feedback })
    }

    /// Canonical table of every score record, for reports.
    pub fn export_table(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            target: &'a ReviewTarget,
            scores: &'a Option<DimensionScores>,
            overall: &'a Option<Overall>,
        }
        #[derive(Serialize)]
        struct Table<'a> {
            schema_version: u32,
            rows: Vec<Row<'a>>,
        }
        let records = self.records.read();
        let table = Table {
            schema_version: 1,
            rows: records
                .iter()
                .map(|r| Row {
                    id: &r.id,
                    target: &r.target,
                    scores: &r.scores,
                    overall: &r.overall,
                })
                .collect(),
        };
        canonical::to_canonical_string(&table).expect("score table serializes")
    }
}
