//! Utility catalogue and adapter layer.
//!
//! Every external capability (language model, text-to-image, segmentation,
//! inpainting, depth, style transfer, speech, music, critic, animation) is
//! described by a [`UtilityDescriptor`] whose usage instructions live in the
//! knowledge store. Task goals are matched against those instructions to pick
//! a utility, or to report that none is good enough.

pub mod adapters;
pub mod http;
pub mod media;
pub mod mock;
pub mod mock_text;

use std::fmt;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ProviderKind;
use crate::domain::MediaType;
use crate::rag::{cosine, KnowledgeStore, RagError};

pub use adapters::*;

/// Knowledge-store tag carried by every utility instruction chunk.
pub const UTILITY_DOC_TAG: &str = "utility-doc";

/// Suggestion text of every gap report.
pub const GAP_SUGGESTION: &str = "external search required";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Capability {
    TextGeneration,
    TextToImage,
    Segmentation,
    Inpainting,
    DepthEstimation,
    StyleTransfer,
    TextToSpeech,
    MusicSelection,
    MultiModalCritique,
    VideoClipGeneration,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoSignature {
    pub inputs: Vec<MediaType>,
    pub outputs: Vec<MediaType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityDescriptor {
    pub id: String,
    pub capability: Capability,
    pub usage_instructions: String,
    pub io_signature: IoSignature,
    pub provider: ProviderKind,
}

impl UtilityDescriptor {
    pub fn doc_id(&self) -> String {
        format!("utility:{}", self.id)
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("utility {0:?} is already registered")]
    DuplicateUtility(String),
    #[error("utility {0:?} has no usage instructions")]
    EmptyInstructions(String),
    #[error(transparent)]
    Knowledge(#[from] RagError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUtility {
    pub utility_id: String,
    pub capability: Capability,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityGapReport {
    pub task_goal: String,
    /// Closest utility and its score, if any utility is registered.
    pub best_hit: Option<(String, f64)>,
    pub threshold: f64,
    pub suggestion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Suggestion {
    Ranked(Vec<RankedUtility>),
    Gap(UtilityGapReport),
}

/// Registered utilities, in registration order.
#[derive(Default)]
pub struct UtilityRegistry {
    descriptors: RwLock<Vec<UtilityDescriptor>>,
    writer: Mutex<()>,
}

impl UtilityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store `descriptor` and index its instructions into `krag` under
    /// `utility:<id>`. Instructions already present in a reopened knowledge
    /// store are not indexed again.
    pub fn register(&self, descriptor: UtilityDescriptor, krag: &KnowledgeStore) -> Result<(), RegistryError> {
        let _w = self.writer.lock();
        if self.descriptors.read().iter().any(|d| d.id == descriptor.id) {
            return Err(RegistryError::DuplicateUtility(descriptor.id));
        }
        if descriptor.usage_instructions.trim().is_empty() {
            return Err(RegistryError::EmptyInstructions(descriptor.id));
        }
        let doc_id = descriptor.doc_id();
        if !krag.contains_doc(&doc_id) {
            krag.index_knowledge(&doc_id, &descriptor.usage_instructions, &[UTILITY_DOC_TAG.to_string()])?;
        }
        self.descriptors.write().push(descriptor);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<UtilityDescriptor> {
        self.descriptors.read().iter().find(|d| d.id == id).cloned()
    }

    pub fn by_capability(&self, capability: Capability) -> Option<UtilityDescriptor> {
        self.descriptors.read().iter().find(|d| d.capability == capability).cloned()
    }

    pub fn all(&self) -> Vec<UtilityDescriptor> {
        self.descriptors.read().clone()
    }

    pub fn len(&self) -> usize {
        self.descriptors.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rank utilities for `task_goal` by their best instruction chunk.
    ///
    /// Returns the ranking when the best score reaches `threshold`, otherwise
    /// a gap report carrying the nearest miss.
    pub fn suggest(&self, task_goal: &str, krag: &KnowledgeStore, threshold: f64) -> Suggestion {
        let gap = |best_hit| {
            Suggestion::Gap(UtilityGapReport {
                task_goal: task_goal.to_string(),
                best_hit,
                threshold,
                suggestion: GAP_SUGGESTION.to_string(),
            })
        };
        let query = match krag.embedder().embed(task_goal) {
            Ok(q) => q,
            Err(_) => return gap(None),
        };
        let entries = krag.with_tag(UTILITY_DOC_TAG);
        let mut ranked: Vec<RankedUtility> = self
            .descriptors
            .read()
            .iter()
            .filter_map(|d| {
                let doc = d.doc_id();
                entries
                    .iter()
                    .filter(|e| e.source_doc_id == doc)
                    .filter_map(|e| cosine(&query, &e.embedding).ok())
                    .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s))))
                    .map(|score| RankedUtility {
                        utility_id: d.id.clone(),
                        capability: d.capability,
                        score,
                    })
            })
            .collect();
        ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        match ranked.first() {
            None => gap(None),
            Some(top) if top.score < threshold => gap(Some((top.utility_id.clone(), top.score))),
            Some(_) => Suggestion::Ranked(ranked),
        }
    }
}

fn builtin(id: &str, capability: Capability, instructions: &str, inputs: &[MediaType], outputs: &[MediaType]) -> UtilityDescriptor {
    UtilityDescriptor {
        id: id.to_string(),
        capability,
        usage_instructions: instructions.to_string(),
        io_signature: IoSignature {
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
        },
        provider: ProviderKind::Mock,
    }
}

/// The ten built-in utilities, one per capability.
pub fn builtin_utilities() -> Vec<UtilityDescriptor> {
    use Capability::*;
    use MediaType::*;
    vec![
        builtin(
            "language-model",
            TextGeneration,
            "Language model agent: writes titles, characters, actions, shots and workflow plans as structured documents.",
            &[Text],
            &[Text],
        ),
        builtin(
            "text-to-image",
            TextToImage,
            "Generate an image from a text description, with magic-word prefixes for framing and layout boxes placing each character.",
            &[Text],
            &[ImageRaster],
        ),
        builtin(
            "segmenter",
            Segmentation,
            "Segment the character regions of a picture into binary masks, one mask per label.",
            &[ImageRaster],
            &[MaskSet],
        ),
        builtin(
            "inpainter",
            Inpainting,
            "Inpaint masked regions, re-illustrating each character with its separate portrait description.",
            &[ImageRaster, MaskSet, Text],
            &[ImageRaster],
        ),
        builtin(
            "depth-estimator",
            DepthEstimation,
            "Estimate a depth map of a picture for conditioning later edits.",
            &[ImageRaster],
            &[DepthMap],
        ),
        builtin(
            "style-transfer",
            StyleTransfer,
            "Keep image style consistent across shots: transfer a learned style onto each image with depth conditioning, using an edit intensity lambda between 0 and 1.",
            &[ImageRaster, DepthMap, Text],
            &[ImageRaster],
        ),
        builtin(
            "speech",
            TextToSpeech,
            "Speak narration aloud as voice audio and report its duration in milliseconds.",
            &[Text],
            &[AudioWave],
        ),
        builtin(
            "music",
            MusicSelection,
            "Select background music matching a mood tag for the whole video duration.",
            &[Text],
            &[AudioWave],
        ),
        builtin(
            "critic",
            MultiModalCritique,
            "Critic model reviews a rendered picture against its description and lists modification suggestions.",
            &[ImageRaster, Text],
            &[Text],
        ),
        builtin(
            "animator",
            VideoClipGeneration,
            "Animate a keyframe into a short video clip of a given duration.",
            &[ImageRaster],
            &[VideoClip],
        ),
    ]
}
