//! Adapter contracts for every external capability.
//!
//! Each capability is a trait with a deterministic mock implementation and
//! an HTTP implementation; callers only ever see `Arc<dyn Trait>` and the
//! shared [`AdapterError`] taxonomy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::StoreError;
use crate::domain::{ArtifactRef, BoundingBox, StyleSpec};

use super::Capability;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{capability:?} adapter failed: {message}")]
    Failure {
        capability: Capability,
        message: String,
        /// Worth retrying (timeouts, rate limits, 5xx).
        transient: bool,
    },
    #[error("{0:?} is not supported by this provider")]
    NotSupported(Capability),
    #[error("invalid adapter input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl AdapterError {
    pub fn failure(capability: Capability, message: impl Into<String>) -> Self {
        Self::Failure {
            capability,
            message: message.into(),
            transient: false,
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Failure { transient: true, .. })
    }
}

pub type AdapterResult<T> = Result<T, AdapterError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            seed: 42,
            max_tokens: 2048,
        }
    }
}

pub trait TextGenerator: Send + Sync {
    fn text_generate(&self, prompt: &str, params: &GenerationParams) -> AdapterResult<String>;
}

pub trait ImageGenerator: Send + Sync {
    /// `layout` pairs a label (character id) with the box it must occupy.
    fn text_to_image(
        &self,
        description: &str,
        magic_words: &[String],
        layout: &[(String, BoundingBox)],
        seed: u64,
    ) -> AdapterResult<ArtifactRef>;
}

pub trait Segmenter: Send + Sync {
    /// One binary mask per label, in label order.
    fn segment(&self, image: &ArtifactRef, labels: &[String]) -> AdapterResult<ArtifactRef>;
}

pub trait Inpainter: Send + Sync {
    /// Repaint mask `i` from `descriptions[i]`.
    fn inpaint(&self, image: &ArtifactRef, masks: &ArtifactRef, descriptions: &[String]) -> AdapterResult<ArtifactRef>;
}

pub trait DepthEstimator: Send + Sync {
    fn depth(&self, image: &ArtifactRef) -> AdapterResult<ArtifactRef>;
}

pub trait StyleTransferer: Send + Sync {
    fn style_transfer(
        &self,
        style: &StyleSpec,
        description: &str,
        image: &ArtifactRef,
        depth: &ArtifactRef,
        lambda_ct: f64,
    ) -> AdapterResult<ArtifactRef>;
}

pub trait SpeechSynthesizer: Send + Sync {
    /// Returns the audio and its duration in milliseconds.
    fn tts(&self, text: &str, voice_id: &str) -> AdapterResult<(ArtifactRef, u64)>;
}

pub trait MusicSelector: Send + Sync {
    fn music_select(&self, mood_tag: &str, duration_ms: u64) -> AdapterResult<ArtifactRef>;
}

pub trait Critic: Send + Sync {
    /// Modification suggestions; empty means the image is acceptable.
    fn critique(&self, image: &ArtifactRef, description: &str) -> AdapterResult<Vec<String>>;
}

pub trait Animator: Send + Sync {
    fn animate(&self, image: &ArtifactRef, duration_ms: u64) -> AdapterResult<ArtifactRef>;
}

/// One provider per capability.
#[derive(Clone)]
pub struct AdapterSet {
    pub text: Arc<dyn TextGenerator>,
    pub image: Arc<dyn ImageGenerator>,
    pub segmenter: Arc<dyn Segmenter>,
    pub inpainter: Arc<dyn Inpainter>,
    pub depth: Arc<dyn DepthEstimator>,
    pub style: Arc<dyn StyleTransferer>,
    pub speech: Arc<dyn SpeechSynthesizer>,
    pub music: Arc<dyn MusicSelector>,
    pub critic: Arc<dyn Critic>,
    pub animator: Arc<dyn Animator>,
}
