//! Three-stage storyboard rendering per shot: composition from the image
//! description with magic-word framing and layout boxes, character
//! consistency by segmenting and repainting each placed character from its
//! portrait description, and style consistency by depth-conditioned style
//! transfer. A critic loop feeds its suggestions into image experience and
//! regenerates until the critic is satisfied or the round budget runs out.

pub mod magic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{ArtifactStore, StoreError};
use crate::domain::{normalize_whitespace, ArtifactRef, Character, MediaType, Script, Shot, StyleSpec};
use crate::rag::{
    ExperienceCategory, ExperienceStore, ExperienceSynthesizer, FeedbackAuthor, FeedbackRecord, FeedbackTarget, RagError,
};
use crate::utility::media::{MaskSet, Raster};
use crate::utility::{AdapterError, AdapterSet};

pub use magic::{corner_pixel, DuplicateMagicWord, MagicWord, MagicWordRegistry};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error("shot {shot} places unknown character {character:?}")]
    UnknownCharacter { shot: String, character: String },
    #[error("shot {0} has no styled image to critique")]
    IncompleteLineage(String),
    #[error("artifact is not a usable raster: {0}")]
    BadRaster(String),
}

/// Image lineage of one shot. Stages are filled in order; a later stage is
/// never present without the earlier ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotImageSet {
    pub shot_id: String,
    /// Prompt sent to text-to-image for `composed`.
    pub prompt: String,
    pub seed: u64,
    pub composed: Option<ArtifactRef>,
    pub masks: Option<ArtifactRef>,
    pub character_consistent: Option<ArtifactRef>,
    pub depth: Option<ArtifactRef>,
    pub styled: Option<ArtifactRef>,
    pub attempts: u32,
    /// Placed characters whose mask came back empty.
    #[serde(default)]
    pub segmentation_misses: Vec<String>,
}

impl ShotImageSet {
    pub fn is_complete(&self) -> bool {
        self.composed.is_some() && self.character_consistent.is_some() && self.styled.is_some()
    }

    /// Stages present form a prefix of composed, character-consistent, styled.
    pub fn lineage_is_prefix(&self) -> bool {
        let stages = [self.composed.is_some(), self.character_consistent.is_some(), self.styled.is_some()];
        stages.windows(2).all(|w| w[0] || !w[1])
    }
}

/// Final text-to-image prompt and the experience behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub text: String,
    pub experience_used: Vec<String>,
    /// Terms removed from the description because experience said to avoid them.
    pub avoided_terms: Vec<String>,
}

/// Outcome of the critic loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefineOutcome {
    Accepted(ShotImageSet),
    Rejected { image_set: ShotImageSet, outstanding: Vec<String> },
}

impl RefineOutcome {
    pub fn image_set(&self) -> &ShotImageSet {
        match self {
            Self::Accepted(s) | Self::Rejected { image_set: s, .. } => s,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Self::Accepted(_))
    }
}

const AVOID_MARKER: &str = "avoid the term \"";

/// Split experience text into guidance clauses and avoid-term directives.
/// A clause of the form `avoid the term "X"` names a term to strip from the
/// description instead of adding guidance.
pub fn split_guidance(experience: &str) -> (Vec<String>, Vec<String>) {
    let mut clauses = Vec::new();
    let mut avoid = Vec::new();
    for clause in experience.split(';').map(normalize_whitespace).filter(|c| !c.is_empty()) {
        let lower = clause.to_lowercase();
        match lower.find(AVOID_MARKER) {
            Some(pos) => {
                let rest = &clause[pos + AVOID_MARKER.len()..];
                if let Some(end) = rest.find('"') {
                    avoid.push(rest[..end].to_string());
                } else {
                    clauses.push(clause);
                }
            }
            None => clauses.push(clause),
        }
    }
    (clauses, avoid)
}

/// Remove whole-word, case-insensitive occurrences of `term`.
pub fn strip_term(text: &str, term: &str) -> String {
    let term_words: Vec<String> = term.split_whitespace().map(str::to_lowercase).collect();
    if term_words.is_empty() {
        return text.to_string();
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let bare = |w: &str| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let n = term_words.len();
        if i + n <= words.len() && (0..n).all(|k| bare(words[i + k]) == term_words[k]) {
            // keep trailing punctuation of the last removed word
            let last = words[i + n - 1];
            let tail: String = last.chars().rev().take_while(|c| !c.is_alphanumeric()).collect::<Vec<_>>().into_iter().rev().collect();
            if let (false, Some(prev)) = (tail.is_empty(), out.last_mut()) {
                prev.push_str(&tail);
            }
            i += n;
        } else {
            out.push(words[i].to_string());
            i += 1;
        }
    }
    out.join(" ")
}

/// Build the text-to-image prompt: magic-word phrases joined by `", "`, then
/// the image description, then retrieved image experience as `"; "`-separated
/// trailing clauses.
pub fn compose_prompt(
    shot: &Shot,
    erag: &ExperienceStore,
    k_experience: usize,
    min_score: f64,
) -> Result<ComposedPrompt, RagError> {
    let hits = match erag.retrieve_entries(&shot.image_description, Some(ExperienceCategory::Image), k_experience, min_score) {
        Ok(h) => h,
        Err(RagError::EmptyText) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut description = shot.image_description.clone();
    let mut guidance: Vec<String> = Vec::new();
    let mut avoided = Vec::new();
    let mut experience_used = Vec::new();
    for (hit, entry) in hits {
        experience_used.push(hit.entry_id);
        let (clauses, avoid) = split_guidance(&entry.text);
        for term in avoid {
            description = strip_term(&description, &term);
            avoided.push(term);
        }
        for c in clauses {
            if !guidance.contains(&c) {
                guidance.push(c);
            }
        }
    }
    let mut text = if shot.magic_words.is_empty() {
        description
    } else {
        format!("{}, {}", shot.magic_words.join(", "), description)
    };
    for g in &guidance {
        text.push_str("; ");
        text.push_str(g);
    }
    Ok(ComposedPrompt {
        text,
        experience_used,
        avoided_terms: avoided,
    })
}

#[derive(Debug, Clone)]
pub struct ImageSettings {
    pub k_experience: usize,
    pub experience_min_score: f64,
    pub tau_update: f64,
    pub max_refine_rounds: u32,
}

impl ImageSettings {
    pub fn from_config(cfg: &crate::config::EngineConfig) -> Self {
        Self {
            k_experience: cfg.retrieval.k_experience,
            experience_min_score: cfg.retrieval.experience_min_score,
            tau_update: cfg.retrieval.tau_update,
            max_refine_rounds: cfg.image.max_refine_rounds,
        }
    }
}

impl Default for ImageSettings {
    fn default() -> Self {
        Self::from_config(&crate::config::EngineConfig::default())
    }
}

#[derive(Clone)]
pub struct ImagePipeline {
    pub adapters: AdapterSet,
    pub store: Arc<dyn ArtifactStore>,
    pub erag: Arc<ExperienceStore>,
    pub synthesizer: Arc<dyn ExperienceSynthesizer>,
    pub settings: ImageSettings,
}

impl ImagePipeline {
    pub fn new(
        adapters: AdapterSet,
        store: Arc<dyn ArtifactStore>,
        erag: Arc<ExperienceStore>,
        synthesizer: Arc<dyn ExperienceSynthesizer>,
        settings: ImageSettings,
    ) -> Self {
        Self {
            adapters,
            store,
            erag,
            synthesizer,
            settings,
        }
    }

    pub fn compose_prompt(&self, shot: &Shot) -> Result<ComposedPrompt, RagError> {
        compose_prompt(shot, &self.erag, self.settings.k_experience, self.settings.experience_min_score)
    }

    /// Stage one: the composed image `i^co` and the prompt it came from.
    pub fn generate_composed(&self, shot: &Shot, seed: u64) -> Result<(ArtifactRef, String), ImageError> {
        let prompt = self.compose_prompt(shot)?.text;
        let layout: Vec<_> = shot
            .character_placements
            .iter()
            .map(|p| (p.character_id.clone(), p.bbox))
            .collect();
        let image = self.adapters.image.text_to_image(&prompt, &shot.magic_words, &layout, seed)?;
        Ok((image, prompt))
    }

    /// Stage two: segment each placed character and repaint it from its
    /// portrait description. Returns `(i^ch, masks, labels with empty masks)`.
    pub fn enforce_character_consistency(
        &self,
        composed: &ArtifactRef,
        shot: &Shot,
        characters: &[Character],
    ) -> Result<(ArtifactRef, ArtifactRef, Vec<String>), ImageError> {
        let mut labels = Vec::new();
        let mut portraits = Vec::new();
        for p in &shot.character_placements {
            let c = characters
                .iter()
                .find(|c| c.id == p.character_id)
                .ok_or_else(|| ImageError::UnknownCharacter {
                    shot: shot.id.clone(),
                    character: p.character_id.clone(),
                })?;
            labels.push(c.id.clone());
            portraits.push(c.separate_description.clone());
        }
        if labels.is_empty() {
            let raster = Raster::from_ppm(&self.store.get(composed)?).map_err(ImageError::BadRaster)?;
            let empty = MaskSet {
                width: raster.width,
                height: raster.height,
                masks: Vec::new(),
            };
            let masks = self.store.put(&empty.to_bytes(), MediaType::MaskSet)?;
            return Ok((composed.clone(), masks, Vec::new()));
        }
        let masks = self.adapters.segmenter.segment(composed, &labels)?;
        let set = MaskSet::from_bytes(&self.store.get(&masks)?).map_err(ImageError::BadRaster)?;
        let misses: Vec<String> = set.masks.iter().filter(|m| m.is_empty()).map(|m| m.label.clone()).collect();
        if !misses.is_empty() {
            tracing::warn!(shot = %shot.id, ?misses, "segmentation found no region for some characters");
        }
        let repainted = self.adapters.inpainter.inpaint(composed, &masks, &portraits)?;
        Ok((repainted, masks, misses))
    }

    /// Stage three: depth map of `i^ch`, then style transfer with the raw
    /// image description. Returns `(i^g, depth)`.
    pub fn enforce_style(&self, consistent: &ArtifactRef, shot: &Shot, style: &StyleSpec) -> Result<(ArtifactRef, ArtifactRef), ImageError> {
        let depth = self.adapters.depth.depth(consistent)?;
        let styled = self
            .adapters
            .style
            .style_transfer(style, &shot.image_description, consistent, &depth, style.lambda_ct)?;
        Ok((styled, depth))
    }

    /// All three stages for one shot.
    pub fn render_shot(
        &self,
        shot: &Shot,
        characters: &[Character],
        style: &StyleSpec,
        seed: u64,
        attempts: u32,
    ) -> Result<ShotImageSet, ImageError> {
        let (composed, prompt) = self.generate_composed(shot, seed)?;
        let (consistent, masks, misses) = self.enforce_character_consistency(&composed, shot, characters)?;
        let (styled, depth) = self.enforce_style(&consistent, shot, style)?;
        Ok(ShotImageSet {
            shot_id: shot.id.clone(),
            prompt,
            seed,
            composed: Some(composed),
            masks: Some(masks),
            character_consistent: Some(consistent),
            depth: Some(depth),
            styled: Some(styled),
            attempts,
            segmentation_misses: misses,
        })
    }

    /// Render every shot of `script`, shots in parallel. `seeds[i]` is the
    /// seed of the i-th shot in script order.
    pub fn render_script(&self, script: &Script, style: &StyleSpec, seeds: &[u64]) -> Result<Vec<ShotImageSet>, ImageError> {
        let shots: Vec<&Shot> = script.shots().collect();
        assert_eq!(shots.len(), seeds.len(), "one seed per shot");
        std::thread::scope(|scope| {
            let handles: Vec<_> = shots
                .iter()
                .zip(seeds)
                .map(|(shot, &seed)| scope.spawn(move || self.render_shot(shot, &script.characters, style, seed, 1)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("render thread panicked"))
                .collect()
        })
    }

    /// Ask the critic about the styled image. Each suggestion becomes image
    /// experience and the shot is rendered again, up to
    /// `max_refine_rounds` regenerations.
    pub fn critique_and_refine(
        &self,
        image_set: ShotImageSet,
        shot: &Shot,
        characters: &[Character],
        style: &StyleSpec,
    ) -> Result<RefineOutcome, ImageError> {
        let mut set = image_set;
        loop {
            let styled = set.styled.clone().ok_or_else(|| ImageError::IncompleteLineage(shot.id.clone()))?;
            let suggestions = self.adapters.critic.critique(&styled, &set.prompt)?;
            if suggestions.is_empty() {
                return Ok(RefineOutcome::Accepted(set));
            }
            if set.attempts > self.settings.max_refine_rounds {
                return Ok(RefineOutcome::Rejected {
                    image_set: set,
                    outstanding: suggestions,
                });
            }
            for (i, s) in suggestions.iter().enumerate() {
                let feedback = FeedbackRecord::new(
                    format!("critic-{}-{}-{}", shot.id, set.attempts, i + 1),
                    ExperienceCategory::Image,
                    s.clone(),
                    Some(FeedbackTarget::Artifact(styled.clone())),
                    FeedbackAuthor::MultiModalCritic,
                );
                self.erag
                    .update_experience(&feedback, self.synthesizer.as_ref(), self.settings.tau_update)?;
            }
            set = self.render_shot(shot, characters, style, set.seed, set.attempts + 1)?;
        }
    }
}
