//! Prompt templates, retrieval augmentation and the script-writing chain.
//!
//! Every prompt is rendered from a template and then extended with the
//! knowledge chunks and experience statements retrieved for its slot values.
//! Templates never change at runtime; prompt optimization happens entirely
//! through the experience store.

mod chain;
mod template;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Violation;
use crate::rag::{ExperienceCategory, ExperienceStore, KnowledgeStore, RagError};
use crate::utility::{AdapterError, GenerationParams, TextGenerator};

pub use chain::{ActionPlan, Generated, LlmSynthesizer, PromptOptimization};
pub use template::{
    builtin_templates, task_header, PromptTemplate, TemplateLibrary, ACTIONS_TEMPLATE, CHARACTERS_TEMPLATE,
    CREATE_TEMPLATE, MERGE_TEMPLATE, PLANNER_TEMPLATE, SHOTS_TEMPLATE, TITLE_TEMPLATE,
};

pub const KNOWLEDGE_HEADING: &str = "### KNOWLEDGE";
pub const EXPERIENCE_HEADING: &str = "### EXPERIENCE";
pub const REPAIR_HEADING: &str = "### REPAIR";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {id:?} is malformed: {message}")]
    BadTemplate { id: String, message: String },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("missing slot {0:?}")]
    MissingSlot(String),
    #[error("text adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error("output of {template_id} is unusable after one repair: {message}")]
    OutputUnparseable { template_id: String, message: String },
    #[error("action allocations {allocations:?} do not sum to the shot budget {budget}")]
    BudgetMismatch { budget: u32, allocations: Vec<u32> },
    #[error("generated script fragment violates {} rule(s)", .0.len())]
    InvalidOutput(Vec<Violation>),
    #[error("feedback category {got} cannot be applied here (expected {expected})")]
    PreconditionViolation {
        expected: ExperienceCategory,
        got: ExperienceCategory,
    },
    #[error(transparent)]
    Rag(#[from] RagError),
}

/// A rendered prompt and the retrieval that went into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub template_id: String,
    pub slot_values: BTreeMap<String, String>,
    pub rendered: String,
    pub knowledge_used: Vec<String>,
    pub experience_used: Vec<String>,
}

/// Retrieval query of a slot assignment: the values in slot-name order.
pub fn retrieval_query(slot_values: &BTreeMap<String, String>) -> String {
    slot_values.values().cloned().collect::<Vec<_>>().join("\n")
}

/// Append the fenced sections to an already rendered body. A section is
/// present only when it has items.
pub fn append_sections(body: &str, knowledge: &[String], experience: &[String]) -> String {
    let mut out = body.to_string();
    for (heading, items) in [(KNOWLEDGE_HEADING, knowledge), (EXPERIENCE_HEADING, experience)] {
        if items.is_empty() {
            continue;
        }
        out.push_str("\n\n");
        out.push_str(heading);
        for (i, item) in items.iter().enumerate() {
            out.push_str(&format!("\n[{}] {}", i + 1, item));
        }
    }
    out
}

/// Tunables of the prompt engine.
#[derive(Debug, Clone)]
pub struct PromptSettings {
    pub k_knowledge: usize,
    pub k_experience: usize,
    pub knowledge_min_score: f64,
    pub experience_min_score: f64,
    pub params: GenerationParams,
    pub magic_words: Vec<String>,
    pub max_characters_per_shot: usize,
}

impl PromptSettings {
    pub fn from_config(config: &crate::config::EngineConfig, magic_words: Vec<String>) -> Self {
        Self {
            k_knowledge: config.retrieval.k_knowledge,
            k_experience: config.retrieval.k_experience,
            knowledge_min_score: config.retrieval.min_score,
            experience_min_score: config.retrieval.experience_min_score,
            params: GenerationParams {
                seed: config.seed,
                ..GenerationParams::default()
            },
            magic_words,
            max_characters_per_shot: config.image.max_characters_per_shot,
        }
    }
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self::from_config(
            &crate::config::EngineConfig::default(),
            crate::domain::SEEDED_MAGIC_WORDS.iter().map(|s| s.to_string()).collect(),
        )
    }
}

/// Renders, augments and executes prompts against the text adapter.
#[derive(Clone)]
pub struct PromptEngine {
    pub templates: Arc<TemplateLibrary>,
    pub krag: Arc<KnowledgeStore>,
    pub erag: Arc<ExperienceStore>,
    pub text: Arc<dyn TextGenerator>,
    pub settings: PromptSettings,
}

impl PromptEngine {
    pub fn new(
        templates: Arc<TemplateLibrary>,
        krag: Arc<KnowledgeStore>,
        erag: Arc<ExperienceStore>,
        text: Arc<dyn TextGenerator>,
        settings: PromptSettings,
    ) -> Self {
        Self {
            templates,
            krag,
            erag,
            text,
            settings,
        }
    }

    /// Render `template` and append the knowledge and experience retrieved
    /// for the concatenated slot values. Utility instruction chunks are kept
    /// out of script prompts; they serve utility matching.
    pub fn augment(&self, template: &PromptTemplate, slot_values: &BTreeMap<String, String>) -> Result<AugmentedPrompt, PromptError> {
        let body = template.render(slot_values)?;
        let query = retrieval_query(slot_values);
        let (mut knowledge_used, mut knowledge) = (Vec::new(), Vec::new());
        let (mut experience_used, mut experience) = (Vec::new(), Vec::new());
        match self.krag.retrieve_where(&query, self.settings.k_knowledge, self.settings.knowledge_min_score, |e| {
            !e.tags.iter().any(|t| t == crate::utility::UTILITY_DOC_TAG)
        }) {
            Ok(hits) => {
                for h in hits {
                    let entry = self.krag.get(&h.entry_id).expect("knowledge entries are never removed");
                    knowledge_used.push(h.entry_id);
                    knowledge.push(entry.text);
                }
            }
            Err(RagError::EmptyText) => {}
            Err(e) => return Err(e.into()),
        }
        match self.erag.retrieve_entries(
            &query,
            Some(template.category),
            self.settings.k_experience,
            self.settings.experience_min_score,
        ) {
            Ok(hits) => {
                for (h, entry) in hits {
                    experience_used.push(h.entry_id);
                    experience.push(entry.text);
                }
            }
            Err(RagError::EmptyText) => {}
            Err(e) => return Err(e.into()),
        }
        Ok(AugmentedPrompt {
            template_id: template.id.clone(),
            slot_values: slot_values.clone(),
            rendered: append_sections(&body, &knowledge, &experience),
            knowledge_used,
            experience_used,
        })
    }

    /// Re-render a recorded prompt from its template, slots and entry ids.
    pub fn reconstruct(&self, prompt: &AugmentedPrompt) -> Result<String, PromptError> {
        let template = self.templates.get(&prompt.template_id)?;
        let body = template.render(&prompt.slot_values)?;
        let knowledge = prompt
            .knowledge_used
            .iter()
            .map(|id| self.krag.get(id).map(|e| e.text).ok_or_else(|| RagError::NotFound(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let experience = prompt
            .experience_used
            .iter()
            .map(|id| self.erag.get(id).map(|e| e.text).ok_or_else(|| RagError::NotFound(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(append_sections(&body, &knowledge, &experience))
    }

    /// Run a prompt and parse its JSON reply. Replies that fail to parse or
    /// fail `check` get one repair round-trip carrying the error.
    pub fn execute_structured<T: serde::de::DeserializeOwned>(
        &self,
        prompt: &AugmentedPrompt,
        check: impl Fn(&T) -> Result<(), String>,
    ) -> Result<(T, String), PromptError> {
        let attempt = |text: &str| -> Result<T, String> {
            let value: T = serde_json::from_str(extract_json(text)).map_err(|e| e.to_string())?;
            check(&value)?;
            Ok(value)
        };
        let first = self.text.text_generate(&prompt.rendered, &self.settings.params)?;
        let error = match attempt(&first) {
            Ok(v) => return Ok((v, first)),
            Err(e) => e,
        };
        tracing::warn!(template = %prompt.template_id, %error, "unusable reply, requesting repair");
        let repair = format!(
            "{}\n\n{REPAIR_HEADING}\nThe previous reply could not be used: {error}\nReply again with the corrected JSON document only.",
            prompt.rendered
        );
        let second = self.text.text_generate(&repair, &self.settings.params)?;
        attempt(&second)
            .map(|v| (v, second))
            .map_err(|message| PromptError::OutputUnparseable {
                template_id: prompt.template_id.clone(),
                message,
            })
    }
}

/// The outermost JSON object or array in `text`, tolerating chatter around it.
pub fn extract_json(text: &str) -> &str {
    let start = text.find(['{', '[']);
    let end = text.rfind(['}', ']']);
    match (start, end) {
        (Some(s), Some(e)) if e >= s => &text[s..=e],
        _ => text,
    }
}
