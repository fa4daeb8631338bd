use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AugmentedPrompt, PromptEngine, PromptError, TemplateLibrary};
use super::{ACTIONS_TEMPLATE, CHARACTERS_TEMPLATE, CREATE_TEMPLATE, MERGE_TEMPLATE, SHOTS_TEMPLATE, TITLE_TEMPLATE};
use crate::canonical;
use crate::domain::{
    normalize_whitespace, validate_script_with, Action, Character, Script, Shot, StoryProposal, ValidationOptions,
};
use crate::rag::{ExperienceCategory, ExperienceStore, ExperienceSynthesizer, ExperienceUpdate, FeedbackRecord, SynthesisError};
use crate::utility::{GenerationParams, TextGenerator};

/// A parsed result together with the prompt that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated<T> {
    pub value: T,
    pub prompt: AugmentedPrompt,
}

/// An action before its shots are written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionPlan {
    pub id: String,
    pub description: String,
    pub shot_count: u32,
}

#[derive(Deserialize)]
struct TitleReply {
    title: String,
}

#[derive(Deserialize)]
struct CharactersReply {
    characters: Vec<Character>,
}

#[derive(Deserialize)]
struct ActionsReply {
    actions: Vec<ActionPlan>,
}

#[derive(Deserialize)]
struct ShotsReply {
    shots: Vec<Shot>,
}

#[derive(Serialize)]
struct ActionSlot<'a> {
    id: &'a str,
    description: &'a str,
}

/// Report of one prompt optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOptimization {
    pub update: ExperienceUpdate,
    /// Experience text before the update; absent for a new entry.
    pub before: Option<String>,
    pub after: String,
    /// Templates whose future renderings draw on this category.
    pub affected_templates: Vec<String>,
}

fn compact<T: Serialize>(value: &T) -> String {
    canonical::to_canonical_line(value).expect("prompt values serialize")
}

fn slots(pairs: Vec<(&str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn check_characters(chars: &[Character]) -> Result<(), String> {
    if chars.is_empty() {
        return Err("no characters listed".into());
    }
    let mut seen = HashSet::new();
    for (i, c) in chars.iter().enumerate() {
        if !seen.insert(&c.id) {
            return Err(format!("characters[{i}].id {:?} is duplicated", c.id));
        }
        if c.attached_description.trim().is_empty() || c.separate_description.trim().is_empty() {
            return Err(format!("characters[{i}] has an empty description"));
        }
    }
    Ok(())
}

impl PromptEngine {
    fn template_prompt(&self, id: &str, values: BTreeMap<String, String>) -> Result<AugmentedPrompt, PromptError> {
        let template = self.templates.get(id)?;
        self.augment(&template, &values)
    }

    pub fn generate_title(&self, proposal: &StoryProposal) -> Result<Generated<String>, PromptError> {
        let prompt = self.template_prompt(TITLE_TEMPLATE, slots(vec![("story", normalize_whitespace(&proposal.text))]))?;
        let (reply, _) = self.execute_structured::<TitleReply>(&prompt, |r| {
            if r.title.trim().is_empty() {
                Err("title is empty".into())
            } else {
                Ok(())
            }
        })?;
        Ok(Generated {
            value: normalize_whitespace(&reply.title),
            prompt,
        })
    }

    pub fn design_characters(&self, proposal: &StoryProposal) -> Result<Generated<Vec<Character>>, PromptError> {
        let prompt =
            self.template_prompt(CHARACTERS_TEMPLATE, slots(vec![("story", normalize_whitespace(&proposal.text))]))?;
        let (reply, _) = self.execute_structured::<CharactersReply>(&prompt, |r| check_characters(&r.characters))?;
        Ok(Generated {
            value: reply.characters,
            prompt,
        })
    }

    /// Split the story into actions whose shot counts sum to `shot_budget`.
    pub fn plan_actions(
        &self,
        proposal: &StoryProposal,
        characters: &[Character],
        shot_budget: u32,
    ) -> Result<Generated<Vec<ActionPlan>>, PromptError> {
        let prompt = self.template_prompt(
            ACTIONS_TEMPLATE,
            slots(vec![
                ("story", normalize_whitespace(&proposal.text)),
                ("characters", compact(&characters)),
                ("shot_budget", shot_budget.to_string()),
            ]),
        )?;
        let (reply, _) = self.execute_structured::<ActionsReply>(&prompt, |r| {
            if r.actions.is_empty() {
                return Err("no actions listed".into());
            }
            let mut seen = HashSet::new();
            for (i, a) in r.actions.iter().enumerate() {
                if a.shot_count == 0 {
                    return Err(format!("actions[{i}].shot_count must be at least 1"));
                }
                if a.description.trim().is_empty() {
                    return Err(format!("actions[{i}].description is empty"));
                }
                if !seen.insert(&a.id) {
                    return Err(format!("actions[{i}].id {:?} is duplicated", a.id));
                }
            }
            Ok(())
        })?;
        let allocations: Vec<u32> = reply.actions.iter().map(|a| a.shot_count).collect();
        if allocations.iter().map(|&n| n as u64).sum::<u64>() != shot_budget as u64 {
            return Err(PromptError::BudgetMismatch {
                budget: shot_budget,
                allocations,
            });
        }
        Ok(Generated {
            value: reply.actions,
            prompt,
        })
    }

    /// Write exactly `action.shot_count` shots and validate them against
    /// the character list.
    pub fn generate_shots(&self, action: &ActionPlan, characters: &[Character]) -> Result<Generated<Vec<Shot>>, PromptError> {
        let allocation = action.shot_count as usize;
        let prompt = self.template_prompt(
            SHOTS_TEMPLATE,
            slots(vec![
                ("allocation", allocation.to_string()),
                (
                    "action",
                    compact(&ActionSlot {
                        id: &action.id,
                        description: &action.description,
                    }),
                ),
                ("characters", compact(&characters)),
                ("magic_words", self.settings.magic_words.join(", ")),
            ]),
        )?;
        let (reply, _) = self.execute_structured::<ShotsReply>(&prompt, |r| {
            if r.shots.len() != allocation {
                Err(format!("expected {allocation} shots, got {}", r.shots.len()))
            } else {
                Ok(())
            }
        })?;
        let fragment = Script {
            title: "fragment".into(),
            characters: characters.to_vec(),
            actions: vec![Action {
                id: action.id.clone(),
                description: action.description.clone(),
                shots: reply.shots,
            }],
        };
        let opts = ValidationOptions {
            known_magic_words: self.settings.magic_words.clone(),
            max_characters_per_shot: self.settings.max_characters_per_shot,
        };
        let report = validate_script_with(&fragment, &opts);
        if !report.is_valid() {
            return Err(PromptError::InvalidOutput(report.violations));
        }
        let shots = fragment.actions.into_iter().next().expect("one action").shots;
        Ok(Generated { value: shots, prompt })
    }

    /// Run the whole chain: title, characters, actions, shots.
    pub fn write_script(&self, proposal: &StoryProposal) -> Result<Script, PromptError> {
        let title = self.generate_title(proposal)?.value;
        let characters = self.design_characters(proposal)?.value;
        let plans = self.plan_actions(proposal, &characters, proposal.target_shot_budget)?.value;
        let actions = plans
            .iter()
            .map(|plan| {
                Ok(Action {
                    id: plan.id.clone(),
                    description: plan.description.clone(),
                    shots: self.generate_shots(plan, &characters)?.value,
                })
            })
            .collect::<Result<Vec<_>, PromptError>>()?;
        Ok(Script {
            title,
            characters,
            actions,
        })
    }

    /// Fold prompt feedback into the experience store. Templates stay as
    /// they are; the experience is injected into later renderings.
    pub fn optimize_prompt(
        &self,
        feedback: &FeedbackRecord,
        synthesizer: &dyn ExperienceSynthesizer,
        tau_update: f64,
    ) -> Result<PromptOptimization, PromptError> {
        optimize_prompt(&self.templates, &self.erag, feedback, synthesizer, tau_update)
    }
}

/// See [`PromptEngine::optimize_prompt`].
pub fn optimize_prompt(
    templates: &TemplateLibrary,
    erag: &ExperienceStore,
    feedback: &FeedbackRecord,
    synthesizer: &dyn ExperienceSynthesizer,
    tau_update: f64,
) -> Result<PromptOptimization, PromptError> {
    if feedback.category != ExperienceCategory::Prompt {
        return Err(PromptError::PreconditionViolation {
            expected: ExperienceCategory::Prompt,
            got: feedback.category,
        });
    }
    let update = erag.update_experience(feedback, synthesizer, tau_update)?;
    let entry = update.entry().clone();
    let before = match &update {
        ExperienceUpdate::Inserted(_) => None,
        ExperienceUpdate::Updated(_) => {
            let history = erag.experience_history(&entry.id)?;
            history.iter().rev().nth(1).map(|h| h.text.clone())
        }
    };
    Ok(PromptOptimization {
        before,
        after: entry.text.clone(),
        affected_templates: templates.by_category(ExperienceCategory::Prompt),
        update,
    })
}

/// Experience synthesizer backed by the text adapter.
#[derive(Clone)]
pub struct LlmSynthesizer {
    text: Arc<dyn TextGenerator>,
    templates: Arc<TemplateLibrary>,
    params: GenerationParams,
}

impl LlmSynthesizer {
    pub fn new(text: Arc<dyn TextGenerator>, templates: Arc<TemplateLibrary>, params: GenerationParams) -> Self {
        Self { text, templates, params }
    }

    fn run(&self, template_id: &str, values: BTreeMap<String, String>) -> Result<String, SynthesisError> {
        let template = self.templates.get(template_id).map_err(|e| SynthesisError(e.to_string()))?;
        let prompt = template.render(&values).map_err(|e| SynthesisError(e.to_string()))?;
        let reply = self
            .text
            .text_generate(&prompt, &self.params)
            .map_err(|e| SynthesisError(e.to_string()))?;
        let reply = normalize_whitespace(&reply);
        if reply.is_empty() {
            return Err(SynthesisError("synthesizer returned an empty statement".into()));
        }
        Ok(reply)
    }
}

impl ExperienceSynthesizer for LlmSynthesizer {
    fn merge(&self, feedback: &str, experience: &str) -> Result<String, SynthesisError> {
        self.run(
            MERGE_TEMPLATE,
            slots(vec![
                ("feedback", normalize_whitespace(feedback)),
                ("experience", normalize_whitespace(experience)),
            ]),
        )
    }

    fn create(&self, feedback: &str) -> Result<String, SynthesisError> {
        self.run(CREATE_TEMPLATE, slots(vec![("feedback", normalize_whitespace(feedback))]))
    }
}
