use std::collections::{BTreeMap, BTreeSet};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::rag::ExperienceCategory;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// Split a template body into literal text and `{slot}` references.
/// `{{` and `}}` are literal braces.
fn parse_body(body: &str) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|p| p.1) == Some('{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek().map(|p| p.1) == Some('}') => {
                chars.next();
                lit.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, ch)) if ch.is_ascii_alphanumeric() || ch == '_' => name.push(ch),
                        _ => return Err(format!("unterminated or malformed slot at byte {pos}")),
                    }
                }
                if name.is_empty() {
                    return Err(format!("empty slot name at byte {pos}"));
                }
                if !lit.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut lit)));
                }
                out.push(Segment::Slot(name));
            }
            '}' => return Err(format!("unmatched '}}' at byte {pos}")),
            _ => lit.push(c),
        }
    }
    if !lit.is_empty() {
        out.push(Segment::Literal(lit));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub required_slots: BTreeSet<String>,
    /// Experience category injected into renderings of this template.
    pub category: ExperienceCategory,
}

impl PromptTemplate {
    /// Build a template whose required slots are exactly those in `body`.
    pub fn new(id: impl Into<String>, body: impl Into<String>, category: ExperienceCategory) -> Result<Self, PromptError> {
        let id = id.into();
        let body = body.into();
        let segments = parse_body(&body).map_err(|message| PromptError::BadTemplate { id: id.clone(), message })?;
        let required_slots = segments
            .into_iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n),
                Segment::Literal(_) => None,
            })
            .collect();
        Ok(Self {
            id,
            body,
            required_slots,
            category,
        })
    }

    /// Check that the body parses and every slot is declared.
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |message: String| PromptError::BadTemplate {
            id: self.id.clone(),
            message,
        };
        if self.id.trim().is_empty() {
            return Err(bad("template id is empty".into()));
        }
        for seg in parse_body(&self.body).map_err(bad)? {
            if let Segment::Slot(name) = seg {
                if !self.required_slots.contains(&name) {
                    return Err(bad(format!("slot {{{name}}} is not in required_slots")));
                }
            }
        }
        Ok(())
    }

    /// Substitute every slot. Extra values are ignored.
    pub fn render(&self, slots: &BTreeMap<String, String>) -> Result<String, PromptError> {
        for name in &self.required_slots {
            if !slots.contains_key(name) {
                return Err(PromptError::MissingSlot(name.clone()));
            }
        }
        let segments = parse_body(&self.body).map_err(|message| PromptError::BadTemplate {
            id: self.id.clone(),
            message,
        })?;
        let mut out = String::new();
        for seg in segments {
            match seg {
                Segment::Literal(s) => out.push_str(&s),
                Segment::Slot(n) => out.push_str(slots.get(&n).ok_or_else(|| PromptError::MissingSlot(n.clone()))?),
            }
        }
        Ok(out)
    }
}

pub const TITLE_TEMPLATE: &str = "generate_title";
pub const CHARACTERS_TEMPLATE: &str = "design_characters";
pub const ACTIONS_TEMPLATE: &str = "plan_actions";
pub const SHOTS_TEMPLATE: &str = "generate_shots";
pub const PLANNER_TEMPLATE: &str = "plan_workflow";
pub const MERGE_TEMPLATE: &str = "merge_experience";
pub const CREATE_TEMPLATE: &str = "create_experience";

/// Line that opens every built-in template; adapters may use it to route.
pub fn task_header(template_id: &str) -> String {
    format!("[task:{template_id}]")
}

const BUILTIN_BODIES: [(&str, ExperienceCategory, &str); 7] = [
    (
        TITLE_TEMPLATE,
        ExperienceCategory::Prompt,
        "[task:generate_title]
You are a screenwriter. Propose a short, evocative title for the story below.
Story: {story}
Reply with JSON only: {{\"title\": \"...\"}}",
    ),
    (
        CHARACTERS_TEMPLATE,
        ExperienceCategory::Prompt,
        "[task:design_characters]
You are a character designer. List the main characters of the story. For each character give an id, a name, an attached description (gender, age, clothing, hairstyle) that will be embedded word for word in every image description showing the character, and a separate detailed portrait description.
Story: {story}
Reply with JSON only: {{\"characters\": [{{\"id\": \"...\", \"name\": \"...\", \"attached_description\": \"...\", \"separate_description\": \"...\"}}]}}",
    ),
    (
        ACTIONS_TEMPLATE,
        ExperienceCategory::Prompt,
        "[task:plan_actions]
You are a screenwriter. Divide the story into actions (scene-level units) and give every action a number of shots.
Shot budget: {shot_budget}
The shot counts must add up to exactly the shot budget.
Story: {story}
Characters: {characters}
Reply with JSON only: {{\"actions\": [{{\"id\": \"...\", \"description\": \"...\", \"shot_count\": 1}}]}}",
    ),
    (
        SHOTS_TEMPLATE,
        ExperienceCategory::Prompt,
        "[task:generate_shots]
You are a storyboard artist. Write the shots of one action.
Allocation: {allocation}
Write exactly that many shots. Every image description must contain, word for word, the attached description of each character placed in the shot. Narration must not repeat the image description. Pick the magic words (framing phrases) of each shot from: {magic_words}
Action: {action}
Characters: {characters}
Reply with JSON only: {{\"shots\": [{{\"id\": \"...\", \"image_description\": \"...\", \"narration\": \"...\", \"magic_words\": [], \"character_placements\": [{{\"character_id\": \"...\", \"bbox\": {{\"x\": 0.0, \"y\": 0.0, \"w\": 0.5, \"h\": 0.5}}}}]}}]}}",
    ),
    (
        PLANNER_TEMPLATE,
        ExperienceCategory::Workflow,
        "[task:plan_workflow]
You are a production planner. Decompose the task into a workflow of task nodes. Each node has an id, a kind (llm with a template id, utility with a utility id, or assembly), the ids it depends on, and its input bindings.
Task: {task_description}
Reply with JSON only: {{\"nodes\": [...]}}",
    ),
    (
        MERGE_TEMPLATE,
        ExperienceCategory::Prompt,
        "[task:merge_experience]
Fold the reviewer feedback into the existing experience statement. Keep every still-valid point and reply with the merged statement only.
Feedback: {feedback}
Experience: {experience}",
    ),
    (
        CREATE_TEMPLATE,
        ExperienceCategory::Prompt,
        "[task:create_experience]
Turn the reviewer feedback into one reusable experience statement. Reply with the statement only.
Feedback: {feedback}",
    ),
];

/// The built-in templates.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    BUILTIN_BODIES
        .iter()
        .map(|(id, cat, body)| PromptTemplate::new(*id, *body, *cat).expect("built-in templates parse"))
        .collect()
}

/// Template set keyed by id. Replacing a template swaps it atomically.
#[derive(Debug)]
pub struct TemplateLibrary {
    templates: RwLock<BTreeMap<String, PromptTemplate>>,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        let lib = Self {
            templates: RwLock::new(BTreeMap::new()),
        };
        for t in builtin_templates() {
            lib.upsert(t).expect("built-in templates are valid");
        }
        lib
    }
}

impl TemplateLibrary {
    pub fn empty() -> Self {
        Self {
            templates: RwLock::new(BTreeMap::new()),
        }
    }

    /// Insert or replace a template.
    pub fn upsert(&self, template: PromptTemplate) -> Result<(), PromptError> {
        template.validate()?;
        self.templates.write().insert(template.id.clone(), template);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<PromptTemplate, PromptError> {
        self.templates
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.templates.read().keys().cloned().collect()
    }

    pub fn by_category(&self, category: ExperienceCategory) -> Vec<String> {
        self.templates
            .read()
            .values()
            .filter(|t| t.category == category)
            .map(|t| t.id.clone())
            .collect()
    }
}
