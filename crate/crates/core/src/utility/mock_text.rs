//! Deterministic stand-ins for the language model.
//!
//! [`MockTextGenerator`] routes on the `[task:<template>]` header of the
//! built-in templates and answers every script-chain, planning and
//! experience-synthesis prompt with a well-formed reply derived only from the
//! prompt text. [`ScriptedTextGenerator`] replays canned replies for tests
//! that need malformed or contract-breaking output.

use std::collections::VecDeque;

use parking_lot::Mutex;
use serde_json::json;

use super::adapters::{AdapterError, AdapterResult, GenerationParams, TextGenerator};
use super::Capability;
use crate::domain::{
    normalize_whitespace, BoundingBox, CameraKind, CameraMove, Character, CharacterPlacement, Shot, Transition,
};
use crate::prompt::{ActionPlan, EXPERIENCE_HEADING};
use crate::rag::fnv1a64;
use crate::workflow::{default_workflow, InputBinding, NODE_ACTIONS};

const STOP_WORDS: [&str; 28] = [
    "The", "A", "An", "She", "He", "They", "It", "Its", "Once", "One", "Then", "In", "On", "At", "When", "After", "But",
    "And", "So", "There", "This", "That", "Her", "His", "Their", "Upon", "Soon", "Finally",
];

const HAIR: [&str; 6] = [
    "golden curls",
    "short black hair",
    "a silver braid",
    "shaggy brown fur",
    "red pigtails",
    "a green crest of scales",
];
const CLOTHING: [&str; 6] = [
    "a blue pinafore dress",
    "a patched leather jerkin",
    "a long grey cloak",
    "a checked waistcoat",
    "a yellow raincoat",
    "a bronze breastplate",
];
const SETTINGS: [&str; 6] = [
    "a sunlit forest clearing",
    "a cosy cottage kitchen",
    "a misty mountain pass",
    "a castle courtyard at dusk",
    "a riverside meadow",
    "a candlelit great hall",
];

/// Value of the first line starting with `label`.
fn line_value<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(label)).map(str::trim)
}

fn pick<'a>(list: &[&'a str], key: &str) -> &'a str {
    list[(fnv1a64(key.as_bytes()) % list.len() as u64) as usize]
}

/// Sentences of `text`, terminators kept.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            let s = normalize_whitespace(&cur);
            if !s.is_empty() {
                out.push(s);
            }
            cur.clear();
        }
    }
    let s = normalize_whitespace(&cur);
    if !s.is_empty() {
        out.push(s);
    }
    out
}

fn title_case(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Title from the first sentence: at most six words, punctuation dropped.
pub fn mock_title(story: &str) -> String {
    let first = sentences(story).into_iter().next().unwrap_or_default();
    let words: Vec<String> = first
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .take(6)
        .map(title_case)
        .collect();
    if words.is_empty() {
        "Untitled Story".into()
    } else {
        words.join(" ")
    }
}

/// Capitalised words that are not sentence furniture, first three, in order
/// of appearance.
pub fn mock_character_names(story: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for w in story.split_whitespace() {
        let w = w.trim_matches(|c: char| !c.is_alphanumeric());
        let starts_upper = w.chars().next().is_some_and(|c| c.is_uppercase());
        if w.len() >= 3 && starts_upper && w.chars().all(char::is_alphabetic) && !STOP_WORDS.contains(&w) && !names.iter().any(|n| n == w) {
            names.push(w.to_string());
        }
        if names.len() == 3 {
            break;
        }
    }
    if names.is_empty() {
        names.push("Hero".into());
    }
    names
}

pub fn mock_characters(story: &str) -> Vec<Character> {
    mock_character_names(story)
        .into_iter()
        .map(|name| {
            let hair = pick(&HAIR, &name);
            let clothing = pick(&CLOTHING, &format!("{name}/clothing"));
            Character {
                id: name.to_lowercase(),
                attached_description: format!("{name} with {hair} in {clothing}"),
                separate_description: format!("Portrait of {name}: {hair}, {clothing}, full figure, calm expression, soft light"),
                name,
            }
        })
        .collect()
}

/// `ceil(budget / 3)` actions with the budget spread as evenly as possible,
/// larger shares first.
pub fn mock_allocations(budget: u32) -> Vec<u32> {
    let n = budget.div_ceil(3).max(1);
    (0..n).map(|i| budget / n + u32::from(i < budget % n)).collect()
}

pub fn mock_actions(story: &str, budget: u32) -> Vec<ActionPlan> {
    let allocations = mock_allocations(budget);
    let n = allocations.len();
    let mut sents = sentences(story);
    if sents.is_empty() {
        sents.push(normalize_whitespace(story));
    }
    allocations
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            // contiguous share of sentences; reuse the last one if short
            let len = sents.len();
            let lo = (i * len / n).min(len - 1);
            let hi = ((i + 1) * len / n).clamp(lo + 1, len);
            ActionPlan {
                id: format!("action-{}", i + 1),
                description: sents[lo..hi].join(" "),
                shot_count: count,
            }
        })
        .collect()
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Side-by-side layout boxes for `k` characters.
pub fn mock_layout(k: usize) -> Vec<BoundingBox> {
    let slot = 0.9 / k as f64;
    (0..k)
        .map(|i| BoundingBox {
            x: round6(0.05 + i as f64 * slot),
            y: 0.35,
            w: round6(slot * 0.8),
            h: 0.6,
        })
        .collect()
}

pub fn mock_shots(action: &ActionPlan, characters: &[Character], magic_words: &[String]) -> Vec<Shot> {
    let lower = action.description.to_lowercase();
    let mut placed: Vec<&Character> = characters
        .iter()
        .filter(|c| lower.contains(&c.name.to_lowercase()))
        .take(crate::domain::DEFAULT_MAX_CHARACTERS_PER_SHOT)
        .collect();
    if placed.is_empty() {
        placed.extend(characters.first());
    }
    let boxes = mock_layout(placed.len());
    let setting = pick(&SETTINGS, &action.id);
    let narration_pool = sentences(&action.description);
    let n = action.shot_count as usize;
    (0..n)
        .map(|j| {
            let who: Vec<&str> = placed.iter().map(|c| c.attached_description.as_str()).collect();
            let image_description = if who.is_empty() {
                format!("{setting}, moment {} of {n}", j + 1)
            } else {
                format!("{} in {setting}, moment {} of {n}", who.join(" and "), j + 1)
            };
            let narration = narration_pool.get(j % narration_pool.len().max(1)).cloned().unwrap_or_default();
            let camera_move = match j % 4 {
                0 => None,
                1 => Some(CameraMove {
                    kind: CameraKind::Push,
                    magnitude: 0.2,
                    duration_ms: 1500,
                }),
                2 => Some(CameraMove {
                    kind: CameraKind::Pull,
                    magnitude: 0.25,
                    duration_ms: 2500,
                }),
                _ => Some(CameraMove {
                    kind: CameraKind::Zoom,
                    magnitude: 0.3,
                    duration_ms: 3000,
                }),
            };
            let transition_out = match j % 3 {
                0 => None,
                1 => Some(Transition::dissolve(400)),
                _ => Some(Transition::cut()),
            };
            Shot {
                id: format!("{}-shot-{}", action.id, j + 1),
                image_description,
                narration,
                magic_words: magic_words.get(j % magic_words.len().max(1)).cloned().into_iter().collect(),
                character_placements: placed
                    .iter()
                    .zip(&boxes)
                    .map(|(c, b)| CharacterPlacement {
                        character_id: c.id.clone(),
                        bbox: *b,
                    })
                    .collect(),
                camera_move,
                transition_out,
            }
        })
        .collect()
}

/// Merge rule of the mock synthesizer: keep the experience if it already
/// says the feedback, otherwise append the feedback as a new clause.
pub fn mock_merge(feedback: &str, experience: &str) -> String {
    let s = normalize_whitespace(feedback);
    let e = normalize_whitespace(experience);
    if e.to_lowercase().contains(&s.to_lowercase()) {
        e
    } else {
        format!("{e}; {s}")
    }
}

/// Text of the fenced experience section, if any.
fn experience_section(prompt: &str) -> &str {
    match prompt.find(EXPERIENCE_HEADING) {
        None => "",
        Some(start) => {
            let rest = &prompt[start + EXPERIENCE_HEADING.len()..];
            match rest.find("\n### ") {
                Some(end) => &rest[..end],
                None => rest,
            }
        }
    }
}

/// Seeded, prompt-driven language model.
#[derive(Debug, Default, Clone)]
pub struct MockTextGenerator;

impl MockTextGenerator {
    fn reply(&self, prompt: &str) -> Result<String, String> {
        let header = prompt.lines().next().unwrap_or_default().trim();
        let task = header
            .strip_prefix("[task:")
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| "prompt has no task header".to_string())?;
        let need = |label: &str| line_value(prompt, label).ok_or_else(|| format!("prompt lacks {label:?}"));
        let json_of = |label: &str| -> Result<serde_json::Value, String> {
            serde_json::from_str(need(label)?).map_err(|e| format!("{label} is not JSON: {e}"))
        };
        match task {
            "generate_title" => Ok(json!({ "title": mock_title(need("Story: ")?) }).to_string()),
            "design_characters" => Ok(json!({ "characters": mock_characters(need("Story: ")?) }).to_string()),
            "plan_actions" => {
                let budget: u32 = need("Shot budget: ")?.parse().map_err(|_| "bad shot budget".to_string())?;
                Ok(json!({ "actions": mock_actions(need("Story: ")?, budget) }).to_string())
            }
            "generate_shots" => {
                let allocation: u32 = need("Allocation: ")?.parse().map_err(|_| "bad allocation".to_string())?;
                let action = json_of("Action: ")?;
                let plan = ActionPlan {
                    id: action["id"].as_str().unwrap_or("action").to_string(),
                    description: action["description"].as_str().unwrap_or_default().to_string(),
                    shot_count: allocation,
                };
                let characters: Vec<Character> =
                    serde_json::from_value(json_of("Characters: ")?).map_err(|e| e.to_string())?;
                let magic: Vec<String> = prompt
                    .lines()
                    .find_map(|l| l.split_once("of each shot from: ").map(|p| p.1))
                    .map(|s| s.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect())
                    .unwrap_or_default();
                Ok(json!({ "shots": mock_shots(&plan, &characters, &magic) }).to_string())
            }
            "plan_workflow" => {
                let mut wf = default_workflow();
                let experience = normalize_whitespace(&experience_section(prompt).to_lowercase());
                if experience.contains("shot number planning") {
                    let node = wf.nodes.iter_mut().find(|n| n.id == NODE_ACTIONS).expect("default has actions node");
                    node.input_bindings.insert(
                        "shot_budget".into(),
                        InputBinding::Literal {
                            value: "global".into(),
                        },
                    );
                }
                Ok(json!({ "nodes": wf.nodes }).to_string())
            }
            "merge_experience" => Ok(mock_merge(need("Feedback: ")?, need("Experience: ")?)),
            "create_experience" => Ok(normalize_whitespace(need("Feedback: ")?)),
            other => Err(format!("no mock behaviour for task {other:?}")),
        }
    }
}

impl TextGenerator for MockTextGenerator {
    fn text_generate(&self, prompt: &str, _params: &GenerationParams) -> AdapterResult<String> {
        self.reply(prompt).map_err(|m| AdapterError::failure(Capability::TextGeneration, m))
    }
}

/// Replays queued replies in order and records every prompt it receives.
#[derive(Debug, Default)]
pub struct ScriptedTextGenerator {
    replies: Mutex<VecDeque<Result<String, bool>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedTextGenerator {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(|r| Ok(r.into())).collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn push_reply(&self, reply: impl Into<String>) {
        self.replies.lock().push_back(Ok(reply.into()));
    }

    /// Queue an adapter failure.
    pub fn push_failure(&self, transient: bool) {
        self.replies.lock().push_back(Err(transient));
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }
}

impl TextGenerator for ScriptedTextGenerator {
    fn text_generate(&self, prompt: &str, _params: &GenerationParams) -> AdapterResult<String> {
        self.prompts.lock().push(prompt.to_string());
        match self.replies.lock().pop_front() {
            Some(Ok(r)) => Ok(r),
            Some(Err(transient)) => Err(AdapterError::Failure {
                capability: Capability::TextGeneration,
                message: "scripted failure".into(),
                transient,
            }),
            None => Err(AdapterError::failure(Capability::TextGeneration, "no scripted reply left")),
        }
    }
}
