//! Shared domain vocabulary: story proposals, scripts, shots, layout boxes,
//! styles, camera moves, transitions and artifact references.
//!
//! All types are plain immutable values. Invariants that span several values
//! (a script's character references, narration repetition, layout bounds) are
//! checked by [`validate_script`], which reports every violation as data.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;

/// Version written into every script document.
pub const SCRIPT_SCHEMA_VERSION: u32 = 1;

/// Composition phrases every magic-word registry starts with.
pub const SEEDED_MAGIC_WORDS: [&str; 4] = ["Middle view", "Close view", "Low Angle", "High Angle"];

/// Default cap on characters placed in one shot.
pub const DEFAULT_MAX_CHARACTERS_PER_SHOT: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("content hash must be 64 lowercase hex characters, got {0:?}")]
    BadContentHash(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DomainError {
    DomainError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Collapse every whitespace run to a single space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryProposal {
    pub id: String,
    pub text: String,
    pub style_id: String,
    pub target_shot_budget: u32,
}

impl StoryProposal {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        style_id: impl Into<String>,
        target_shot_budget: u32,
    ) -> Result<Self, DomainError> {
        let proposal = Self {
            id: id.into(),
            text: text.into(),
            style_id: style_id.into(),
            target_shot_budget,
        };
        proposal.validate()?;
        Ok(proposal)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.text.trim().is_empty() {
            return Err(invalid("text", "story text is empty"));
        }
        if self.target_shot_budget < 1 {
            return Err(invalid("target_shot_budget", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Character {
    pub id: String,
    pub name: String,
    /// Short trait text embedded verbatim into every image description that
    /// shows this character.
    pub attached_description: String,
    /// Standalone portrait text used to repaint the character region.
    pub separate_description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub title: String,
    pub characters: Vec<Character>,
    pub actions: Vec<Action>,
}

impl Script {
    pub fn character(&self, id: &str) -> Option<&Character> {
        self.characters.iter().find(|c| c.id == id)
    }

    pub fn shots(&self) -> impl Iterator<Item = &Shot> {
        self.actions.iter().flat_map(|a| a.shots.iter())
    }

    pub fn shot_count(&self) -> usize {
        self.actions.iter().map(|a| a.shots.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub id: String,
    pub description: String,
    pub shots: Vec<Shot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shot {
    pub id: String,
    pub image_description: String,
    #[serde(default)]
    pub narration: String,
    #[serde(default)]
    pub magic_words: Vec<String>,
    #[serde(default)]
    pub character_placements: Vec<CharacterPlacement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_move: Option<CameraMove>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_out: Option<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterPlacement {
    pub character_id: String,
    pub bbox: BoundingBox,
}

/// Normalized layout box, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

const BOX_EPSILON: f64 = 1e-9;

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, DomainError> {
        let b = Self { x, y, w, h };
        match b.problems().into_iter().next() {
            Some(p) => Err(invalid("bbox", p)),
            None => Ok(b),
        }
    }

    /// Every broken invariant, as human-readable statements.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            out.push("coordinates must be finite".to_string());
            return out;
        }
        if self.x < 0.0 {
            out.push("x is negative".to_string());
        }
        if self.y < 0.0 {
            out.push("y is negative".to_string());
        }
        if self.w <= 0.0 {
            out.push("w must be positive".to_string());
        }
        if self.h <= 0.0 {
            out.push("h must be positive".to_string());
        }
        if self.x + self.w > 1.0 + BOX_EPSILON {
            out.push("x+w exceeds 1".to_string());
        }
        if self.y + self.h > 1.0 + BOX_EPSILON {
            out.push("y+h exceeds 1".to_string());
        }
        out
    }

    /// Pixel rectangle `(x, y, w, h)` on a `width`×`height` raster:
    /// origin floored, extent ceiled, clipped to the raster.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let px = (self.x * width as f64).floor().max(0.0) as u32;
        let py = (self.y * height as f64).floor().max(0.0) as u32;
        let pw = (self.w * width as f64).ceil() as u32;
        let ph = (self.h * height as f64).ceil() as u32;
        let px = px.min(width);
        let py = py.min(height);
        PixelRect {
            x: px,
            y: py,
            w: pw.min(width - px),
            h: ph.min(height - py),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub id: String,
    pub display_name: String,
    #[serde(default)]
    pub adapter_params: BTreeMap<String, String>,
    /// Edit intensity of the style transfer, in `[0, 1]`.
    pub lambda_ct: f64,
}

impl StyleSpec {
    pub fn new(id: impl Into<String>, display_name: impl Into<String>, lambda_ct: f64) -> Result<Self, DomainError> {
        let s = Self {
            id: id.into(),
            display_name: display_name.into(),
            adapter_params: BTreeMap::new(),
            lambda_ct,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(0.0..=1.0).contains(&self.lambda_ct) {
            return Err(invalid("lambda_ct", format!("{} is outside [0,1]", self.lambda_ct)));
        }
        if self.id.trim().is_empty() {
            return Err(invalid("id", "style id is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CameraKind {
    Static,
    Push,
    Pull,
    Rotate,
    Zoom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraMove {
    pub kind: CameraKind,
    /// Fraction of the frame covered by the move, in `(0, 1]`.
    pub magnitude: f64,
    pub duration_ms: u64,
}

impl CameraMove {
    /// A locked-off camera. It has no magnitude and no duration of its own.
    pub fn fixed() -> Self {
        Self {
            kind: CameraKind::Static,
            magnitude: 0.0,
            duration_ms: 0,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == CameraKind::Static {
            if !(0.0..=1.0).contains(&self.magnitude) {
                out.push("static magnitude must lie in [0,1]".to_string());
            }
            return out;
        }
        if !(self.magnitude > 0.0 && self.magnitude <= 1.0) {
            out.push(format!("magnitude {} is outside (0,1]", self.magnitude));
        }
        if self.duration_ms == 0 {
            out.push("moving camera needs a positive duration".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    Cut,
    Dissolve,
    Wipe,
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub kind: TransitionKind,
    pub duration_ms: u64,
}

impl Transition {
    pub fn cut() -> Self {
        Self {
            kind: TransitionKind::Cut,
            duration_ms: 0,
        }
    }

    pub fn dissolve(duration_ms: u64) -> Self {
        Self {
            kind: TransitionKind::Dissolve,
            duration_ms,
        }
    }

    pub fn is_consistent(&self) -> bool {
        (self.kind == TransitionKind::Cut) == (self.duration_ms == 0)
    }
}

/// Lowercase hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContentHash(String);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn parse(s: &str) -> Result<Self, DomainError> {
        let ok = s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(DomainError::BadContentHash(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ContentHash {
    type Error = DomainError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<ContentHash> for String {
    fn from(h: ContentHash) -> Self {
        h.0
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MediaType {
    ImageRaster,
    AudioWave,
    Json,
    Text,
    DepthMap,
    MaskSet,
    VideoClip,
}

impl MediaType {
    pub fn mime(&self) -> &'static str {
        match self {
            MediaType::ImageRaster => "image/x-portable-pixmap",
            MediaType::AudioWave => "audio/wav",
            MediaType::Json => "application/json",
            MediaType::Text => "text/plain; charset=utf-8",
            MediaType::DepthMap => "image/x-portable-graymap",
            MediaType::MaskSet => "application/json",
            MediaType::VideoClip => "video/mp4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub content_hash: ContentHash,
    pub media_type: MediaType,
}

impl ArtifactRef {
    pub fn for_bytes(bytes: &[u8], media_type: MediaType) -> Self {
        Self {
            content_hash: ContentHash::of(bytes),
            media_type,
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    EmptyTitle,
    NoActions,
    NoShots,
    DuplicateId,
    EmptyCharacterDescription,
    EmptyImageDescription,
    NarrationRepeatsDescription,
    BoundingBox,
    UnknownCharacter,
    DuplicatePlacement,
    TooManyCharacters,
    AttachedDescriptionMissing,
    CameraMove,
    Transition,
    UnknownMagicWord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub rule: Rule,
    pub message: String,
}

/// Result of [`validate_script`]: hard violations plus advisory warnings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: String, rule: Rule, message: impl Into<String>) {
        self.violations.push(Violation {
            path,
            rule,
            message: message.into(),
        });
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub known_magic_words: Vec<String>,
    pub max_characters_per_shot: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            known_magic_words: SEEDED_MAGIC_WORDS.iter().map(|s| s.to_string()).collect(),
            max_characters_per_shot: DEFAULT_MAX_CHARACTERS_PER_SHOT,
        }
    }
}

/// Check every script invariant with default options.
pub fn validate_script(script: &Script) -> ValidationReport {
    validate_script_with(script, &ValidationOptions::default())
}

pub fn validate_script_with(script: &Script, opts: &ValidationOptions) -> ValidationReport {
    let mut report = ValidationReport::default();

    if script.title.trim().is_empty() {
        report.push("title".into(), Rule::EmptyTitle, "title is empty");
    }

    let mut character_ids = HashSet::new();
    for (ci, c) in script.characters.iter().enumerate() {
        let path = format!("characters[{ci}]");
        if !character_ids.insert(c.id.as_str()) {
            report.push(format!("{path}.id"), Rule::DuplicateId, format!("duplicate character id {:?}", c.id));
        }
        if c.attached_description.trim().is_empty() {
            report.push(
                format!("{path}.attached_description"),
                Rule::EmptyCharacterDescription,
                "attached description is empty",
            );
        }
        if c.separate_description.trim().is_empty() {
            report.push(
                format!("{path}.separate_description"),
                Rule::EmptyCharacterDescription,
                "separate description is empty",
            );
        }
    }

    if script.actions.is_empty() {
        report.push("actions".into(), Rule::NoActions, "script has no actions");
    }

    let mut action_ids = HashSet::new();
    let mut shot_ids = HashSet::new();
    for (ai, action) in script.actions.iter().enumerate() {
        let apath = format!("actions[{ai}]");
        if !action_ids.insert(action.id.as_str()) {
            report.push(format!("{apath}.id"), Rule::DuplicateId, format!("duplicate action id {:?}", action.id));
        }
        if action.shots.is_empty() {
            report.push(format!("{apath}.shots"), Rule::NoShots, "action has no shots");
        }
        for (si, shot) in action.shots.iter().enumerate() {
            let spath = format!("{apath}.shots[{si}]");
            if !shot_ids.insert(shot.id.as_str()) {
                report.push(format!("{spath}.id"), Rule::DuplicateId, format!("duplicate shot id {:?}", shot.id));
            }
            validate_shot(script, shot, &spath, opts, &mut report);
        }
    }
    report
}

fn validate_shot(script: &Script, shot: &Shot, spath: &str, opts: &ValidationOptions, report: &mut ValidationReport) {
    let description = normalize_whitespace(&shot.image_description);
    if description.is_empty() {
        report.push(
            format!("{spath}.image_description"),
            Rule::EmptyImageDescription,
            "image description is empty",
        );
    }

    let narration = normalize_whitespace(&shot.narration);
    if !narration.is_empty() && description.contains(&narration) {
        report.push(
            format!("{spath}.narration"),
            Rule::NarrationRepeatsDescription,
            "narration repeats the image description verbatim; content shown in the image must not be repeated in narration",
        );
    }

    if shot.character_placements.len() > opts.max_characters_per_shot {
        report.push(
            format!("{spath}.character_placements"),
            Rule::TooManyCharacters,
            format!(
                "{} characters placed, limit is {}",
                shot.character_placements.len(),
                opts.max_characters_per_shot
            ),
        );
    }

    let mut placed = HashSet::new();
    for (pi, placement) in shot.character_placements.iter().enumerate() {
        let ppath = format!("{spath}.character_placements[{pi}]");
        for problem in placement.bbox.problems() {
            report.push(format!("{ppath}.bbox"), Rule::BoundingBox, problem);
        }
        if !placed.insert(placement.character_id.as_str()) {
            report.push(
                format!("{ppath}.character_id"),
                Rule::DuplicatePlacement,
                format!("character {:?} placed twice", placement.character_id),
            );
        }
        match script.character(&placement.character_id) {
            None => report.push(
                format!("{ppath}.character_id"),
                Rule::UnknownCharacter,
                format!("no character with id {:?}", placement.character_id),
            ),
            Some(c) => {
                let attached = normalize_whitespace(&c.attached_description);
                if !attached.is_empty() && !description.contains(&attached) {
                    report.push(
                        format!("{spath}.image_description"),
                        Rule::AttachedDescriptionMissing,
                        format!("attached description of {:?} is not embedded", c.name),
                    );
                }
            }
        }
    }

    if let Some(cam) = &shot.camera_move {
        for problem in cam.problems() {
            report.push(format!("{spath}.camera_move"), Rule::CameraMove, problem);
        }
    }
    if let Some(t) = &shot.transition_out {
        if !t.is_consistent() {
            report.push(
                format!("{spath}.transition_out"),
                Rule::Transition,
                "a cut has zero duration and every other transition a positive one",
            );
        }
    }

    for (mi, word) in shot.magic_words.iter().enumerate() {
        if !opts.known_magic_words.iter().any(|k| k == word) {
            report.warnings.push(Violation {
                path: format!("{spath}.magic_words[{mi}]"),
                rule: Rule::UnknownMagicWord,
                message: format!("magic word {word:?} is not registered"),
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical script document
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("schema error at line {line}, column {column}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
pub struct SchemaError {
    pub line: usize,
    pub column: usize,
    pub field: Option<String>,
    pub message: String,
}

impl SchemaError {
    pub(crate) fn from_json(err: &serde_json::Error) -> Self {
        let message = err.to_string();
        Self {
            line: err.line(),
            column: err.column(),
            field: field_from_message(&message),
            message,
        }
    }
}

/// serde reports the offending field in backticks, e.g. "missing field `title`".
fn field_from_message(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

#[derive(Serialize)]
struct ScriptDocumentRef<'a> {
    schema_version: u32,
    #[serde(flatten)]
    script: &'a Script,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptDocument {
    schema_version: u32,
    title: String,
    characters: Vec<Character>,
    actions: Vec<Action>,
}

/// Canonical script document: sorted keys, fixed six-decimal coordinates.
pub fn serialize_script(script: &Script) -> String {
    canonical::to_canonical_string(&ScriptDocumentRef {
        schema_version: SCRIPT_SCHEMA_VERSION,
        script,
    })
    .expect("script values are always representable")
}

pub fn parse_script(document: &str) -> Result<Script, SchemaError> {
    let doc: ScriptDocument = serde_json::from_str(document).map_err(|e| SchemaError::from_json(&e))?;
    if doc.schema_version != SCRIPT_SCHEMA_VERSION {
        return Err(SchemaError {
            line: 1,
            column: 1,
            field: Some("schema_version".into()),
            message: format!("unsupported schema version {}", doc.schema_version),
        });
    }
    Ok(Script {
        title: doc.title,
        characters: doc.characters,
        actions: doc.actions,
    })
}
