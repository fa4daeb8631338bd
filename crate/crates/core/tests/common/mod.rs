#![allow(dead_code)]

use std::sync::Arc;

use storyreel_core::clock::FixedClock;
use storyreel_core::config::EngineConfig;
use storyreel_core::domain::{StoryProposal, StyleSpec};
use storyreel_core::production::Studio;

pub const DRAGON_STORY: &str = "Lina finds Ember, a sleeping dragon, under the old castle. \
She brings Ember bread and sings to it every night. \
Ember wakes and the villagers panic in the square. \
Lina stands between Ember and the crowd. \
Ember lowers its head and the crowd falls silent. \
At dawn Lina and Ember fly over the valley together.";

pub fn proposal(budget: u32) -> StoryProposal {
    StoryProposal::new("dragon-story", DRAGON_STORY, "ink", budget).expect("valid proposal")
}

pub fn style(lambda: f64) -> StyleSpec {
    StyleSpec::new("ink", "Ink wash", lambda).expect("valid style")
}

pub fn studio() -> Studio {
    studio_with(EngineConfig::default())
}

pub fn studio_with(config: EngineConfig) -> Studio {
    Studio::in_memory(config, Arc::new(FixedClock::new(1_700_000_000_000))).expect("studio builds")
}

pub fn fs_studio(dir: &std::path::Path) -> Studio {
    Studio::open(dir, EngineConfig::default(), Arc::new(FixedClock::new(1_700_000_000_000))).expect("studio opens")
}

pub mod oracle;
