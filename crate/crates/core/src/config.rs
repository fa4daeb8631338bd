//! Engine configuration with every tunable default in one place.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Root seed; every run derives its per-shot seeds from it.
    pub seed: u64,
    pub retrieval: RetrievalConfig,
    pub utilities: UtilityConfig,
    pub image: ImageConfig,
    pub video: VideoConfig,
    pub script: ScriptConfig,
    pub providers: ProviderConfig,
    pub retry: RetryConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            retrieval: RetrievalConfig::default(),
            utilities: UtilityConfig::default(),
            image: ImageConfig::default(),
            video: VideoConfig::default(),
            script: ScriptConfig::default(),
            providers: ProviderConfig::default(),
            retry: RetryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Minimum similarity for feedback to update an existing experience.
    pub tau_update: f64,
    pub min_score: f64,
    pub k_knowledge: usize,
    pub k_experience: usize,
    /// Threshold for experience injected into prompts and image
    /// descriptions. Experience is already partitioned by category and capped
    /// at `k_experience`, so the default admits every entry.
    pub experience_min_score: f64,
    pub embedding_dimension: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            tau_update: 0.60,
            min_score: 0.25,
            k_knowledge: 3,
            k_experience: 3,
            experience_min_score: -1.0,
            embedding_dimension: crate::rag::DEFAULT_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityConfig {
    pub suggest_threshold: f64,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self { suggest_threshold: 0.35 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub width: u32,
    pub height: u32,
    pub default_lambda_ct: f64,
    pub max_refine_rounds: u32,
    pub max_characters_per_shot: usize,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 288,
            default_lambda_ct: 0.6,
            max_refine_rounds: 2,
            max_characters_per_shot: crate::domain::DEFAULT_MAX_CHARACTERS_PER_SHOT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub min_shot_ms: u64,
    pub default_transition_ms: u64,
    pub frame_rate: u32,
    pub narrator_voice: String,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            min_shot_ms: 2000,
            default_transition_ms: 500,
            frame_rate: 25,
            narrator_voice: "narrator".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptConfig {
    pub default_shot_budget: u32,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        Self { default_shot_budget: 12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            base_url: "http://127.0.0.1:8700".into(),
            token_env: "STORYREEL_PROVIDER_TOKEN".into(),
            timeout_secs: 30,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff_ms: 500,
        }
    }
}
