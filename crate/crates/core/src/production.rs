//! Wiring of the stores, adapters and pipelines into something that can run
//! a production workflow end to end.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{get_json, put_json, ArtifactStore, FsArtifactStore, MemoryArtifactStore, StoreError};
use crate::clock::Clock;
use crate::config::{EngineConfig, ProviderKind};
use crate::domain::{validate_script_with, Action, ArtifactRef, Character, Script, StoryProposal, StyleSpec, ValidationOptions};
use crate::image::{ImagePipeline, ImageSettings, MagicWordRegistry, RefineOutcome, ShotImageSet};
use crate::prompt::{ActionPlan, LlmSynthesizer, PromptEngine, PromptError, PromptSettings, TemplateLibrary};
use crate::rag::{ExperienceStore, HashEmbedder, KnowledgeStore, RagError};
use crate::utility::http::HttpProvider;
use crate::utility::{builtin_utilities, AdapterError, AdapterSet, GenerationParams, RegistryError, UtilityRegistry};
use crate::video::{align_timeline, emit_manifest, plan_materials, ManifestSettings, MaterialPlan, Timeline};
use crate::workflow::{
    ExecError, Executor, NodeError, NodeHandler, NodeInputs, NodeOutputs, RunLog, TaskNode, Workflow, WorkflowRun,
    INPUT_PROPOSAL, INPUT_STYLE, NODE_ACTIONS, NODE_CHARACTERS, NODE_EDITING, NODE_IMAGES, NODE_MATERIALS, NODE_SHOTS,
    NODE_TIMELINE, NODE_TITLE, NODE_VIDEO,
};

#[derive(Debug, Error)]
pub enum ProductionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("run output missing: {0}")]
    MissingOutput(String),
}

/// Per-shot seeds, all drawn from one generator seeded with the run seed.
pub fn shot_seeds(root: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Outcome of the critic loop for one shot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotReview {
    pub shot_id: String,
    pub accepted: bool,
    pub attempts: u32,
    pub outstanding: Vec<String>,
    pub segmentation_misses: Vec<String>,
}

/// Everything the engine needs, shared by every run.
#[derive(Clone)]
pub struct Studio {
    pub config: EngineConfig,
    pub store: Arc<dyn ArtifactStore>,
    pub krag: Arc<KnowledgeStore>,
    pub erag: Arc<ExperienceStore>,
    pub adapters: AdapterSet,
    pub templates: Arc<TemplateLibrary>,
    pub magic_words: Arc<MagicWordRegistry>,
    pub utilities: Arc<UtilityRegistry>,
    pub clock: Arc<dyn Clock>,
}

impl Studio {
    /// Everything in memory.
    pub fn in_memory(config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self, ProductionError> {
        let embedder = Arc::new(HashEmbedder::new(config.retrieval.embedding_dimension));
        let store: Arc<dyn ArtifactStore> = Arc::new(MemoryArtifactStore::new(clock.clone()));
        let krag = Arc::new(KnowledgeStore::in_memory(embedder.clone()));
        let erag = Arc::new(ExperienceStore::in_memory(embedder, clock.clone()));
        Self::assemble(config, clock, store, krag, erag, None)
    }

    /// Stores persisted under `dir` (`artifacts/`, `knowledge/`,
    /// `experience/`, `provider-cache/`).
    pub fn open(dir: &Path, config: EngineConfig, clock: Arc<dyn Clock>) -> Result<Self, ProductionError> {
        let embedder = Arc::new(HashEmbedder::new(config.retrieval.embedding_dimension));
        let store: Arc<dyn ArtifactStore> = Arc::new(FsArtifactStore::open(dir.join("artifacts"), clock.clone())?);
        let krag = Arc::new(KnowledgeStore::open(&dir.join("knowledge"), embedder.clone())?);
        let erag = Arc::new(ExperienceStore::open(&dir.join("experience"), embedder, clock.clone())?);
        Self::assemble(config, clock, store, krag, erag, Some(dir.join("provider-cache")))
    }

    fn assemble(
        config: EngineConfig,
        clock: Arc<dyn Clock>,
        store: Arc<dyn ArtifactStore>,
        krag: Arc<KnowledgeStore>,
        erag: Arc<ExperienceStore>,
        cache_dir: Option<std::path::PathBuf>,
    ) -> Result<Self, ProductionError> {
        let magic_words = Arc::new(MagicWordRegistry::default());
        let adapters = match config.providers.kind {
            ProviderKind::Mock => AdapterSet::mock(store.clone(), magic_words.clone(), config.image.width, config.image.height),
            ProviderKind::Http => HttpProvider::new(&config.providers, &config.retry, store.clone(), cache_dir)?.adapter_set(),
        };
        let utilities = Arc::new(UtilityRegistry::new());
        for u in builtin_utilities() {
            utilities.register(u, &krag)?;
        }
        Ok(Self {
            config,
            store,
            krag,
            erag,
            adapters,
            templates: Arc::new(TemplateLibrary::default()),
            magic_words,
            utilities,
            clock,
        })
    }

    /// Swap in other adapters, for tests and custom providers.
    pub fn with_adapters(mut self, adapters: AdapterSet) -> Self {
        self.adapters = adapters;
        self
    }

    pub fn with_templates(mut self, templates: TemplateLibrary) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    fn params(&self, seed: u64) -> GenerationParams {
        GenerationParams {
            seed,
            ..GenerationParams::default()
        }
    }

    pub fn prompt_engine(&self, seed: u64) -> PromptEngine {
        let mut settings = PromptSettings::from_config(&self.config, self.magic_words.phrases());
        settings.params = self.params(seed);
        PromptEngine::new(
            self.templates.clone(),
            self.krag.clone(),
            self.erag.clone(),
            self.adapters.text.clone(),
            settings,
        )
    }

    pub fn synthesizer(&self) -> LlmSynthesizer {
        LlmSynthesizer::new(self.adapters.text.clone(), self.templates.clone(), self.params(self.config.seed))
    }

    pub fn image_pipeline(&self) -> ImagePipeline {
        ImagePipeline::new(
            self.adapters.clone(),
            self.store.clone(),
            self.erag.clone(),
            Arc::new(self.synthesizer()),
            ImageSettings::from_config(&self.config),
        )
    }

    pub fn manifest_settings(&self) -> ManifestSettings {
        ManifestSettings::from_config(&self.config.video, &self.config.image)
    }

    /// Store the run inputs for a proposal and style.
    pub fn run_inputs(&self, proposal: &StoryProposal, style: &StyleSpec) -> Result<BTreeMap<String, ArtifactRef>, ProductionError> {
        Ok([
            (INPUT_PROPOSAL.to_string(), put_json(self.store.as_ref(), proposal)?),
            (INPUT_STYLE.to_string(), put_json(self.store.as_ref(), style)?),
        ]
        .into_iter()
        .collect())
    }

    /// Run `workflow` for a proposal from scratch.
    pub fn run(
        &self,
        workflow: &Workflow,
        proposal: &StoryProposal,
        style: &StyleSpec,
        run_id: &str,
        seed: u64,
        log: &mut dyn RunLog,
    ) -> Result<WorkflowRun, ProductionError> {
        let inputs = self.run_inputs(proposal, style)?;
        let handler = ProductionHandler::new(self.clone());
        let run = Executor::new(&handler, self.config.retry.clone()).execute(workflow, run_id, inputs, seed, log)?;
        Ok(run)
    }

    /// Continue an interrupted run from its log.
    pub fn resume(&self, workflow: &Workflow, log: &mut dyn RunLog) -> Result<WorkflowRun, ProductionError> {
        let handler = ProductionHandler::new(self.clone());
        Ok(Executor::new(&handler, self.config.retry.clone()).resume(workflow, log)?)
    }

    /// Read a JSON output of a finished node.
    pub fn output<T: DeserializeOwned>(&self, run: &WorkflowRun, node: &str, key: &str) -> Result<T, ProductionError> {
        let r = run
            .output(node, key)
            .ok_or_else(|| ProductionError::MissingOutput(format!("{node}.{key}")))?;
        Ok(get_json(self.store.as_ref(), r)?)
    }
}

/// Executes the default production nodes against a [`Studio`].
pub struct ProductionHandler {
    studio: Studio,
}

fn failed(e: impl std::fmt::Display, transient: bool) -> NodeError {
    NodeError {
        message: e.to_string(),
        transient,
    }
}

fn prompt_failed(e: PromptError) -> NodeError {
    let transient = matches!(&e, PromptError::Adapter(a) if a.is_transient());
    failed(e, transient)
}

fn adapter_transient(e: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(e);
    while let Some(err) = cur {
        if let Some(a) = err.downcast_ref::<AdapterError>() {
            return a.is_transient();
        }
        cur = err.source();
    }
    false
}

impl ProductionHandler {
    pub fn new(studio: Studio) -> Self {
        Self { studio }
    }

    fn load<T: DeserializeOwned>(&self, inputs: &NodeInputs, name: &str) -> Result<T, NodeError> {
        let r = inputs
            .artifact(name)
            .ok_or_else(|| NodeError::permanent(format!("input {name:?} is missing")))?;
        get_json(self.studio.store.as_ref(), r).map_err(|e| NodeError::permanent(e.to_string()))
    }

    fn put<T: Serialize>(&self, value: &T) -> Result<ArtifactRef, NodeError> {
        put_json(self.studio.store.as_ref(), value).map_err(|e| failed(e, true))
    }

    fn outputs(pairs: Vec<(&str, ArtifactRef)>) -> NodeOutputs {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// A numeric `shot_budget` literal overrides the proposal; anything
    /// else (such as "global") falls back to the proposal budget.
    fn shot_budget(inputs: &NodeInputs, proposal: &StoryProposal) -> u32 {
        inputs
            .literal("shot_budget")
            .and_then(|v| v.parse().ok())
            .unwrap_or(proposal.target_shot_budget)
    }
}

impl NodeHandler for ProductionHandler {
    fn run(&self, node: &TaskNode, inputs: &NodeInputs) -> Result<NodeOutputs, NodeError> {
        let s = &self.studio;
        match node.id.as_str() {
            NODE_TITLE => {
                let proposal: StoryProposal = self.load(inputs, "proposal")?;
                let g = s.prompt_engine(inputs.seed).generate_title(&proposal).map_err(prompt_failed)?;
                Ok(Self::outputs(vec![("title", self.put(&g.value)?), ("prompt", self.put(&g.prompt)?)]))
            }
            NODE_CHARACTERS => {
                let proposal: StoryProposal = self.load(inputs, "proposal")?;
                let g = s.prompt_engine(inputs.seed).design_characters(&proposal).map_err(prompt_failed)?;
                Ok(Self::outputs(vec![("characters", self.put(&g.value)?), ("prompt", self.put(&g.prompt)?)]))
            }
            NODE_ACTIONS => {
                let proposal: StoryProposal = self.load(inputs, "proposal")?;
                let characters: Vec<Character> = self.load(inputs, "characters")?;
                let budget = Self::shot_budget(inputs, &proposal);
                let g = s
                    .prompt_engine(inputs.seed)
                    .plan_actions(&proposal, &characters, budget)
                    .map_err(prompt_failed)?;
                Ok(Self::outputs(vec![("actions", self.put(&g.value)?), ("prompt", self.put(&g.prompt)?)]))
            }
            NODE_SHOTS => {
                let title: String = self.load(inputs, "title")?;
                let characters: Vec<Character> = self.load(inputs, "characters")?;
                let plans: Vec<ActionPlan> = self.load(inputs, "actions")?;
                let engine = s.prompt_engine(inputs.seed);
                let mut prompts = Vec::new();
                let mut actions = Vec::new();
                for plan in &plans {
                    let g = engine.generate_shots(plan, &characters).map_err(prompt_failed)?;
                    prompts.push(g.prompt);
                    actions.push(Action {
                        id: plan.id.clone(),
                        description: plan.description.clone(),
                        shots: g.value,
                    });
                }
                let script = Script {
                    title,
                    characters,
                    actions,
                };
                let report = validate_script_with(
                    &script,
                    &ValidationOptions {
                        known_magic_words: s.magic_words.phrases(),
                        max_characters_per_shot: s.config.image.max_characters_per_shot,
                    },
                );
                if !report.is_valid() {
                    return Err(NodeError::permanent(format!("script is invalid: {:?}", report.violations)));
                }
                Ok(Self::outputs(vec![("script", self.put(&script)?), ("prompts", self.put(&prompts)?)]))
            }
            NODE_IMAGES => {
                let script: Script = self.load(inputs, "script")?;
                let style: StyleSpec = self.load(inputs, "style")?;
                let seeds = shot_seeds(inputs.seed, script.shot_count());
                let sets = s
                    .image_pipeline()
                    .render_script(&script, &style, &seeds)
                    .map_err(|e| failed(&e, adapter_transient(&e)))?;
                Ok(Self::outputs(vec![("image_sets", self.put(&sets)?)]))
            }
            NODE_EDITING => {
                let script: Script = self.load(inputs, "script")?;
                let style: StyleSpec = self.load(inputs, "style")?;
                let sets: Vec<ShotImageSet> = self.load(inputs, "image_sets")?;
                let pipeline = s.image_pipeline();
                let mut refined = Vec::with_capacity(sets.len());
                let mut reviews = Vec::with_capacity(sets.len());
                for (shot, set) in script.shots().zip(sets) {
                    let misses = set.segmentation_misses.clone();
                    let outcome = pipeline
                        .critique_and_refine(set, shot, &script.characters, &style)
                        .map_err(|e| failed(&e, adapter_transient(&e)))?;
                    let outstanding = match &outcome {
                        RefineOutcome::Accepted(_) => Vec::new(),
                        RefineOutcome::Rejected { outstanding, .. } => outstanding.clone(),
                    };
                    if !outcome.is_accepted() {
                        tracing::warn!(shot = %shot.id, ?outstanding, "critic still unsatisfied, keeping last image");
                    }
                    reviews.push(ShotReview {
                        shot_id: shot.id.clone(),
                        accepted: outcome.is_accepted(),
                        attempts: outcome.image_set().attempts,
                        outstanding,
                        segmentation_misses: misses,
                    });
                    refined.push(outcome.image_set().clone());
                }
                Ok(Self::outputs(vec![("image_sets", self.put(&refined)?), ("review", self.put(&reviews)?)]))
            }
            NODE_MATERIALS => {
                let script: Script = self.load(inputs, "script")?;
                let sets: Vec<ShotImageSet> = self.load(inputs, "image_sets")?;
                let plan = plan_materials(&script, &sets, &s.adapters, &s.config.video)
                    .map_err(|e| failed(&e, adapter_transient(&e)))?;
                Ok(Self::outputs(vec![("materials", self.put(&plan)?)]))
            }
            NODE_TIMELINE => {
                let plan: MaterialPlan = self.load(inputs, "materials")?;
                let timeline = align_timeline(&plan, s.config.video.min_shot_ms).map_err(NodeError::permanent_from)?;
                Ok(Self::outputs(vec![("timeline", self.put(&timeline)?)]))
            }
            NODE_VIDEO => {
                let timeline: Timeline = self.load(inputs, "timeline")?;
                let (_, manifest) = emit_manifest(&timeline, s.store.as_ref(), &s.manifest_settings())
                    .map_err(|e| failed(&e, adapter_transient(&e)))?;
                Ok(Self::outputs(vec![("manifest", manifest)]))
            }
            other => Err(NodeError::permanent(format!("no handler for node {other:?}"))),
        }
    }
}

impl NodeError {
    fn permanent_from(e: impl std::fmt::Display) -> Self {
        NodeError::permanent(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let a = shot_seeds(42, 6);
        assert_eq!(a, shot_seeds(42, 6));
        assert_eq!(&shot_seeds(42, 3)[..], &a[..3]);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
        assert_ne!(a, shot_seeds(43, 6));
    }
}
