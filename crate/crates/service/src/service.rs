//! The service core: projects, runs, reviews and store access. The HTTP API
//! and the local CLI are both thin layers over [`Service`].

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use parking_lot::Mutex;
use serde::{Deserialize, Deserializer, Serialize};
use storyreel_core::artifact::{get_json, ArtifactMeta};
use storyreel_core::clock::{Clock, FixedClock, SystemClock};
use storyreel_core::domain::{ArtifactRef, ContentHash, Script, StoryProposal, StyleSpec};
use storyreel_core::evaluation::{DimensionScores, Overall, ReviewTarget, ScoreBook};
use storyreel_core::image::ShotImageSet;
use storyreel_core::production::{ShotReview, Studio};
use storyreel_core::prompt::PromptTemplate;
use storyreel_core::rag::{ExperienceCategory, ExperienceEntry, ExperienceUpdate, FeedbackAuthor, FeedbackRecord, HistoryRecord};
use storyreel_core::rag::KnowledgeEntry;
use storyreel_core::utility::UtilityDescriptor;
use storyreel_core::workflow::{
    default_workflow, propose_workflow, replay, FileRunLog, NodeState, PlannerContext, PlannerSettings, RunLog, Workflow,
    WorkflowRun, WorkflowStatus, NODE_EDITING, NODE_IMAGES, NODE_SHOTS, NODE_VIDEO,
};
use storyreel_core::utility::GenerationParams;

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::project::{Project, ProjectStatus, ProjectStore};

/// Version of every JSON payload the API returns.
pub const API_SCHEMA_VERSION: u32 = 1;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

fn category_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<ExperienceCategory, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

/// Story part of a new project. The id defaults to the project id and the
/// budget to the configured default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewProposal {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default = "default_style_id")]
    pub style_id: String,
    #[serde(default)]
    pub target_shot_budget: Option<u32>,
}

fn default_style_id() -> String {
    "default".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateProject {
    pub proposal: NewProposal,
    /// Style to render with; derived from `proposal.style_id` when absent.
    #[serde(default)]
    pub style: Option<StyleSpec>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(tag = "decision", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decision {
    Approve,
    Reject {
        #[serde(default)]
        comment: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    Inserted,
    Updated,
}

/// What an experience update did, as reported to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub outcome: UpdateKind,
    pub entry_id: String,
    pub version: u32,
    pub text: String,
}

impl From<&ExperienceUpdate> for UpdateSummary {
    fn from(u: &ExperienceUpdate) -> Self {
        let e = u.entry();
        Self {
            outcome: if u.is_inserted() { UpdateKind::Inserted } else { UpdateKind::Updated },
            entry_id: e.id.clone(),
            version: e.version,
            text: e.text.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionOutcome {
    pub project: Project,
    pub update: Option<UpdateSummary>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    #[serde(deserialize_with = "category_from_str")]
    pub category: ExperienceCategory,
    pub target: ReviewTarget,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub scores: Option<DimensionScores>,
    #[serde(default)]
    pub author: Option<FeedbackAuthor>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeedbackResponse {
    pub review_id: String,
    pub overall: Option<Overall>,
    pub feedback_id: Option<String>,
    pub update: Option<UpdateSummary>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddKnowledge {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// Experience entry without its embedding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperienceView {
    pub id: String,
    pub category: ExperienceCategory,
    pub text: String,
    pub version: u32,
    pub provenance: Vec<String>,
    pub created_at: u64,
    pub updated_at: u64,
}

impl From<ExperienceEntry> for ExperienceView {
    fn from(e: ExperienceEntry) -> Self {
        Self {
            id: e.id,
            category: e.category,
            text: e.text,
            version: e.version,
            provenance: e.provenance,
            created_at: e.created_at,
            updated_at: e.updated_at,
        }
    }
}

/// Knowledge chunk without its embedding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KnowledgeView {
    pub id: String,
    pub source_doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub tags: Vec<String>,
}

impl From<KnowledgeEntry> for KnowledgeView {
    fn from(e: KnowledgeEntry) -> Self {
        Self {
            id: e.id,
            source_doc_id: e.source_doc_id,
            chunk_index: e.chunk_index,
            text: e.text,
            tags: e.tags,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectView {
    pub schema_version: u32,
    #[serde(flatten)]
    pub project: Project,
    /// States of the current run's nodes; empty before the first run.
    pub node_states: BTreeMap<String, NodeState>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StoryboardShot {
    pub index: usize,
    pub shot_id: String,
    pub action_id: String,
    pub image_description: String,
    pub narration: String,
    pub images: Option<ShotImageSet>,
    pub review: Option<ShotReview>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Storyboard {
    pub schema_version: u32,
    pub project_id: String,
    pub run_id: String,
    pub script_ref: ArtifactRef,
    pub script: Script,
    pub shots: Vec<StoryboardShot>,
    pub manifest: Option<ArtifactRef>,
}

/// A run that has been admitted and is ready to execute.
#[derive(Debug, Clone)]
pub struct RunTicket {
    pub project_id: String,
    pub run_id: String,
    pub workflow: Workflow,
    pub proposal: StoryProposal,
    pub style: StyleSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    id: String,
    #[serde(deserialize_with = "category_from_str")]
    category: ExperienceCategory,
    body: String,
}

type Stamp = Vec<(PathBuf, Option<SystemTime>, u64)>;

pub struct Service {
    studio: Studio,
    config: ServiceConfig,
    projects: ProjectStore,
    scores: ScoreBook,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    template_stamp: Mutex<Stamp>,
}

impl Service {
    /// Open every store under the configured data directory, load utility
    /// descriptors and prompt templates.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let dir = config.service.data_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let clock: Arc<dyn Clock> = match config.service.fixed_clock_ms {
            Some(ms) => Arc::new(FixedClock::new(ms)),
            None => Arc::new(SystemClock),
        };
        let studio = Studio::open(&dir, config.engine.clone(), clock.clone())?;
        for d in read_documents::<UtilityDescriptor>(&config.service.utilities_dir())? {
            if studio.utilities.get(&d.id).is_none() {
                studio.utilities.register(d, &studio.krag)?;
            }
        }
        let service = Self {
            projects: ProjectStore::open(&dir.join("projects.log"))?,
            scores: ScoreBook::open(dir.join("scores.log"), clock)?,
            studio,
            config,
            locks: Mutex::new(HashMap::new()),
            template_stamp: Mutex::new(Vec::new()),
        };
        service.reload_templates()?;
        Ok(service)
    }

    pub fn studio(&self) -> &Studio {
        &self.studio
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn runs_dir(&self) -> PathBuf {
        self.config.service.data_dir.join("runs")
    }

    fn run_log(&self, run_id: &str) -> FileRunLog {
        FileRunLog::new(&self.runs_dir().join(format!("{run_id}.log")))
    }

    fn project_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_string()).or_default().clone()
    }

    /// Re-read the templates directory if any file in it changed. Returns
    /// the number of templates loaded, or 0 when nothing changed.
    pub fn reload_templates(&self) -> Result<usize> {
        let dir = self.config.service.templates_dir();
        let stamp = stamp_of(&dir)?;
        let mut last = self.template_stamp.lock();
        if *last == stamp {
            return Ok(0);
        }
        let docs = read_documents::<TemplateDoc>(&dir)?;
        let count = docs.len();
        for d in docs {
            self.studio.templates.upsert(PromptTemplate::new(d.id, d.body, d.category)?)?;
        }
        *last = stamp;
        if count > 0 {
            tracing::info!(count, dir = %dir.display(), "prompt templates loaded");
        }
        Ok(count)
    }

    fn project(&self, id: &str) -> Result<Project> {
        self.projects
            .get(id)
            .ok_or_else(|| ServiceError::not_found("project_not_found", format!("project {id:?} does not exist")))
    }

    pub fn list_projects(&self) -> Vec<Project> {
        self.projects.all()
    }

    pub fn create_project(&self, req: CreateProject) -> Result<Project> {
        let engine = &self.config.engine;
        let budget = req.proposal.target_shot_budget.unwrap_or(engine.script.default_shot_budget);
        let style = match req.style {
            Some(s) => {
                if s.id != req.proposal.style_id {
                    return Err(ServiceError::invalid(
                        "schema_violation",
                        format!("style {:?} does not match proposal style_id {:?}", s.id, req.proposal.style_id),
                    ));
                }
                s.validate()?;
                s
            }
            None => StyleSpec::new(&req.proposal.style_id, &req.proposal.style_id, engine.image.default_lambda_ct)?,
        };
        let NewProposal { id, text, style_id, .. } = req.proposal;
        // validate before an id is taken
        StoryProposal::new("check", text.clone(), style_id.clone(), budget)?;
        let project = self.projects.create(|pid| Project {
            proposal: StoryProposal {
                id: id.unwrap_or_else(|| pid.clone()),
                text,
                style_id,
                target_shot_budget: budget,
            },
            id: pid,
            style,
            workflow_versions: Default::default(),
            runs: Vec::new(),
            current_script: None,
            status: ProjectStatus::Draft,
            last_error: None,
        })?;
        tracing::info!(project = %project.id, "project created");
        Ok(project)
    }

    pub fn get_project(&self, id: &str) -> Result<ProjectView> {
        let project = self.project(id)?;
        let node_states = match self.current_run_state(&project)? {
            Some(run) => run.node_states,
            None => BTreeMap::new(),
        };
        Ok(ProjectView {
            schema_version: API_SCHEMA_VERSION,
            project,
            node_states,
        })
    }

    /// State of the current run as recorded in its log.
    fn current_run_state(&self, project: &Project) -> Result<Option<WorkflowRun>> {
        let Some(run_id) = project.current_run() else {
            return Ok(None);
        };
        let events = self.run_log(run_id).events()?;
        let workflow = project
            .workflow_versions
            .latest()
            .ok_or_else(|| ServiceError::internal("corrupt_project", "project has runs but no workflow"))?;
        if events.is_empty() {
            let pending = workflow.nodes.iter().map(|n| (n.id.clone(), NodeState::Pending)).collect();
            return Ok(Some(WorkflowRun {
                run_id: run_id.to_string(),
                workflow_id: workflow.id.clone(),
                workflow_version: workflow.version,
                seed: self.config.engine.seed,
                inputs: BTreeMap::new(),
                node_states: pending,
                checkpoint_seq: 0,
                start_sequence: Vec::new(),
            }));
        }
        replay(workflow, &events)
            .map(Some)
            .map_err(|e| ServiceError::internal("corrupt_run_log", e.to_string()))
    }

    fn planner_settings(&self) -> PlannerSettings {
        let r = &self.config.engine.retrieval;
        PlannerSettings {
            workflow_id: default_workflow().id,
            k_experience: r.k_experience,
            experience_min_score: r.experience_min_score,
            tau_update: r.tau_update,
            params: GenerationParams {
                seed: self.config.engine.seed,
                ..GenerationParams::default()
            },
        }
    }

    /// Propose the next workflow version for a `Draft` project.
    pub fn plan(&self, id: &str) -> Result<Project> {
        let lock = self.project_lock(id);
        let _g = lock.lock();
        let mut project = self.project(id)?;
        if project.status != ProjectStatus::Draft {
            return Err(ServiceError::transition(id, project.status, "plan"));
        }
        self.reload_templates()?;
        let mut ctx = PlannerContext::new(format!(
            "Produce a narrated storyboard video of {} shots for this story: {}",
            project.proposal.target_shot_budget, project.proposal.text
        ));
        let proposal = propose_workflow(&mut ctx, self.studio.adapters.text.as_ref(), &self.studio.erag, &self.planner_settings())?;
        let mut workflow = proposal.workflow;
        workflow.version = project.workflow_versions.latest().map_or(1, |w| w.version + 1);
        if !proposal.experience_used.is_empty() {
            workflow.rationale = format!("planned with experience {}", proposal.experience_used.join(", "));
        }
        project.workflow_versions.push(workflow)?;
        project
            .transition(ProjectStatus::AwaitingApproval)
            .map_err(|(from, _)| ServiceError::transition(id, from, "plan"))?;
        self.projects.save(&project)?;
        Ok(project)
    }

    /// Approve or reject the proposed workflow, or accept a run that needs
    /// review. A rejection comment becomes workflow feedback.
    pub fn decide(&self, id: &str, decision: Decision) -> Result<DecisionOutcome> {
        let lock = self.project_lock(id);
        let _g = lock.lock();
        let mut project = self.project(id)?;
        let mut update = None;
        match (&decision, project.status) {
            (Decision::Approve, ProjectStatus::AwaitingApproval) => {
                let latest = project.workflow_versions.latest().expect("awaiting approval implies a plan");
                if latest.status == WorkflowStatus::Approved {
                    return Err(ServiceError::conflict(
                        "already_approved",
                        format!("workflow v{} of project {id} is already approved", latest.version),
                    ));
                }
                let version = latest.version;
                project.workflow_versions.approve(version)?;
            }
            (Decision::Approve, ProjectStatus::NeedsReview) => {
                project.transition(ProjectStatus::Completed).expect("declared transition");
            }
            (Decision::Reject { comment }, ProjectStatus::AwaitingApproval) => {
                let version = project.workflow_versions.latest().map_or(0, |w| w.version);
                if !comment.trim().is_empty() {
                    let record = FeedbackRecord::new(
                        format!("{id}-v{version}-rejected"),
                        ExperienceCategory::Workflow,
                        comment.trim(),
                        None,
                        FeedbackAuthor::HumanExpert,
                    );
                    let u = self.studio.erag.update_experience(
                        &record,
                        &self.studio.synthesizer(),
                        self.config.engine.retrieval.tau_update,
                    )?;
                    update = Some(UpdateSummary::from(&u));
                }
                project.transition(ProjectStatus::Draft).expect("declared transition");
            }
            (Decision::Approve, status) => return Err(ServiceError::transition(id, status, "approve")),
            (Decision::Reject { .. }, status) => return Err(ServiceError::transition(id, status, "reject")),
        }
        self.projects.save(&project)?;
        Ok(DecisionOutcome { project, update })
    }

    /// Admit a run: the project must have an approved workflow awaiting its
    /// first run, or be waiting for review. The project becomes `Running`.
    pub fn start_run(&self, id: &str) -> Result<RunTicket> {
        let lock = self.project_lock(id);
        let _g = lock.lock();
        let mut project = self.project(id)?;
        let workflow = match (project.status, project.workflow_versions.latest()) {
            (ProjectStatus::AwaitingApproval, Some(w)) if w.status == WorkflowStatus::Approved => w.clone(),
            (ProjectStatus::AwaitingApproval, _) => {
                return Err(ServiceError::conflict(
                    "workflow_not_approved",
                    format!("cannot run project {id}: status is AwaitingApproval and the workflow is not approved"),
                ))
            }
            (ProjectStatus::NeedsReview, Some(w)) => w.clone(),
            (status, _) => return Err(ServiceError::transition(id, status, "run")),
        };
        self.reload_templates()?;
        let run_id = format!("{id}-run-{}", project.runs.len() + 1);
        project.transition(ProjectStatus::Running).expect("checked above");
        project.runs.push(run_id.clone());
        project.last_error = None;
        self.projects.save(&project)?;
        tracing::info!(project = %id, run = %run_id, "run admitted");
        Ok(RunTicket {
            project_id: project.id,
            run_id,
            workflow,
            proposal: project.proposal,
            style: project.style,
        })
    }

    /// Ticket for the interrupted run of a project left `Running`.
    pub fn resume_ticket(&self, id: &str) -> Result<RunTicket> {
        let project = self.project(id)?;
        if project.status != ProjectStatus::Running {
            return Err(ServiceError::transition(id, project.status, "resume"));
        }
        let (Some(run_id), Some(workflow)) = (project.current_run(), project.workflow_versions.latest()) else {
            return Err(ServiceError::internal("corrupt_project", "running project without a run"));
        };
        Ok(RunTicket {
            project_id: project.id.clone(),
            run_id: run_id.to_string(),
            workflow: workflow.clone(),
            proposal: project.proposal.clone(),
            style: project.style.clone(),
        })
    }

    /// Execute (or continue) an admitted run and record its outcome.
    pub fn execute(&self, ticket: RunTicket) -> Result<Project> {
        let mut log = self.run_log(&ticket.run_id);
        let resumed = !log.events()?.is_empty();
        let result = if resumed {
            tracing::info!(run = %ticket.run_id, "resuming run from its log");
            self.studio.resume(&ticket.workflow, &mut log)
        } else {
            self.studio.run(
                &ticket.workflow,
                &ticket.proposal,
                &ticket.style,
                &ticket.run_id,
                self.config.engine.seed,
                &mut log,
            )
        };

        let lock = self.project_lock(&ticket.project_id);
        let _g = lock.lock();
        let mut project = self.project(&ticket.project_id)?;
        let (next, error) = match result {
            Ok(run) if run.is_complete() => {
                project.current_script = run.output(NODE_SHOTS, "script").cloned();
                let reviews: Vec<ShotReview> = self.studio.output(&run, NODE_EDITING, "review")?;
                if reviews.iter().all(|r| r.accepted) {
                    (ProjectStatus::Completed, None)
                } else {
                    (ProjectStatus::NeedsReview, None)
                }
            }
            Ok(run) => {
                let failures: Vec<String> = run
                    .node_states
                    .iter()
                    .filter_map(|(node, s)| match s {
                        NodeState::Failed { error, attempts } => Some(format!("{node} after {attempts} attempt(s): {error}")),
                        _ => None,
                    })
                    .collect();
                (ProjectStatus::Failed, Some(failures.join("; ")))
            }
            Err(e) => (ProjectStatus::Failed, Some(e.to_string())),
        };
        if let Some(e) = &error {
            tracing::warn!(project = %project.id, run = %ticket.run_id, error = %e, "run failed");
        }
        project
            .transition(next)
            .map_err(|(from, to)| ServiceError::internal("invalid_transition", format!("{from} -> {to}")))?;
        project.last_error = error;
        self.projects.save(&project)?;
        Ok(project)
    }

    /// Continue every run interrupted by a previous shutdown.
    pub fn recover(&self) -> Vec<Result<Project>> {
        self.projects
            .all()
            .into_iter()
            .filter(|p| p.status == ProjectStatus::Running)
            .map(|p| self.resume_ticket(&p.id).and_then(|t| self.execute(t)))
            .collect()
    }

    pub fn storyboard(&self, id: &str) -> Result<Storyboard> {
        let project = self.project(id)?;
        let run = self.current_run_state(&project)?;
        let not_ready = || ServiceError::conflict("storyboard_not_ready", format!("project {id} has no script yet"));
        let run = run.ok_or_else(not_ready)?;
        let script_ref = run.output(NODE_SHOTS, "script").cloned().ok_or_else(not_ready)?;
        let script: Script = get_json(self.studio.store.as_ref(), &script_ref)?;
        let sets: Vec<ShotImageSet> = match run.output(NODE_EDITING, "image_sets").or(run.output(NODE_IMAGES, "image_sets")) {
            Some(r) => get_json(self.studio.store.as_ref(), r)?,
            None => Vec::new(),
        };
        let reviews: Vec<ShotReview> = match run.output(NODE_EDITING, "review") {
            Some(r) => get_json(self.studio.store.as_ref(), r)?,
            None => Vec::new(),
        };
        let mut shots = Vec::with_capacity(script.shot_count());
        for action in &script.actions {
            for shot in &action.shots {
                shots.push(StoryboardShot {
                    index: shots.len(),
                    shot_id: shot.id.clone(),
                    action_id: action.id.clone(),
                    image_description: shot.image_description.clone(),
                    narration: shot.narration.clone(),
                    images: sets.iter().find(|s| s.shot_id == shot.id).cloned(),
                    review: reviews.iter().find(|r| r.shot_id == shot.id).cloned(),
                });
            }
        }
        Ok(Storyboard {
            schema_version: API_SCHEMA_VERSION,
            project_id: project.id,
            run_id: run.run_id.clone(),
            script_ref,
            script,
            shots,
            manifest: run.output(NODE_VIDEO, "manifest").cloned(),
        })
    }

    /// The render manifest of the current run.
    pub fn manifest(&self, id: &str) -> Result<(ArtifactRef, Vec<u8>)> {
        let project = self.project(id)?;
        let r = self
            .current_run_state(&project)?
            .and_then(|run| run.output(NODE_VIDEO, "manifest").cloned())
            .ok_or_else(|| ServiceError::conflict("manifest_not_ready", format!("project {id} has no render manifest yet")))?;
        let bytes = self.studio.store.get(&r)?;
        Ok((r, bytes))
    }

    /// Artifact bytes, verified against their hash.
    pub fn artifact(&self, hash: &str) -> Result<(ArtifactMeta, Vec<u8>)> {
        let hash = ContentHash::parse(hash).map_err(|e| ServiceError::invalid("bad_hash", e.to_string()))?;
        let meta = self
            .studio
            .store
            .meta(&hash)
            .ok_or_else(|| ServiceError::not_found("artifact_not_found", format!("artifact {hash} does not exist")))?;
        let bytes = self.studio.store.get_by_hash(&hash)?;
        Ok((meta, bytes))
    }

    fn target_exists(&self, target: &ReviewTarget) -> bool {
        match target {
            ReviewTarget::WorkflowNode { node_id } => {
                default_workflow().node(node_id).is_some()
                    || self
                        .projects
                        .all()
                        .iter()
                        .flat_map(|p| p.workflow_versions.all().to_vec())
                        .any(|w| w.node(node_id).is_some())
            }
            ReviewTarget::PromptArtifact { artifact } | ReviewTarget::ImageArtifact { artifact } => {
                self.studio.store.meta(&artifact.content_hash).is_some()
            }
            ReviewTarget::UtilityReport { report_id } => self.studio.utilities.get(report_id).is_some(),
        }
    }

    /// Store a review; its free text updates experience of the target's
    /// category.
    pub fn feedback(&self, req: FeedbackRequest) -> Result<FeedbackResponse> {
        if req.category != req.target.category() {
            return Err(ServiceError::invalid(
                "category_mismatch",
                format!("{} feeds {} experience, not {}", req.target.describe(), req.target.category(), req.category),
            ));
        }
        let outcome = self.scores.ingest_review(
            req.target,
            req.scores,
            &req.text,
            req.author.unwrap_or(FeedbackAuthor::HumanExpert),
            &|t| self.target_exists(t),
            &self.studio.erag,
            &self.studio.synthesizer(),
            self.config.engine.retrieval.tau_update,
        )?;
        Ok(FeedbackResponse {
            review_id: outcome.record.id,
            overall: outcome.record.overall,
            feedback_id: outcome.record.feedback_id,
            update: outcome.feedback.as_ref().map(|(_, u)| UpdateSummary::from(u)),
        })
    }

    pub fn experience(&self, category: Option<&str>) -> Result<Vec<ExperienceView>> {
        let category = category
            .map(|c| c.parse::<ExperienceCategory>())
            .transpose()
            .map_err(|e| ServiceError::invalid("bad_category", e))?;
        Ok(self.studio.erag.entries(category).into_iter().map(ExperienceView::from).collect())
    }

    pub fn experience_history(&self, entry_id: &str) -> Result<Vec<HistoryRecord>> {
        Ok(self.studio.erag.experience_history(entry_id)?)
    }

    pub fn knowledge(&self, tag: Option<&str>) -> Vec<KnowledgeView> {
        let entries = match tag {
            Some(t) => self.studio.krag.with_tag(t),
            None => self.studio.krag.entries(),
        };
        entries.into_iter().map(KnowledgeView::from).collect()
    }

    pub fn add_knowledge(&self, req: AddKnowledge) -> Result<Vec<KnowledgeView>> {
        if req.doc_id.trim().is_empty() {
            return Err(ServiceError::invalid("schema_violation", "doc_id is empty"));
        }
        let entries = self.studio.krag.index_knowledge(&req.doc_id, &req.text, &req.tags)?;
        Ok(entries.into_iter().map(KnowledgeView::from).collect())
    }
}

/// Files of a config directory in name order; a missing directory is empty.
fn list_documents(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "toml" || x == "json"))
            .collect::<Vec<_>>(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    paths.sort();
    Ok(paths)
}

fn stamp_of(dir: &Path) -> std::io::Result<Stamp> {
    list_documents(dir)?
        .into_iter()
        .map(|p| {
            let meta = std::fs::metadata(&p)?;
            Ok((p, meta.modified().ok(), meta.len()))
        })
        .collect()
}

/// Parse every `.toml` or `.json` document in `dir`.
fn read_documents<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for path in list_documents(dir)? {
        let text = std::fs::read_to_string(&path)?;
        let parsed = if path.extension().is_some_and(|x| x == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        out.push(parsed.map_err(|e| ServiceError::invalid("bad_config", format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}
