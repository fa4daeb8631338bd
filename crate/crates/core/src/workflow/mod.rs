//! Production workflow as a DAG of task nodes: planning, feedback-driven
//! re-planning, version history and checkpointed execution.

mod exec;
mod model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{append_sections, builtin_templates, PromptTemplate, PLANNER_TEMPLATE, REPAIR_HEADING};
use crate::rag::{ExperienceCategory, ExperienceStore, ExperienceSynthesizer, FeedbackRecord, RagError};
use crate::utility::{AdapterError, GenerationParams, TextGenerator};

pub use exec::{
    replay, CrashingRunLog, ExecError, Executor, FileRunLog, MemoryRunLog, NodeError, NodeHandler, NodeInputs,
    NodeOutputs, NodeState, ResolvedInput, RunEvent, RunLog, WorkflowRun,
};
pub use model::*;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("planner output is unusable at {path}: {message}")]
    PlannerOutputUnparseable { path: String, message: String },
    #[error("planned workflow has a cycle: {}", .0.join(" -> "))]
    CyclicWorkflow(Vec<String>),
    #[error("feedback category {got} cannot be applied here (expected {expected})")]
    PreconditionViolation {
        expected: ExperienceCategory,
        got: ExperienceCategory,
    },
    #[error("planner adapter failed: {0}")]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error("version {got} does not follow {latest}")]
    VersionGap { latest: u32, got: u32 },
    #[error("workflow version {0} not found")]
    UnknownVersion(u32),
}

/// Inputs of the planning agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerContext {
    /// What the workflow must achieve.
    pub task_description: String,
    /// Template body with a `{task_description}` slot.
    pub planning_prompt: String,
    /// Experience texts injected into the last rendering.
    pub retrieved_experience: Vec<String>,
}

impl PlannerContext {
    /// Context using the built-in planning prompt.
    pub fn new(task_description: impl Into<String>) -> Self {
        let body = builtin_templates()
            .into_iter()
            .find(|t| t.id == PLANNER_TEMPLATE)
            .expect("planner template is built in")
            .body;
        Self {
            task_description: task_description.into(),
            planning_prompt: body,
            retrieved_experience: Vec::new(),
        }
    }
}

/// Planner settings.
#[derive(Debug, Clone)]
pub struct PlannerSettings {
    pub workflow_id: String,
    pub k_experience: usize,
    pub experience_min_score: f64,
    pub tau_update: f64,
    pub params: GenerationParams,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        let cfg = crate::config::EngineConfig::default();
        Self {
            workflow_id: default_workflow().id,
            k_experience: cfg.retrieval.k_experience,
            experience_min_score: cfg.retrieval.experience_min_score,
            tau_update: cfg.retrieval.tau_update,
            params: GenerationParams {
                seed: cfg.seed,
                ..GenerationParams::default()
            },
        }
    }
}

/// A planned workflow and the prompt that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowProposal {
    pub workflow: Workflow,
    pub prompt: String,
    pub experience_used: Vec<String>,
}

#[derive(Deserialize)]
struct PlannerReply {
    nodes: Vec<TaskNode>,
}

enum PlanProblem {
    Unusable { path: String, message: String },
    Cycle(Vec<String>),
}

fn parse_plan(reply: &str, workflow_id: &str) -> Result<Workflow, PlanProblem> {
    let parsed: PlannerReply = serde_json::from_str(crate::prompt::extract_json(reply)).map_err(|e| PlanProblem::Unusable {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let workflow = Workflow {
        id: workflow_id.to_string(),
        version: 1,
        nodes: parsed.nodes,
        rationale: "initial plan".into(),
        status: WorkflowStatus::Draft,
    };
    if workflow.nodes.is_empty() {
        return Err(PlanProblem::Unusable {
            path: "nodes".into(),
            message: "plan has no nodes".into(),
        });
    }
    if let Some((path, message)) = check_references(&workflow).into_iter().next() {
        return Err(PlanProblem::Unusable { path, message });
    }
    if let DagCheck::CycleFound(c) = validate_dag(&workflow) {
        return Err(PlanProblem::Cycle(c));
    }
    Ok(workflow)
}

/// Plan a workflow for `ctx.task_description` with retrieved workflow
/// experience appended to the planning prompt. Unusable plans get one repair
/// round-trip.
pub fn propose_workflow(
    ctx: &mut PlannerContext,
    planner: &dyn TextGenerator,
    erag: &ExperienceStore,
    settings: &PlannerSettings,
) -> Result<WorkflowProposal, WorkflowError> {
    let template = PromptTemplate::new(PLANNER_TEMPLATE, ctx.planning_prompt.clone(), ExperienceCategory::Workflow).map_err(|e| {
        WorkflowError::PlannerOutputUnparseable {
            path: "planning_prompt".into(),
            message: e.to_string(),
        }
    })?;
    let slots = [("task_description".to_string(), ctx.task_description.clone())].into_iter().collect();
    let body = template.render(&slots).map_err(|e| WorkflowError::PlannerOutputUnparseable {
        path: "planning_prompt".into(),
        message: e.to_string(),
    })?;
    let hits = match erag.retrieve_entries(
        &ctx.task_description,
        Some(ExperienceCategory::Workflow),
        settings.k_experience,
        settings.experience_min_score,
    ) {
        Ok(h) => h,
        Err(RagError::EmptyText) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let experience_used: Vec<String> = hits.iter().map(|(h, _)| h.entry_id.clone()).collect();
    ctx.retrieved_experience = hits.into_iter().map(|(_, e)| e.text).collect();
    let prompt = append_sections(&body, &[], &ctx.retrieved_experience);

    let first = planner.text_generate(&prompt, &settings.params)?;
    let problem = match parse_plan(&first, &settings.workflow_id) {
        Ok(workflow) => {
            return Ok(WorkflowProposal {
                workflow,
                prompt,
                experience_used,
            })
        }
        Err(p) => p,
    };
    let error_text = match &problem {
        PlanProblem::Unusable { path, message } => format!("{path}: {message}"),
        PlanProblem::Cycle(c) => format!("dependency cycle {}", c.join(" -> ")),
    };
    tracing::warn!(error = %error_text, "planner output unusable, requesting repair");
    let repair = format!("{prompt}\n\n{REPAIR_HEADING}\nThe previous plan could not be used: {error_text}\nReply again with the corrected JSON document only.");
    let second = planner.text_generate(&repair, &settings.params)?;
    match parse_plan(&second, &settings.workflow_id) {
        Ok(workflow) => Ok(WorkflowProposal {
            workflow,
            prompt,
            experience_used,
        }),
        Err(PlanProblem::Unusable { path, message }) => Err(WorkflowError::PlannerOutputUnparseable { path, message }),
        Err(PlanProblem::Cycle(c)) => Err(WorkflowError::CyclicWorkflow(c)),
    }
}

/// Fold workflow feedback into experience, then re-plan. The result is the
/// next version of `current`; `current` itself is left as it is.
pub fn apply_workflow_feedback(
    current: &Workflow,
    ctx: &mut PlannerContext,
    feedback: &FeedbackRecord,
    erag: &ExperienceStore,
    synthesizer: &dyn ExperienceSynthesizer,
    planner: &dyn TextGenerator,
    settings: &PlannerSettings,
) -> Result<Workflow, WorkflowError> {
    if feedback.category != ExperienceCategory::Workflow {
        return Err(WorkflowError::PreconditionViolation {
            expected: ExperienceCategory::Workflow,
            got: feedback.category,
        });
    }
    erag.update_experience(feedback, synthesizer, settings.tau_update)?;
    let settings = PlannerSettings {
        workflow_id: current.id.clone(),
        ..settings.clone()
    };
    let mut next = propose_workflow(ctx, planner, erag, &settings)?.workflow;
    next.version = current.version + 1;
    next.rationale = format!("revised after feedback {}: {}", feedback.id, feedback.text.trim());
    Ok(next)
}

/// Immutable, densely numbered chain of workflow versions. Only the
/// approval flag of a stored version may change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowVersions {
    versions: Vec<Workflow>,
}

impl WorkflowVersions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, workflow: Workflow) -> Result<(), WorkflowError> {
        let latest = self.versions.last().map_or(0, |w| w.version);
        if workflow.version != latest + 1 {
            return Err(WorkflowError::VersionGap {
                latest,
                got: workflow.version,
            });
        }
        self.versions.push(workflow);
        Ok(())
    }

    pub fn latest(&self) -> Option<&Workflow> {
        self.versions.last()
    }

    pub fn get(&self, version: u32) -> Option<&Workflow> {
        self.versions.get(version.checked_sub(1)? as usize)
    }

    pub fn all(&self) -> &[Workflow] {
        &self.versions
    }

    pub fn approve(&mut self, version: u32) -> Result<&Workflow, WorkflowError> {
        let w = self
            .versions
            .get_mut(version.checked_sub(1).ok_or(WorkflowError::UnknownVersion(version))? as usize)
            .ok_or(WorkflowError::UnknownVersion(version))?;
        w.status = WorkflowStatus::Approved;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }
}
