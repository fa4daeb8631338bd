use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{check_references, validate_dag, InputBinding, TaskNode, Workflow};
use crate::config::RetryConfig;
use crate::domain::ArtifactRef;
use crate::rag::RecordLog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum NodeState {
    Pending,
    Running,
    Done { outputs: BTreeMap<String, ArtifactRef> },
    Failed { error: String, attempts: u32 },
}

impl NodeState {
    pub fn is_done(&self) -> bool {
        matches!(self, Self::Done { .. })
    }
}

/// One record of a run log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Started {
        run_id: String,
        workflow_id: String,
        workflow_version: u32,
        seed: u64,
        inputs: BTreeMap<String, ArtifactRef>,
    },
    Checkpoint {
        seq: u64,
        node_id: String,
        state: NodeState,
    },
}

/// Append-only checkpoint sink of a single run.
pub trait RunLog: Send {
    fn append(&mut self, event: &RunEvent) -> io::Result<()>;
    fn events(&self) -> io::Result<Vec<RunEvent>>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryRunLog {
    pub events: Vec<RunEvent>,
}

impl RunLog for MemoryRunLog {
    fn append(&mut self, event: &RunEvent) -> io::Result<()> {
        self.events.push(event.clone());
        Ok(())
    }

    fn events(&self) -> io::Result<Vec<RunEvent>> {
        Ok(self.events.clone())
    }
}

/// Run log persisted one JSON record per line.
#[derive(Debug)]
pub struct FileRunLog {
    log: RecordLog,
}

impl FileRunLog {
    pub fn new(path: &Path) -> Self {
        Self {
            log: RecordLog::new(path),
        }
    }
}

impl RunLog for FileRunLog {
    fn append(&mut self, event: &RunEvent) -> io::Result<()> {
        self.log.append(event)
    }

    fn events(&self) -> io::Result<Vec<RunEvent>> {
        self.log.read_all()
    }
}

/// A run log that stops accepting writes after `limit` appends, as if the
/// process died at that point.
pub struct CrashingRunLog<L> {
    pub inner: L,
    pub limit: usize,
    written: usize,
}

impl<L: RunLog> CrashingRunLog<L> {
    pub fn new(inner: L, limit: usize) -> Self {
        Self {
            inner,
            limit,
            written: 0,
        }
    }
}

impl<L: RunLog> RunLog for CrashingRunLog<L> {
    fn append(&mut self, event: &RunEvent) -> io::Result<()> {
        if self.written >= self.limit {
            return Err(io::Error::other("run log closed (simulated crash)"));
        }
        self.written += 1;
        self.inner.append(event)
    }

    fn events(&self) -> io::Result<Vec<RunEvent>> {
        self.inner.events()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowRun {
    pub run_id: String,
    pub workflow_id: String,
    pub workflow_version: u32,
    pub seed: u64,
    pub inputs: BTreeMap<String, ArtifactRef>,
    pub node_states: BTreeMap<String, NodeState>,
    pub checkpoint_seq: u64,
    /// Nodes started by this invocation, in start order.
    pub start_sequence: Vec<String>,
}

impl WorkflowRun {
    pub fn is_complete(&self) -> bool {
        self.node_states.values().all(NodeState::is_done)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.node_states
            .iter()
            .filter(|(_, s)| matches!(s, NodeState::Failed { .. }))
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn output(&self, node: &str, key: &str) -> Option<&ArtifactRef> {
        match self.node_states.get(node)? {
            NodeState::Done { outputs } => outputs.get(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedInput {
    Artifact(ArtifactRef),
    Literal(String),
}

/// Resolved parameters of one node execution.
#[derive(Debug, Clone, Default)]
pub struct NodeInputs {
    pub values: BTreeMap<String, ResolvedInput>,
    pub seed: u64,
}

impl NodeInputs {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactRef> {
        match self.values.get(name)? {
            ResolvedInput::Artifact(a) => Some(a),
            ResolvedInput::Literal(_) => None,
        }
    }

    pub fn literal(&self, name: &str) -> Option<&str> {
        match self.values.get(name)? {
            ResolvedInput::Literal(s) => Some(s),
            ResolvedInput::Artifact(_) => None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{message}")]
pub struct NodeError {
    pub message: String,
    pub transient: bool,
}

impl NodeError {
    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            transient: false,
        }
    }
}

pub type NodeOutputs = BTreeMap<String, ArtifactRef>;

/// Executes one node kind. Implementations must be deterministic in their
/// inputs for resume to reproduce an uninterrupted run.
pub trait NodeHandler: Sync {
    fn run(&self, node: &TaskNode, inputs: &NodeInputs) -> Result<NodeOutputs, NodeError>;
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("workflow is not executable: {0}")]
    InvalidWorkflow(String),
    #[error("checkpoint persistence failed: {0}")]
    Persistence(#[from] io::Error),
    #[error("run log does not belong to this workflow: {0}")]
    LogMismatch(String),
}

pub struct Executor<'a> {
    handler: &'a dyn NodeHandler,
    retry: RetryConfig,
    max_parallel: usize,
}

impl<'a> Executor<'a> {
    pub fn new(handler: &'a dyn NodeHandler, retry: RetryConfig) -> Self {
        let max_parallel = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4);
        Self {
            handler,
            retry,
            max_parallel,
        }
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n.max(1);
        self
    }

    /// Start a fresh run. The `Started` record is written first.
    pub fn execute(
        &self,
        workflow: &Workflow,
        run_id: &str,
        inputs: BTreeMap<String, ArtifactRef>,
        seed: u64,
        log: &mut dyn RunLog,
    ) -> Result<WorkflowRun, ExecError> {
        check_executable(workflow)?;
        log.append(&RunEvent::Started {
            run_id: run_id.to_string(),
            workflow_id: workflow.id.clone(),
            workflow_version: workflow.version,
            seed,
            inputs: inputs.clone(),
        })?;
        let mut run = WorkflowRun {
            run_id: run_id.to_string(),
            workflow_id: workflow.id.clone(),
            workflow_version: workflow.version,
            seed,
            inputs,
            node_states: workflow.nodes.iter().map(|n| (n.id.clone(), NodeState::Pending)).collect(),
            checkpoint_seq: 0,
            start_sequence: Vec::new(),
        };
        self.drive(workflow, &mut run, log)?;
        Ok(run)
    }

    /// Continue a run from its log. Done nodes keep their outputs; nodes
    /// that were running or failed are executed again.
    pub fn resume(&self, workflow: &Workflow, log: &mut dyn RunLog) -> Result<WorkflowRun, ExecError> {
        check_executable(workflow)?;
        let mut run = replay(workflow, &log.events()?)?;
        for state in run.node_states.values_mut() {
            if matches!(state, NodeState::Running | NodeState::Failed { .. }) {
                *state = NodeState::Pending;
            }
        }
        self.drive(workflow, &mut run, log)?;
        Ok(run)
    }

    fn checkpoint(run: &mut WorkflowRun, log: &mut dyn RunLog, node: &str, state: NodeState) -> io::Result<()> {
        let seq = run.checkpoint_seq + 1;
        log.append(&RunEvent::Checkpoint {
            seq,
            node_id: node.to_string(),
            state: state.clone(),
        })?;
        run.checkpoint_seq = seq;
        run.node_states.insert(node.to_string(), state);
        Ok(())
    }

    fn drive(&self, workflow: &Workflow, run: &mut WorkflowRun, log: &mut dyn RunLog) -> Result<(), ExecError> {
        let handler = self.handler;
        let retry = self.retry.clone();
        std::thread::scope(|scope| -> Result<(), ExecError> {
            let (tx, rx) = mpsc::channel::<(String, Result<NodeOutputs, (NodeError, u32)>)>();
            let mut in_flight = 0usize;
            loop {
                let ready: Vec<&TaskNode> = workflow
                    .nodes
                    .iter()
                    .filter(|n| run.node_states[&n.id] == NodeState::Pending)
                    .filter(|n| n.depends_on.iter().all(|d| run.node_states[d].is_done()))
                    .collect();
                for node in ready {
                    if in_flight >= self.max_parallel {
                        break;
                    }
                    let inputs = match resolve_inputs(node, run) {
                        Ok(i) => i,
                        Err(e) => {
                            Self::checkpoint(
                                run,
                                log,
                                &node.id,
                                NodeState::Failed {
                                    error: e.message,
                                    attempts: 0,
                                },
                            )?;
                            continue;
                        }
                    };
                    Self::checkpoint(run, log, &node.id, NodeState::Running)?;
                    run.start_sequence.push(node.id.clone());
                    in_flight += 1;
                    let tx = tx.clone();
                    let retry = retry.clone();
                    scope.spawn(move || {
                        let result = run_with_retries(handler, node, &inputs, &retry);
                        let _ = tx.send((node.id.clone(), result));
                    });
                }
                if in_flight == 0 {
                    return Ok(());
                }
                let (id, result) = rx.recv().expect("worker threads always report");
                in_flight -= 1;
                let state = match result {
                    Ok(outputs) => NodeState::Done { outputs },
                    Err((e, attempts)) => {
                        tracing::warn!(node = %id, error = %e, attempts, "node failed");
                        NodeState::Failed {
                            error: e.message,
                            attempts,
                        }
                    }
                };
                Self::checkpoint(run, log, &id, state)?;
            }
        })
    }
}

fn check_executable(workflow: &Workflow) -> Result<(), ExecError> {
    if let Some((path, msg)) = check_references(workflow).into_iter().next() {
        return Err(ExecError::InvalidWorkflow(format!("{path}: {msg}")));
    }
    if let super::model::DagCheck::CycleFound(c) = validate_dag(workflow) {
        return Err(ExecError::InvalidWorkflow(format!("cycle {}", c.join(" -> "))));
    }
    Ok(())
}

fn run_with_retries(
    handler: &dyn NodeHandler,
    node: &TaskNode,
    inputs: &NodeInputs,
    retry: &RetryConfig,
) -> Result<NodeOutputs, (NodeError, u32)> {
    let mut attempts = 0;
    let mut backoff = Duration::from_millis(retry.initial_backoff_ms);
    loop {
        attempts += 1;
        match handler.run(node, inputs) {
            Ok(out) => return Ok(out),
            Err(e) if e.transient && attempts <= retry.max_retries => {
                tracing::info!(node = %node.id, attempts, "transient failure, backing off");
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            Err(e) => return Err((e, attempts)),
        }
    }
}

fn resolve_inputs(node: &TaskNode, run: &WorkflowRun) -> Result<NodeInputs, NodeError> {
    let mut values = BTreeMap::new();
    for (name, binding) in &node.input_bindings {
        let v = match binding {
            InputBinding::Literal { value } => ResolvedInput::Literal(value.clone()),
            InputBinding::RunInput { key } => ResolvedInput::Artifact(
                run.inputs
                    .get(key)
                    .cloned()
                    .ok_or_else(|| NodeError::permanent(format!("run input {key:?} was not supplied")))?,
            ),
            InputBinding::Upstream { node: up, output } => ResolvedInput::Artifact(
                run.output(up, output)
                    .cloned()
                    .ok_or_else(|| NodeError::permanent(format!("{up} produced no output {output:?}")))?,
            ),
        };
        values.insert(name.clone(), v);
    }
    Ok(NodeInputs { values, seed: run.seed })
}

/// Rebuild run state from its log.
pub fn replay(workflow: &Workflow, events: &[RunEvent]) -> Result<WorkflowRun, ExecError> {
    let Some(RunEvent::Started {
        run_id,
        workflow_id,
        workflow_version,
        seed,
        inputs,
    }) = events.first()
    else {
        return Err(ExecError::LogMismatch("log does not start with a Started record".into()));
    };
    if workflow_id != &workflow.id || *workflow_version != workflow.version {
        return Err(ExecError::LogMismatch(format!(
            "log is for {workflow_id} v{workflow_version}, workflow is {} v{}",
            workflow.id, workflow.version
        )));
    }
    let mut run = WorkflowRun {
        run_id: run_id.clone(),
        workflow_id: workflow_id.clone(),
        workflow_version: *workflow_version,
        seed: *seed,
        inputs: inputs.clone(),
        node_states: workflow.nodes.iter().map(|n| (n.id.clone(), NodeState::Pending)).collect(),
        checkpoint_seq: 0,
        start_sequence: Vec::new(),
    };
    for ev in &events[1..] {
        match ev {
            RunEvent::Checkpoint { seq, node_id, state } => {
                if *seq <= run.checkpoint_seq || !run.node_states.contains_key(node_id) {
                    return Err(ExecError::LogMismatch(format!("bad checkpoint {seq} for {node_id}")));
                }
                run.checkpoint_seq = *seq;
                run.node_states.insert(node_id.clone(), state.clone());
            }
            RunEvent::Started { .. } => return Err(ExecError::LogMismatch("second Started record".into())),
        }
    }
    Ok(run)
}
