use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// What a node runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Llm { template_id: String },
    Utility { utility_id: String },
    Assembly,
}

/// Where a node parameter comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBinding {
    /// Output `output` of an ancestor node.
    Upstream { node: String, output: String },
    Literal { value: String },
    /// Artifact supplied when the run starts.
    RunInput { key: String },
}

impl InputBinding {
    pub fn upstream(node: &str, output: &str) -> Self {
        Self::Upstream {
            node: node.to_string(),
            output: output.to_string(),
        }
    }

    pub fn run_input(key: &str) -> Self {
        Self::RunInput { key: key.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub input_bindings: BTreeMap<String, InputBinding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowStatus {
    Draft,
    Approved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub id: String,
    pub version: u32,
    pub nodes: Vec<TaskNode>,
    pub rationale: String,
    pub status: WorkflowStatus,
}

impl Workflow {
    pub fn node(&self, id: &str) -> Option<&TaskNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DagCheck {
    Acyclic,
    /// Witness cycle, first node repeated at the end.
    CycleFound(Vec<String>),
}

impl DagCheck {
    pub fn is_acyclic(&self) -> bool {
        matches!(self, Self::Acyclic)
    }
}

/// Depth-first cycle search over `depends_on` edges. Unknown dependency ids
/// are ignored here; [`check_references`] reports them.
pub fn validate_dag(workflow: &Workflow) -> DagCheck {
    let index: HashMap<&str, usize> = workflow.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    // 0 = unvisited, 1 = on stack, 2 = finished
    let mut state = vec![0u8; workflow.nodes.len()];
    let mut stack: Vec<usize> = Vec::new();

    fn visit(
        i: usize,
        wf: &Workflow,
        index: &HashMap<&str, usize>,
        state: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        state[i] = 1;
        stack.push(i);
        for dep in &wf.nodes[i].depends_on {
            let Some(&j) = index.get(dep.as_str()) else { continue };
            match state[j] {
                0 => {
                    if let Some(c) = visit(j, wf, index, state, stack) {
                        return Some(c);
                    }
                }
                1 => {
                    // stack holds the path down dependency edges; report the
                    // cycle in dependency order starting and ending at j
                    let pos = stack.iter().position(|&s| s == j).expect("on-stack node is in stack");
                    let mut cycle: Vec<String> = stack[pos..].iter().map(|&s| wf.nodes[s].id.clone()).collect();
                    cycle.push(wf.nodes[j].id.clone());
                    return Some(cycle);
                }
                _ => {}
            }
        }
        stack.pop();
        state[i] = 2;
        None
    }

    for i in 0..workflow.nodes.len() {
        if state[i] == 0 {
            if let Some(c) = visit(i, workflow, &index, &mut state, &mut stack) {
                return DagCheck::CycleFound(c);
            }
        }
    }
    DagCheck::Acyclic
}

/// Referential problems as `(path, message)` pairs: duplicate ids, unknown
/// or self dependencies, and upstream bindings to non-ancestors.
pub fn check_references(workflow: &Workflow) -> Vec<(String, String)> {
    let mut problems = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, n) in workflow.nodes.iter().enumerate() {
        if n.id.trim().is_empty() {
            problems.push((format!("nodes[{i}].id"), "node id is empty".to_string()));
        }
        if !ids.insert(n.id.as_str()) {
            problems.push((format!("nodes[{i}].id"), format!("duplicate node id {:?}", n.id)));
        }
    }
    for (i, n) in workflow.nodes.iter().enumerate() {
        for (j, dep) in n.depends_on.iter().enumerate() {
            if dep == &n.id {
                problems.push((format!("nodes[{i}].depends_on[{j}]"), format!("{} depends on itself", n.id)));
            } else if !ids.contains(dep.as_str()) {
                problems.push((
                    format!("nodes[{i}].depends_on[{j}]"),
                    format!("{} depends on unknown node {dep:?}", n.id),
                ));
            }
        }
    }
    if !problems.is_empty() || !validate_dag(workflow).is_acyclic() {
        return problems;
    }
    for (i, n) in workflow.nodes.iter().enumerate() {
        let anc = ancestors(workflow, &n.id);
        for (param, b) in &n.input_bindings {
            if let InputBinding::Upstream { node, .. } = b {
                if !anc.contains(node.as_str()) {
                    problems.push((
                        format!("nodes[{i}].input_bindings.{param}"),
                        format!("{} binds {param} to {node:?}, which is not an ancestor", n.id),
                    ));
                }
            }
        }
    }
    problems
}

/// Every node reachable from `id` along `depends_on` edges.
pub fn ancestors<'a>(workflow: &'a Workflow, id: &str) -> BTreeSet<&'a str> {
    let mut out = BTreeSet::new();
    let mut todo: Vec<&str> = workflow.node(id).map(|n| n.depends_on.iter().map(String::as_str).collect()).unwrap_or_default();
    while let Some(d) = todo.pop() {
        if let Some(node) = workflow.nodes.iter().find(|n| n.id == d) {
            if out.insert(node.id.as_str()) {
                todo.extend(node.depends_on.iter().map(String::as_str));
            }
        }
    }
    out
}

/// Kahn's algorithm with ties broken by declaration order.
pub fn topological_order(workflow: &Workflow) -> Option<Vec<String>> {
    let n = workflow.nodes.len();
    let index: HashMap<&str, usize> = workflow.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in workflow.nodes.iter().enumerate() {
        for d in &node.depends_on {
            let j = *index.get(d.as_str())?;
            indegree[i] += 1;
            dependents[j].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(workflow.nodes[i].id.clone());
        for &k in &dependents[i] {
            indegree[k] -= 1;
            if indegree[k] == 0 {
                ready.insert(k);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Whether `sequence` lists every node once with each node after all of its
/// dependencies.
pub fn is_topological(workflow: &Workflow, sequence: &[String]) -> bool {
    if sequence.len() != workflow.nodes.len() {
        return false;
    }
    let pos: HashMap<&str, usize> = sequence.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if pos.len() != sequence.len() {
        return false;
    }
    workflow.nodes.iter().all(|n| {
        let Some(&p) = pos.get(n.id.as_str()) else { return false };
        n.depends_on.iter().all(|d| pos.get(d.as_str()).is_some_and(|&q| q < p))
    })
}

pub const NODE_TITLE: &str = "title";
pub const NODE_CHARACTERS: &str = "character_design";
pub const NODE_ACTIONS: &str = "action_generation";
pub const NODE_SHOTS: &str = "shot_generation";
pub const NODE_IMAGES: &str = "image_generation";
pub const NODE_EDITING: &str = "image_editing";
pub const NODE_MATERIALS: &str = "material_generation";
pub const NODE_TIMELINE: &str = "timeline_alignment";
pub const NODE_VIDEO: &str = "video_editing";

/// Run-input key of the story proposal document.
pub const INPUT_PROPOSAL: &str = "proposal";
/// Run-input key of the style document.
pub const INPUT_STYLE: &str = "style";

fn node(id: &str, kind: NodeKind, deps: &[&str], bindings: &[(&str, InputBinding)]) -> TaskNode {
    TaskNode {
        id: id.to_string(),
        kind,
        depends_on: deps.iter().map(|s| s.to_string()).collect(),
        input_bindings: bindings.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

fn llm(template: &str) -> NodeKind {
    NodeKind::Llm {
        template_id: template.to_string(),
    }
}

fn utility(id: &str) -> NodeKind {
    NodeKind::Utility {
        utility_id: id.to_string(),
    }
}

/// The built-in production workflow: title, character design, action and
/// shot generation, image generation and editing, material generation,
/// timeline alignment and video editing. Character design precedes action
/// generation so the main characters are fixed before the plot is divided.
pub fn default_workflow() -> Workflow {
    use InputBinding as B;
    let nodes = vec![
        node(NODE_TITLE, llm("generate_title"), &[], &[("proposal", B::run_input(INPUT_PROPOSAL))]),
        node(
            NODE_CHARACTERS,
            llm("design_characters"),
            &[NODE_TITLE],
            &[("proposal", B::run_input(INPUT_PROPOSAL))],
        ),
        node(
            NODE_ACTIONS,
            llm("plan_actions"),
            &[NODE_CHARACTERS],
            &[
                ("characters", B::upstream(NODE_CHARACTERS, "characters")),
                ("proposal", B::run_input(INPUT_PROPOSAL)),
            ],
        ),
        node(
            NODE_SHOTS,
            llm("generate_shots"),
            &[NODE_ACTIONS],
            &[
                ("actions", B::upstream(NODE_ACTIONS, "actions")),
                ("characters", B::upstream(NODE_CHARACTERS, "characters")),
                ("title", B::upstream(NODE_TITLE, "title")),
            ],
        ),
        node(
            NODE_IMAGES,
            utility("text-to-image"),
            &[NODE_SHOTS],
            &[("script", B::upstream(NODE_SHOTS, "script")), ("style", B::run_input(INPUT_STYLE))],
        ),
        node(
            NODE_EDITING,
            utility("critic"),
            &[NODE_IMAGES],
            &[
                ("image_sets", B::upstream(NODE_IMAGES, "image_sets")),
                ("script", B::upstream(NODE_SHOTS, "script")),
                ("style", B::run_input(INPUT_STYLE)),
            ],
        ),
        node(
            NODE_MATERIALS,
            utility("speech"),
            &[NODE_EDITING],
            &[
                ("image_sets", B::upstream(NODE_EDITING, "image_sets")),
                ("script", B::upstream(NODE_SHOTS, "script")),
            ],
        ),
        node(
            NODE_TIMELINE,
            NodeKind::Assembly,
            &[NODE_MATERIALS],
            &[
                ("materials", B::upstream(NODE_MATERIALS, "materials")),
                ("script", B::upstream(NODE_SHOTS, "script")),
            ],
        ),
        node(
            NODE_VIDEO,
            NodeKind::Assembly,
            &[NODE_TIMELINE],
            &[("timeline", B::upstream(NODE_TIMELINE, "timeline"))],
        ),
    ];
    Workflow {
        id: "story-production".into(),
        version: 1,
        nodes,
        rationale: "initial plan".into(),
        status: WorkflowStatus::Draft,
    }
}
