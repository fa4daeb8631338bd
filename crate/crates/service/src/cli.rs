//! Command-line client. Commands run against an embedded engine over the
//! data directory; `serve` hosts the HTTP API over the same directory.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use storyreel_core::domain::{ContentHash, MediaType};
use storyreel_core::evaluation::{DimensionScores, ImageScores, ReviewTarget, ScriptScores};
use storyreel_core::rag::ExperienceCategory;

use crate::config::ServiceConfig;
use crate::error::{ErrorKind, ServiceError};
use crate::project::ProjectStatus;
use crate::service::{AddKnowledge, CreateProject, Decision, FeedbackRequest, NewProposal, Service};

#[derive(Debug, Parser)]
#[command(name = "storyreel", version, about = "Story-to-video production engine")]
pub struct Cli {
    /// Config file (TOML); `STORYREEL_*` environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory; overrides `service.data_dir`.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project from a story and print its id.
    Init(InitArgs),
    /// Propose a workflow for a draft project.
    Plan { project: String },
    /// Approve the proposed workflow (or accept a run that needs review).
    Approve {
        project: String,
        /// Reject instead, with this comment as workflow feedback.
        #[arg(long)]
        reject: Option<String>,
    },
    /// Run the approved workflow to completion.
    Run { project: String },
    /// Print the project with its node states.
    Status { project: String },
    /// Print the storyboard, or write its images and script to a directory.
    Storyboard {
        project: String,
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Review a target; free text becomes experience.
    Feedback(FeedbackArgs),
    /// Manage the knowledge store.
    Knowledge {
        #[command(subcommand)]
        command: KnowledgeCommand,
    },
    /// Write the render manifest of the latest run.
    ExportManifest {
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// File holding the story text; `-` reads standard input.
    #[arg(long, conflicts_with = "text")]
    pub story: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub budget: Option<u32>,
    #[arg(long, default_value = "default")]
    pub style: String,
    /// Style edit intensity in [0, 1]; defaults to the configured value.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeedbackArgs {
    #[arg(long)]
    pub category: ExperienceCategory,
    /// `node:<id>`, `artifact:<hash>` or `utility:<id>`.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value = "")]
    pub text: String,
    /// Three comma-separated dimension scores in [0, 100].
    #[arg(long, value_delimiter = ',')]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum KnowledgeCommand {
    Add {
        #[arg(long)]
        doc_id: String,
        #[arg(long)]
        file: PathBuf,
        #[arg(long = "tag")]
        tags: Vec<String>,
    },
}

/// Process exit code for an error kind.
pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Internal => 1,
        ErrorKind::Invalid => 2,
        ErrorKind::Conflict => 3,
        ErrorKind::NotFound => 4,
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("payloads serialize"));
}

fn io_error(context: &str, e: std::io::Error) -> ServiceError {
    ServiceError::internal("io_error", format!("{context}: {e}"))
}

pub fn load_config(cli: &Cli) -> Result<ServiceConfig, ServiceError> {
    let mut config = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(d) = &cli.data_dir {
        config.service.data_dir = d.clone();
    }
    Ok(config)
}

pub fn execute(cli: Cli) -> Result<(), ServiceError> {
    let config = load_config(&cli)?;
    if let Command::Serve { bind } = &cli.command {
        let bind = bind.clone().unwrap_or_else(|| config.service.bind.clone());
        let service = Arc::new(Service::open(config)?);
        let rt = tokio::runtime::Runtime::new()?;
        return rt
            .block_on(crate::api::serve(service, &bind))
            .map_err(|e| ServiceError::internal("serve_failed", e.to_string()));
    }
    let service = Service::open(config)?;
    match cli.command {
        Command::Init(args) => {
            let text = match (&args.story, args.text) {
                (Some(p), _) if p.as_os_str() == "-" => std::io::read_to_string(std::io::stdin()).map_err(|e| io_error("stdin", e))?,
                (Some(p), _) => std::fs::read_to_string(p).map_err(|e| io_error(&p.display().to_string(), e))?,
                (None, Some(t)) => t,
                (None, None) => return Err(ServiceError::invalid("schema_violation", "give --story or --text")),
            };
            let style = match args.lambda {
                Some(l) => Some(storyreel_core::domain::StyleSpec::new(&args.style, &args.style, l)?),
                None => None,
            };
            let project = service.create_project(CreateProject {
                proposal: NewProposal {
                    id: None,
                    text,
                    style_id: args.style,
                    target_shot_budget: args.budget,
                },
                style,
            })?;
            println!("{}", project.id);
        }
        Command::Plan { project } => {
            let p = service.plan(&project)?;
            let w = p.workflow_versions.latest().expect("planned");
            println!("{} planned workflow v{} with {} nodes", p.id, w.version, w.nodes.len());
        }
        Command::Approve { project, reject } => {
            let decision = match reject {
                Some(comment) => Decision::Reject { comment },
                None => Decision::Approve,
            };
            let out = service.decide(&project, decision)?;
            match out.update {
                Some(u) => println!("{} is {}; feedback {:?} {} v{}", out.project.id, out.project.status, u.outcome, u.entry_id, u.version),
                None => println!("{} is {}", out.project.id, out.project.status),
            }
        }
        Command::Run { project } => {
            let current = service.get_project(&project)?.project.status;
            let ticket = if current == ProjectStatus::Running {
                service.resume_ticket(&project)?
            } else {
                service.start_run(&project)?
            };
            let run_id = ticket.run_id.clone();
            let p = service.execute(ticket)?;
            match &p.last_error {
                Some(e) => {
                    return Err(ServiceError::internal("run_failed", format!("run {run_id} failed: {e}")));
                }
                None => println!("{} run {} finished: {}", p.id, run_id, p.status),
            }
        }
        Command::Status { project } => print_json(&service.get_project(&project)?),
        Command::Storyboard { project, export } => {
            let sb = service.storyboard(&project)?;
            let Some(dir) = export else {
                print_json(&sb);
                return Ok(());
            };
            std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir.display().to_string(), e))?;
            let store = &service.studio().store;
            let mut written = 0;
            for shot in &sb.shots {
                let Some(set) = &shot.images else { continue };
                for (stage, r) in [("composed", &set.composed), ("consistent", &set.character_consistent), ("styled", &set.styled)] {
                    if let Some(r) = r {
                        let path = dir.join(format!("shot_{}_{stage}.ppm", shot.index));
                        std::fs::write(&path, store.get(r)?).map_err(|e| io_error(&path.display().to_string(), e))?;
                        written += 1;
                    }
                }
            }
            let path = dir.join("script.json");
            std::fs::write(&path, store.get(&sb.script_ref)?).map_err(|e| io_error(&path.display().to_string(), e))?;
            println!("wrote {written} images and script.json to {}", dir.display());
        }
        Command::Feedback(args) => {
            let target = parse_target(&service, &args.target, args.category)?;
            let scores = match args.scores.as_deref() {
                None => None,
                Some(&[a, b, c]) => Some(match args.category {
                    ExperienceCategory::Image => DimensionScores::Image(ImageScores::new(a, b, c)),
                    _ => DimensionScores::Script(ScriptScores::new(a, b, c)),
                }),
                Some(other) => {
                    return Err(ServiceError::invalid(
                        "schema_violation",
                        format!("--scores needs 3 values, got {}", other.len()),
                    ))
                }
            };
            print_json(&service.feedback(FeedbackRequest {
                category: args.category,
                target,
                text: args.text,
                scores,
                author: None,
            })?);
        }
        Command::Knowledge {
            command: KnowledgeCommand::Add { doc_id, file, tags },
        } => {
            let text = std::fs::read_to_string(&file).map_err(|e| io_error(&file.display().to_string(), e))?;
            let entries = service.add_knowledge(AddKnowledge { doc_id, text, tags })?;
            println!("indexed {} chunk(s)", entries.len());
        }
        Command::ExportManifest { project, out } => {
            let (r, bytes) = service.manifest(&project)?;
            std::fs::write(&out, bytes).map_err(|e| io_error(&out.display().to_string(), e))?;
            println!("{} -> {}", r.content_hash, out.display());
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn parse_target(service: &Service, spec: &str, category: ExperienceCategory) -> Result<ReviewTarget, ServiceError> {
    let bad = || ServiceError::invalid("bad_target", format!("target {spec:?} is not node:<id>, artifact:<hash> or utility:<id>"));
    let (kind, value) = spec.split_once(':').ok_or_else(bad)?;
    Ok(match kind {
        "node" => ReviewTarget::WorkflowNode { node_id: value.into() },
        "utility" => ReviewTarget::UtilityReport { report_id: value.into() },
        "artifact" => {
            let hash = ContentHash::parse(value).map_err(|e| ServiceError::invalid("bad_hash", e.to_string()))?;
            let media_type = service.studio().store.meta(&hash).map_or(MediaType::Json, |m| m.media_type);
            let artifact = storyreel_core::domain::ArtifactRef {
                content_hash: hash,
                media_type,
            };
            match category {
                ExperienceCategory::Image => ReviewTarget::ImageArtifact { artifact },
                _ => ReviewTarget::PromptArtifact { artifact },
            }
        }
        _ => return Err(bad()),
    })
}
