//! Single-node service for the storyreel engine: file-backed project store,
//! HTTP API for the CLI and review console, and the local CLI.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod project;
pub mod service;

pub use config::ServiceConfig;
pub use error::{ErrorKind, ServiceError};
pub use project::{Project, ProjectStatus};
pub use service::Service;
