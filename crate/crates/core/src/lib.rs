//! Story-to-video production engine.
//!
//! A story proposal flows through a workflow DAG: the script chain produces
//! title, characters, actions and shots; the image pipeline renders each shot
//! in three stages (composition, character consistency, style); the video
//! assembler plans materials and aligns everything on an integer-millisecond
//! timeline emitted as a bit-stable render manifest. Reviewer and critic
//! feedback flows into a versioned experience store that is injected back
//! into later prompts, plans and image descriptions.

pub mod artifact;
pub mod canonical;
pub mod clock;
pub mod domain;
pub mod evaluation;
pub mod rag;
pub mod config;
pub mod image;
pub mod production;
pub mod prompt;
pub mod utility;
pub mod video;
pub mod workflow;
