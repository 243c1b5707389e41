//! Iterative reflection optimization for eliciting human-like traits from
//! chat-completion language models.
//!
//! A *reflection* is a short first-person text made of lines of the form
//! `<statement>, e.g.: <behavior>`. The optimizer alternates two passes:
//!
//! * **compactness** ([`compactness`]): paraphrase the working candidates,
//!   sample summaries, and keep the summary that best reconstructs the
//!   candidates while contrasting against alternative summaries;
//! * **evocativeness** ([`evocativeness`]): sample task responses under the
//!   compacted reflection, weight their trait scores by how likely each
//!   candidate makes them, refine, and keep the top candidates.
//!
//! The crate is `no_std` (with `alloc`). Everything that talks to a model goes
//! through [`backend::ChatBackend`]; IO, HTTP, caching on disk and the CLI live
//! in the companion `irote` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backend;
pub mod compactness;
pub mod cond_prob;
pub mod config;
pub mod context;
pub mod error;
pub mod evocativeness;
pub mod mock;
pub mod orchestrator;
pub mod reflection;
pub mod seed;
pub mod templates;
pub mod text;
pub mod trait_eval;
pub mod trait_model;

pub use backend::{BackendError, ChatBackend, ChatRequest, GenerationParams, Message, Role};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use reflection::{CandidateSet, Reflection, ReflectionLine};

/// Floor applied to every probability before a logarithm is taken.
pub const DEFAULT_EPSILON: f64 = 0.01;
