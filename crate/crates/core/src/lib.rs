//! Zero-shot, ontology-guided fine-grained entity typing.
//!
//! For each pre-identified mention the pipeline:
//!
//! 1. prompts a masked language model with several Hearst patterns and keeps
//!    the labels most patterns agree on, plus the mention's head word
//!    ([`candidates`]);
//! 2. aligns those labels onto first-level ontology types by embedding
//!    similarity and picks the high-level type with an entailment model
//!    ([`alignment`], [`resolution`]);
//! 3. walks down the ontology while the best child outranks its parent by at
//!    least `theta` ([`resolution`]).
//!
//! Model calls go through [`backend`], which can replay recorded fixtures,
//! talk to a remote sidecar, or record one into the other.

pub mod alignment;
pub mod backend;
pub mod candidates;
pub mod evaluation;
pub mod ontology;
pub mod resolution;
pub mod text;

use thiserror::Error;

pub use backend::{Backend, BackendError};
pub use ontology::{OntologyError, TypeOntology, TypePath};
pub use resolution::{Engine, EngineSettings, TypingDecision};
pub use text::CharSpan;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Span(#[from] text::SpanError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
