//! Synthesis of annotated task-oriented dialogue corpora from an abstract
//! dialogue model, a template grammar and a domain ontology.
//!
//! The pipeline is: load a [`model::DialogueModel`], parse templates into a
//! [`grammar::Grammar`], bind it to one domain of an [`ontology::Ontology`],
//! then run the [`synthesizer`]. The [`dataset`] module writes the result.

pub mod adapt;
pub mod builtin;
pub mod dataset;
pub mod expander;
pub mod grammar;
pub mod model;
pub mod ontology;
mod rng;
pub mod synthesizer;

pub use grammar::{SemValue, SlotMap};
pub use model::{ConcreteState, Dialogue, DialogueModel, Provenance, SlotValue, Turn};

/// Reserved token separating the agent and user halves of a turn template.
pub const SEP: &str = "<sep>";

/// Lowercase hex SHA-256 of `bytes`.
pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
