//! Structurization of free-text clinical notes into per-term records.
//!
//! The pipeline runs line-break restoration and chunking ([`preprocess`]),
//! lexicon matching ([`recognition`] over a [`terminology::TermIndex`]),
//! rule-based assertion status ([`assertion`]), attribute extraction through
//! a pluggable backend ([`attributes`]), and integration into JSONL records
//! ([`integrate`]). [`pipeline`] wires the stages together and [`evaluate`]
//! scores predictions against gold annotations.

pub mod assertion;
pub mod attributes;
pub mod error;
pub mod evaluate;
pub mod integrate;
pub mod llm_client;
pub mod pipeline;
pub mod preprocess;
pub mod recognition;
pub mod terminology;

pub use error::{Error, Result};
