//! Mining, similarity-driven expansion and LLM-based classification of
//! flaky-test reports in quantum software repositories.

pub mod codectx;
pub mod corpus;
pub mod evaluator;
pub mod inference;
pub mod promptkit;
pub mod replica;
pub mod simsearch;
pub mod store;
pub mod taxonomy;

pub use taxonomy::{FixPattern, RootCause, RootCauseClass};
