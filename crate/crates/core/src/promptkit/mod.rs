//! Prompt conversations for the flaky / non-flaky question (RQ3), its
//! code-context variant (RQ4) and the root-cause follow-up (RQ5).

mod condition;
mod conversation;
mod enrich;
mod template;

pub use condition::{all_conditions, enumerate_conditions, CodeLevel, Enrichment, ExperimentCondition, ReportLevel};
pub use conversation::{
    build_conversation, build_report_text, class_list, needed_context, render_code, rq5_followup, Conversation, Role,
    Stage, Turn, TurnKind, COMMENTS_HEADER,
};
pub use enrich::{select_enrichment, EnrichmentCandidate, EnrichmentExample};
pub use template::{render, TemplateSet, DEFAULT_TEMPLATE_ID};

use crate::codectx::ContextLevel;
use crate::corpus::CaseId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("{0} has an empty description")]
    EmptyDescription(CaseId),
    #[error("{case} has no {level} code context")]
    MissingCodeContext { case: CaseId, level: ContextLevel },
    #[error("no enrichment example available for {0}")]
    NoEligibleExample(CaseId),
    #[error("unknown template set `{0}`")]
    UnknownTemplate(String),
    #[error("template: {0}")]
    Template(String),
}
