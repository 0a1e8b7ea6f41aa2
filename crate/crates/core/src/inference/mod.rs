//! Running conversations against chat-completion providers and turning
//! replies into verdicts.

mod provider;
mod runner;
mod store;
mod verdict;

pub use provider::{
    build_provider, hinted_class, AnthropicProvider, ChatProvider, Decoding, MarkerMockProvider, OpenAiProvider,
    ProviderConfig, ProviderError, ProviderKind, ScriptedProvider, ANTHROPIC_VERSION, CORRUPT_MARKER, FLAKY_MARKER,
    ROOT_CAUSE_HINT,
};
pub use runner::{ProviderRunner, RetryPolicy, TokenBucket};
pub use store::{check_budget, is_consistent_outcome, VerdictKey, VerdictRecord, VerdictStore};
pub use verdict::{parse_verdict, Outcome, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InferenceError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider request timed out")]
    Timeout,
    #[error("a completion for {0} is already stored")]
    DuplicateCompletion(String),
    #[error("plan needs {planned} requests, over the cap of {cap}")]
    BudgetExceeded { planned: usize, cap: usize },
    #[error("verdict store: {0}")]
    Store(String),
}
