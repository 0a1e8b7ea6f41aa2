use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{Mutex, Semaphore};
use tokio::time::Instant;

use crate::promptkit::Conversation;

use super::{parse_verdict, ChatProvider, InferenceError, ProviderConfig, ProviderError, Verdict};

/// Classic token bucket: `capacity` burst, refilled continuously at
/// `per_minute / 60` tokens per second.
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(per_minute: u32) -> Self {
        let capacity = f64::from(per_minute.max(1));
        Self {
            capacity,
            per_second: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().await;
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.per_second).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.per_second)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub timeout: Duration,
}

impl RetryPolicy {
    pub fn from_config(config: &ProviderConfig) -> Self {
        Self {
            max_retries: config.max_retries,
            base: Duration::from_millis(config.backoff_base_ms),
            timeout: Duration::from_secs(config.timeout_secs),
        }
    }

    /// Exponential backoff before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base.saturating_mul(1u32 << attempt.min(16))
    }
}

/// A provider with its rate limit, concurrency cap and retry policy.
#[derive(Clone)]
pub struct ProviderRunner {
    pub provider: Arc<dyn ChatProvider>,
    bucket: Arc<TokenBucket>,
    permits: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl ProviderRunner {
    pub fn new(provider: Arc<dyn ChatProvider>, config: &ProviderConfig) -> Self {
        Self {
            provider,
            bucket: Arc::new(TokenBucket::per_minute(config.rate_limit_per_minute)),
            permits: Arc::new(Semaphore::new(config.max_concurrent.max(1))),
            retry: RetryPolicy::from_config(config),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    /// One completion for `conversation`, parsed. Transport failures are
    /// retried with backoff; whatever text comes back is never re-sampled.
    pub async fn run_conversation(&self, conversation: &Conversation) -> Result<Verdict, InferenceError> {
        let _permit = self.permits.acquire().await.expect("semaphore closed");
        let mut attempt = 0;
        loop {
            self.bucket.acquire().await;
            let started = Instant::now();
            let result = match tokio::time::timeout(self.retry.timeout, self.provider.complete(conversation)).await {
                Ok(r) => r,
                Err(_) => Err(ProviderError::Timeout),
            };
            match result {
                Ok(raw) => {
                    return Ok(Verdict {
                        stage: conversation.stage,
                        outcome: parse_verdict(&raw, conversation.stage),
                        raw_response: raw,
                        latency_ms: started.elapsed().as_millis() as u64,
                        provider: self.provider.name().to_string(),
                    });
                }
                Err(e) if e.is_transport() && attempt < self.retry.max_retries => {
                    tracing::warn!(error = %e, attempt, "retrying provider request");
                    tokio::time::sleep(self.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                Err(ProviderError::Timeout) => return Err(InferenceError::Timeout),
                Err(e) => return Err(InferenceError::ProviderUnavailable(e.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ArtifactKind, CaseArtifact, RepositoryRef};
    use crate::inference::{Outcome, ScriptedProvider};
    use crate::promptkit::{build_conversation, CodeLevel, Enrichment, ExperimentCondition, ReportLevel, TemplateSet};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn conv() -> Conversation {
        let case = CaseArtifact::new(&RepositoryRef::new("p", "r"), ArtifactKind::Issue, 1, "t", "d");
        let cond = ExperimentCondition::new(ReportLevel::Partial, CodeLevel::None, Enrichment::None);
        build_conversation(&case, cond, None, None, &TemplateSet::default()).unwrap()
    }

    fn fast(max_retries: u32) -> ProviderConfig {
        ProviderConfig {
            rate_limit_per_minute: 6000,
            max_retries,
            backoff_base_ms: 1,
            ..Default::default()
        }
    }

    #[tokio::test]
    async fn scripted_replies() {
        let cfg = fast(0);
        for (reply, want) in [("FLAKY", Outcome::Flaky), ("", Outcome::Unusable)] {
            let r = ProviderRunner::new(Arc::new(ScriptedProvider::constant(reply)), &cfg);
            let v = r.run_conversation(&conv()).await.unwrap();
            assert_eq!(v.outcome, want);
            assert_eq!(v.raw_response, reply);
        }
    }

    #[tokio::test]
    async fn transport_errors_retry_then_succeed() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let p = ScriptedProvider::new("m", move |_| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(ProviderError::Status {
                    status: 503,
                    body: String::new(),
                })
            } else {
                Ok("NON-FLAKY".into())
            }
        });
        let v = ProviderRunner::new(Arc::new(p), &fast(3))
            .run_conversation(&conv())
            .await
            .unwrap();
        assert_eq!(v.outcome, Outcome::NonFlaky);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn retries_are_bounded_and_auth_is_not_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let p = ScriptedProvider::new("m", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::Transport("reset".into()))
        });
        let err = ProviderRunner::new(Arc::new(p), &fast(2))
            .run_conversation(&conv())
            .await;
        assert!(matches!(err, Err(InferenceError::ProviderUnavailable(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let p = ScriptedProvider::new("m", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::Auth("bad key".into()))
        });
        assert!(ProviderRunner::new(Arc::new(p), &fast(5))
            .run_conversation(&conv())
            .await
            .is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test(start_paused = true)]
    async fn bucket_spaces_requests() {
        let bucket = TokenBucket::per_minute(60);
        let start = Instant::now();
        for _ in 0..62 {
            bucket.acquire().await;
        }
        // 60 burst tokens, then one per second
        let waited = start.elapsed();
        assert!(
            waited >= Duration::from_secs(2) && waited < Duration::from_secs(3),
            "{waited:?}"
        );
    }
}
