//! Provider-agnostic chat completion with retry, a bound on in-flight
//! requests, and record/replay cassettes.
//!
//! Every module that talks to a model goes through [`Gateway::complete`].
//! Under a replay cassette the whole pipeline becomes a pure function of
//! its inputs.

mod cassette;
mod mock;
mod openai;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteBackend, CassetteEntry, CassetteMode};
pub use mock::{CountingProbe, ScriptedBackend, SequenceBackend};
pub use openai::OpenAiBackend;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("provider error{}: {message}", if *.transient { " (transient)" } else { "" })]
    Provider { message: String, transient: bool },
    #[error("no cassette entry for request {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("request timed out")]
    Timeout,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette i/o: {0}")]
    Cassette(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            GatewayError::Provider {
                transient: true,
                ..
            } | GatewayError::Timeout
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub max_tokens: u32,
    pub model_tag: String,
}

pub const DEFAULT_MAX_TOKENS: u32 = 512;

impl CompletionRequest {
    pub fn new(model_tag: impl Into<String>, messages: Vec<Message>) -> Self {
        CompletionRequest {
            messages,
            temperature: 0.0,
            seed: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_tag: model_tag.into(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form. Temperature and seed are part
    /// of the digest so repeated runs record distinct entries.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        fingerprint_value(&value)
    }

    /// Last user message, handy for matchers and logs.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Fingerprint of any JSON document describing a request, independent of
/// key order and formatting whitespace.
pub fn fingerprint_json(text: &str) -> Result<String, GatewayError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    Ok(fingerprint_value(&value))
}

fn fingerprint_value(value: &Value) -> String {
    let mut canonical = String::new();
    write_canonical(value, &mut canonical);
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Anything that turns a request into text.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    /// 3 attempts, waiting 1s then 2s (then 4s if attempts are raised).
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable across threads; clone is cheap.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Arc<Limiter>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("retry", &self.retry)
            .field("max_in_flight", &self.limiter.max)
            .finish()
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway {
            backend: Arc::new(backend),
            retry: RetryPolicy::default(),
            limiter: Arc::new(Limiter::new(DEFAULT_MAX_IN_FLIGHT)),
        }
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            retry: RetryPolicy::default(),
            limiter: Arc::new(Limiter::new(DEFAULT_MAX_IN_FLIGHT)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter = Arc::new(Limiter::new(max));
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.limiter.max
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.complete(request)
            };
            match result {
                Err(e) if e.is_transient() && attempt + 1 < self.retry.max_attempts => {
                    tracing::warn!(attempt, error = %e, "retrying completion");
                    std::thread::sleep(self.retry.delay_after(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Completes all requests concurrently (bounded by the limiter) and
    /// returns results in input order.
    pub fn complete_all(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<String, GatewayError>> {
        crate::parallel::map(requests, self.limiter.max, |r| self.complete(r))
    }

    /// One pass over `requests` per schedule entry. Run `i` uses the
    /// scheduled temperature and seed `base_seed + i`, so every run is
    /// individually replayable.
    pub fn run_suite(
        &self,
        requests: &[CompletionRequest],
        temperature_schedule: &[f64],
    ) -> Result<Vec<SuiteResponse>, GatewayError> {
        if temperature_schedule.is_empty() {
            return Err(GatewayError::Precondition(
                "temperature schedule must have at least one run".into(),
            ));
        }
        let jobs: Vec<(usize, usize, CompletionRequest)> = temperature_schedule
            .iter()
            .enumerate()
            .flat_map(|(run, &temp)| {
                requests.iter().enumerate().map(move |(idx, req)| {
                    let seed = req.seed.unwrap_or(0) + run as u64;
                    (
                        run,
                        idx,
                        req.clone().with_temperature(temp).with_seed(Some(seed)),
                    )
                })
            })
            .collect();
        Ok(crate::parallel::map(&jobs, self.limiter.max, |(run, idx, req)| {
            SuiteResponse {
                run_index: *run,
                request_index: *idx,
                temperature: req.temperature,
                outcome: self.complete(req).into(),
            }
        }))
    }
}

/// The 5-run protocol: one deterministic pass then four at 0.5.
pub const FIVE_RUN_SCHEDULE: [f64; 5] = [0.0, 0.5, 0.5, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteOutcome {
    Ok(String),
    Error(String),
}

impl From<Result<String, GatewayError>> for SuiteOutcome {
    fn from(r: Result<String, GatewayError>) -> Self {
        match r {
            Ok(t) => SuiteOutcome::Ok(t),
            Err(e) => SuiteOutcome::Error(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResponse {
    pub run_index: usize,
    pub request_index: usize,
    pub temperature: f64,
    pub outcome: SuiteOutcome,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new("test-model", vec![Message::user(text)])
    }

    #[test]
    fn validation() {
        assert!(req("x").validate().is_ok());
        let empty = CompletionRequest::new("m", vec![]);
        assert!(matches!(empty.validate(), Err(GatewayError::InvalidRequest(_))));
        assert!(req("x").with_temperature(2.5).validate().is_err());
        assert!(req("x").with_temperature(-0.1).validate().is_err());
        assert!(req("x").with_temperature(2.0).validate().is_ok());
    }

    #[test]
    fn fingerprint_ignores_key_order_and_formatting() {
        let r = req("hello").with_seed(Some(3));
        let a = r#"{"messages":[{"role":"user","content":"hello"}],"temperature":0.0,"seed":3,"max_tokens":512,"model_tag":"test-model"}"#;
        let b = r#"{ "model_tag" : "test-model", "max_tokens": 512,
                     "seed": 3, "temperature": 0.0,
                     "messages": [ { "content": "hello", "role": "user" } ] }"#;
        assert_eq!(fingerprint_json(a).unwrap(), fingerprint_json(b).unwrap());
        assert_eq!(fingerprint_json(a).unwrap(), r.fingerprint());
    }

    #[test]
    fn fingerprint_covers_temperature_and_seed() {
        let base = req("hello");
        let fps = [
            base.fingerprint(),
            base.clone().with_temperature(0.5).fingerprint(),
            base.clone().with_seed(Some(1)).fingerprint(),
            base.clone().with_seed(Some(2)).fingerprint(),
        ];
        for i in 0..fps.len() {
            for j in i + 1..fps.len() {
                assert_ne!(fps[i], fps[j]);
            }
        }
    }

    struct Flaky {
        failures_left: AtomicUsize,
        calls: AtomicUsize,
        transient: bool,
    }

    impl Backend for Flaky {
        fn complete(&self, _: &CompletionRequest) -> Result<String, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(GatewayError::Provider {
                    message: "boom".into(),
                    transient: self.transient,
                });
            }
            Ok("ok".into())
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[test]
    fn retries_transient_errors_up_to_limit() {
        let backend = Arc::new(Flaky {
            failures_left: AtomicUsize::new(2),
            calls: AtomicUsize::new(0),
            transient: true,
        });
        let gw = Gateway::from_arc(backend.clone()).with_retry(fast_retry());
        assert_eq!(gw.complete(&req("x")).unwrap(), "ok");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);

        let backend = Arc::new(Flaky {
            failures_left: AtomicUsize::new(5),
            calls: AtomicUsize::new(0),
            transient: true,
        });
        let gw = Gateway::from_arc(backend.clone()).with_retry(fast_retry());
        assert!(matches!(
            gw.complete(&req("x")),
            Err(GatewayError::Provider { transient: true, .. })
        ));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let backend = Arc::new(Flaky {
            failures_left: AtomicUsize::new(1),
            calls: AtomicUsize::new(0),
            transient: false,
        });
        let gw = Gateway::from_arc(backend.clone()).with_retry(fast_retry());
        assert!(gw.complete(&req("x")).is_err());
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn default_backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_attempts, 3);
        assert_eq!(p.delay_after(0), Duration::from_secs(1));
        assert_eq!(p.delay_after(1), Duration::from_secs(2));
        assert_eq!(p.delay_after(2), Duration::from_secs(4));
    }

    #[test]
    fn in_flight_requests_are_bounded() {
        let probe = Arc::new(CountingProbe::new(Duration::from_millis(15)));
        let gw = Gateway::from_arc(probe.clone()).with_max_in_flight(3);
        let requests: Vec<_> = (0..24).map(|i| req(&format!("r{i}"))).collect();
        // more callers than permits
        let results = crate::parallel::map(&requests, 8, |r| gw.complete(r));
        assert!(results.iter().all(Result::is_ok));
        assert_eq!(probe.calls(), 24);
        assert!(probe.max_observed() <= 3, "observed {}", probe.max_observed());
        assert!(probe.max_observed() >= 2, "no concurrency observed");
    }

    #[test]
    fn suite_tags_runs() {
        let gw = Gateway::new(ScriptedBackend::echo());
        let reqs = vec![req("a"), req("b")];
        let single = gw.run_suite(&reqs, &[0.0]).unwrap();
        assert_eq!(single.len(), 2);
        assert!(single.iter().all(|r| r.run_index == 0));

        let five = gw.run_suite(&reqs, &FIVE_RUN_SCHEDULE).unwrap();
        assert_eq!(five.len(), 10);
        for (i, r) in five.iter().enumerate() {
            assert_eq!(r.run_index, i / 2);
            assert_eq!(r.request_index, i % 2);
            assert_eq!(r.temperature, FIVE_RUN_SCHEDULE[i / 2]);
        }

        assert!(matches!(
            gw.run_suite(&reqs, &[]),
            Err(GatewayError::Precondition(_))
        ));
    }

    #[test]
    fn suite_keeps_partial_results() {
        let backend = ScriptedBackend::new()
            .on_contains("bad", |_| {
                Err(GatewayError::Provider {
                    message: "nope".into(),
                    transient: false,
                })
            })
            .fallback(|_| Ok("fine".into()));
        let gw = Gateway::new(backend);
        let out = gw.run_suite(&[req("good"), req("bad")], &[0.0, 0.5]).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].outcome, SuiteOutcome::Ok("fine".into()));
        assert!(matches!(out[1].outcome, SuiteOutcome::Error(_)));
    }
}
