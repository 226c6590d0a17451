//! Test backends. Scripted rules are distinct from cassettes: they compute
//! a response from the request instead of looking one up.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{Backend, CompletionRequest, GatewayError};

type Matcher = Box<dyn Fn(&CompletionRequest) -> bool + Send + Sync>;
type Responder = Box<dyn Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync>;

/// First matching rule answers; otherwise the fallback, otherwise an error.
#[derive(Default)]
pub struct ScriptedBackend {
    rules: Vec<(Matcher, Responder)>,
    fallback: Option<Responder>,
    calls: AtomicUsize,
    log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replies with the last user message.
    pub fn echo() -> Self {
        Self::new().fallback(|r| Ok(r.last_user_content().to_string()))
    }

    pub fn on(
        mut self,
        matcher: impl Fn(&CompletionRequest) -> bool + Send + Sync + 'static,
        responder: impl Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        self.rules.push((Box::new(matcher), Box::new(responder)));
        self
    }

    /// Matches when any message contains `needle`.
    pub fn on_contains(
        self,
        needle: impl Into<String>,
        responder: impl Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        let needle = needle.into();
        self.on(
            move |r| r.messages.iter().any(|m| m.content.contains(&needle)),
            responder,
        )
    }

    pub fn fallback(
        mut self,
        responder: impl Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Box::new(responder));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(request.clone());
        for (matcher, responder) in &self.rules {
            if matcher(request) {
                return responder(request);
            }
        }
        match &self.fallback {
            Some(f) => f(request),
            None => Err(GatewayError::Provider {
                message: "no scripted rule matched".into(),
                transient: false,
            }),
        }
    }
}

/// Pops queued responses in call order.
#[derive(Default)]
pub struct SequenceBackend {
    queue: Mutex<VecDeque<Result<String, GatewayError>>>,
}

impl SequenceBackend {
    pub fn new(responses: impl IntoIterator<Item = Result<String, GatewayError>>) -> Self {
        SequenceBackend {
            queue: Mutex::new(responses.into_iter().collect()),
        }
    }

    pub fn texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| Ok(t.into())))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl Backend for SequenceBackend {
    fn complete(&self, _: &CompletionRequest) -> Result<String, GatewayError> {
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| {
                Err(GatewayError::Provider {
                    message: "response queue exhausted".into(),
                    transient: false,
                })
            })
    }
}

/// Sleeps per call and records the peak number of concurrent calls.
pub struct CountingProbe {
    delay: Duration,
    current: Mutex<usize>,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl CountingProbe {
    pub fn new(delay: Duration) -> Self {
        CountingProbe {
            delay,
            current: Mutex::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn max_observed(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for CountingProbe {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        {
            let mut c = self.current.lock().unwrap();
            *c += 1;
            self.peak.fetch_max(*c, Ordering::SeqCst);
        }
        std::thread::sleep(self.delay);
        *self.current.lock().unwrap() -= 1;
        Ok(request.last_user_content().to_string())
    }
}
