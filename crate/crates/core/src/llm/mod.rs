//! Chat backends behind one trait, selected by name at runtime.
//!
//! Built-in backends: `http` (any chat-completion endpoint through a provider
//! adapter), `mock` (rule-based, stage-aware, no network) and `replay`
//! (answers from a recorded transcript). [`RecordingBackend`] wraps any of
//! them to write a transcript.

mod http;
mod mock;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Stage;

pub use http::{
    AdapterRegistry, GeminiAdapter, GenericAdapter, HttpBackend, HttpSettings, OpenAiAdapter,
    ProviderAdapter, ProviderReply, RetryPolicy,
};
pub use mock::{content_words, Fault, GoldSentenceScorer, MockBackend, OverlapScorer, ScoringRule};
pub use transcript::{
    read_transcript, request_key, DigestInputs, RecordingBackend, ReplayBackend, TranscriptEntry,
};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown backend {0:?}; registered: {1}")]
    UnknownBackend(String, String),
    #[error("unknown provider adapter {0:?}")]
    UnknownAdapter(String),
    #[error("unknown mock scorer {0:?}")]
    UnknownScorer(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transcript {path}: {reason}")]
    Transcript { path: PathBuf, reason: String },
}

/// Sampling and safety settings for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub safety_filters_disabled: bool,
    pub model_id: String,
}

impl GenerationConfig {
    /// Defaults: temperature 0.0 for the structured stages, 0.1 for answer generation.
    pub fn for_stage(stage: Stage, model_id: impl Into<String>) -> Self {
        let (temperature, max_output_tokens) = match stage {
            Stage::Interpret => (0.0, 256),
            Stage::Evidence => (0.0, 2048),
            Stage::Generate => (0.1, 512),
            Stage::Align => (0.0, 1024),
        };
        Self {
            temperature,
            max_output_tokens,
            safety_filters_disabled: true,
            model_id: model_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Stage that issued the request. Not part of the transcript key.
    pub stage: Stage,
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub config: GenerationConfig,
}

impl ChatRequest {
    pub fn single(stage: Stage, system: impl Into<String>, user: impl Into<String>, config: GenerationConfig) -> Self {
        Self { stage, system: system.into(), messages: vec![ChatMessage::user(user)], config }
    }

    /// Messages must be non-empty and alternate user/assistant starting with user.
    pub fn is_valid(&self) -> bool {
        !self.messages.is_empty()
            && self.messages.iter().enumerate().all(|(i, m)| {
                m.role == if i % 2 == 0 { Role::User } else { Role::Assistant }
            })
    }

    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ChatOutcome {
    Text(String),
    Blocked(String),
    TransportError(String),
}

impl ChatOutcome {
    /// Wraps model text, mapping an empty payload to a transport error.
    pub fn text(s: impl Into<String>) -> Self {
        let s = s.into();
        if s.trim().is_empty() {
            ChatOutcome::TransportError("empty response text".into())
        } else {
            ChatOutcome::Text(s)
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ChatOutcome::Text(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for ChatOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChatOutcome::Text(t) => write!(f, "text ({} chars)", t.len()),
            ChatOutcome::Blocked(r) => write!(f, "blocked: {r}"),
            ChatOutcome::TransportError(d) => write!(f, "transport error: {d}"),
        }
    }
}

/// A language-model endpoint. Failures are reported in the outcome, never raised.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> ChatOutcome;

    /// Transcript keys a replaying backend could not answer.
    fn missing_transcript_keys(&self) -> Vec<String> {
        Vec::new()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> ChatOutcome {
        (**self).complete(request)
    }

    fn missing_transcript_keys(&self) -> Vec<String> {
        (**self).missing_transcript_keys()
    }
}

/// Everything a backend factory may need. Each backend reads only its own fields.
#[derive(Debug, Clone)]
pub struct BackendSettings {
    pub model_id: String,
    pub http: HttpSettings,
    pub transcript: Option<PathBuf>,
    pub strict_replay: bool,
    pub mock_scorer: String,
    /// Note sentences the `gold` mock scorer rates 5.
    pub gold_sentences: Vec<String>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            http: HttpSettings::default(),
            transcript: None,
            strict_replay: true,
            mock_scorer: "overlap".into(),
            gold_sentences: Vec::new(),
        }
    }
}

pub type BackendFactory =
    Box<dyn Fn(&BackendSettings) -> Result<Arc<dyn ChatBackend>, BackendError> + Send + Sync>;

pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// Registry holding `http`, `mock` and `replay`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("mock", |s| Ok(Arc::new(MockBackend::from_settings(s)?)));
        reg.register("http", |s| Ok(Arc::new(HttpBackend::from_settings(&s.http)?)));
        reg.register("replay", |s| {
            let path = s
                .transcript
                .clone()
                .ok_or_else(|| BackendError::Config("replay backend needs a transcript path".into()))?;
            let fallthrough: Option<Arc<dyn ChatBackend>> = if s.strict_replay {
                None
            } else {
                Some(Arc::new(MockBackend::from_settings(s)?))
            };
            Ok(Arc::new(ReplayBackend::open(&path, fallthrough)?))
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&BackendSettings) -> Result<Arc<dyn ChatBackend>, BackendError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, settings: &BackendSettings) -> Result<Arc<dyn ChatBackend>, BackendError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| BackendError::UnknownBackend(name.to_string(), self.names().join(", ")))?;
        factory(settings)
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

pub(crate) fn backoff_delay(policy: &RetryPolicy, attempt: u32) -> Duration {
    policy.base_delay.mul_f64(policy.factor.powi(attempt as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_temperatures() {
        assert_eq!(GenerationConfig::for_stage(Stage::Interpret, "m").temperature, 0.0);
        assert_eq!(GenerationConfig::for_stage(Stage::Evidence, "m").temperature, 0.0);
        assert_eq!(GenerationConfig::for_stage(Stage::Generate, "m").temperature, 0.1);
        assert_eq!(GenerationConfig::for_stage(Stage::Align, "m").temperature, 0.0);
    }

    #[test]
    fn request_roles_must_alternate() {
        let cfg = GenerationConfig::for_stage(Stage::Align, "m");
        let mut req = ChatRequest::single(Stage::Align, "s", "u", cfg);
        assert!(req.is_valid());
        req.messages.push(ChatMessage::user("again"));
        assert!(!req.is_valid());
        req.messages = vec![ChatMessage::assistant("a")];
        assert!(!req.is_valid());
    }

    #[test]
    fn registry_rejects_unknown_names() {
        let reg = BackendRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["http", "mock", "replay"]);
        assert!(matches!(
            reg.build("gemini-live", &BackendSettings::default()),
            Err(BackendError::UnknownBackend(..))
        ));
    }

    #[test]
    fn empty_text_is_not_a_text_outcome() {
        assert!(matches!(ChatOutcome::text("  "), ChatOutcome::TransportError(_)));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { attempts: 3, base_delay: Duration::from_millis(500), factor: 2.0 };
        assert_eq!(backoff_delay(&p, 0), Duration::from_millis(500));
        assert_eq!(backoff_delay(&p, 1), Duration::from_millis(1000));
        assert_eq!(backoff_delay(&p, 2), Duration::from_millis(2000));
    }
}
