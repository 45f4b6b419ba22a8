//! Chat-completion client over HTTP with per-provider request/response adapters.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{backoff_delay, BackendError, ChatBackend, ChatOutcome, ChatRequest, Role};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500), factor: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model_id: String,
    /// Name of the environment variable holding the key; the key itself is never stored.
    pub api_key_env: Option<String>,
    pub adapter: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    /// Extra provider safety settings sent when filters are disabled.
    pub safety_overrides: BTreeMap<String, String>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_id: String::new(),
            api_key_env: None,
            adapter: "generic".into(),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            safety_overrides: BTreeMap::new(),
        }
    }
}

/// What a provider's response body means.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderReply {
    Text(String),
    Blocked(String),
    Invalid(String),
}

/// Maps the neutral request onto one provider's wire format and back.
pub trait ProviderAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Extra headers, usually authentication.
    fn headers(&self, api_key: Option<&str>) -> Vec<(String, String)>;

    fn encode(&self, request: &ChatRequest, safety: &BTreeMap<String, String>) -> Value;

    fn decode(&self, body: &Value) -> ProviderReply;
}

fn bearer(api_key: Option<&str>) -> Vec<(String, String)> {
    api_key
        .map(|k| vec![("authorization".to_string(), format!("Bearer {k}"))])
        .unwrap_or_default()
}

fn role_name(role: Role, assistant: &str) -> String {
    match role {
        Role::User => "user".into(),
        Role::Assistant => assistant.into(),
    }
}

/// Minimal neutral shape: `{model, system, messages, temperature, max_output_tokens}`
/// in, `{"text": ...}` or `{"blocked": reason}` out.
pub struct GenericAdapter;

impl ProviderAdapter for GenericAdapter {
    fn name(&self) -> &str {
        "generic"
    }

    fn headers(&self, api_key: Option<&str>) -> Vec<(String, String)> {
        bearer(api_key)
    }

    fn encode(&self, request: &ChatRequest, safety: &BTreeMap<String, String>) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": role_name(m.role, "assistant"), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.config.model_id,
            "system": request.system,
            "messages": messages,
            "temperature": request.config.temperature,
            "max_output_tokens": request.config.max_output_tokens,
        });
        if request.config.safety_filters_disabled {
            body["safety"] = json!(safety);
        }
        body
    }

    fn decode(&self, body: &Value) -> ProviderReply {
        if let Some(reason) = body.get("blocked").and_then(Value::as_str) {
            return ProviderReply::Blocked(reason.to_string());
        }
        match body.get("text").and_then(Value::as_str) {
            Some(t) => ProviderReply::Text(t.to_string()),
            None => ProviderReply::Invalid("response has neither `text` nor `blocked`".into()),
        }
    }
}

/// OpenAI-style `/chat/completions`.
pub struct OpenAiAdapter;

impl ProviderAdapter for OpenAiAdapter {
    fn name(&self) -> &str {
        "openai"
    }

    fn headers(&self, api_key: Option<&str>) -> Vec<(String, String)> {
        bearer(api_key)
    }

    fn encode(&self, request: &ChatRequest, _safety: &BTreeMap<String, String>) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system})];
        messages.extend(
            request
                .messages
                .iter()
                .map(|m| json!({"role": role_name(m.role, "assistant"), "content": m.content})),
        );
        json!({
            "model": request.config.model_id,
            "messages": messages,
            "temperature": request.config.temperature,
            "max_tokens": request.config.max_output_tokens,
        })
    }

    fn decode(&self, body: &Value) -> ProviderReply {
        let Some(choice) = body.pointer("/choices/0") else {
            return ProviderReply::Invalid("no choices in response".into());
        };
        if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
            return ProviderReply::Blocked("content_filter".into());
        }
        match choice.pointer("/message/content").and_then(Value::as_str) {
            Some(t) => ProviderReply::Text(t.to_string()),
            None => ProviderReply::Invalid("choice has no message content".into()),
        }
    }
}

/// Gemini `generateContent`. With filters disabled every harm category is set to `BLOCK_NONE`.
pub struct GeminiAdapter;

const GEMINI_HARM_CATEGORIES: [&str; 4] = [
    "HARM_CATEGORY_HARASSMENT",
    "HARM_CATEGORY_HATE_SPEECH",
    "HARM_CATEGORY_SEXUALLY_EXPLICIT",
    "HARM_CATEGORY_DANGEROUS_CONTENT",
];

impl ProviderAdapter for GeminiAdapter {
    fn name(&self) -> &str {
        "gemini"
    }

    fn headers(&self, api_key: Option<&str>) -> Vec<(String, String)> {
        api_key
            .map(|k| vec![("x-goog-api-key".to_string(), k.to_string())])
            .unwrap_or_default()
    }

    fn encode(&self, request: &ChatRequest, safety: &BTreeMap<String, String>) -> Value {
        let contents: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": role_name(m.role, "model"), "parts": [{"text": m.content}]}))
            .collect();
        let mut body = json!({
            "systemInstruction": {"parts": [{"text": request.system}]},
            "contents": contents,
            "generationConfig": {
                "temperature": request.config.temperature,
                "maxOutputTokens": request.config.max_output_tokens,
            },
        });
        if request.config.safety_filters_disabled {
            let mut settings: BTreeMap<String, String> = GEMINI_HARM_CATEGORIES
                .iter()
                .map(|c| (c.to_string(), "BLOCK_NONE".to_string()))
                .collect();
            settings.extend(safety.clone());
            body["safetySettings"] = settings
                .into_iter()
                .map(|(category, threshold)| json!({"category": category, "threshold": threshold}))
                .collect();
        }
        body
    }

    fn decode(&self, body: &Value) -> ProviderReply {
        if let Some(reason) = body.pointer("/promptFeedback/blockReason").and_then(Value::as_str) {
            return ProviderReply::Blocked(reason.to_string());
        }
        let Some(candidate) = body.pointer("/candidates/0") else {
            return ProviderReply::Invalid("no candidates in response".into());
        };
        if let Some(reason @ ("SAFETY" | "BLOCKLIST" | "PROHIBITED_CONTENT" | "RECITATION")) =
            candidate.get("finishReason").and_then(Value::as_str)
        {
            return ProviderReply::Blocked(reason.to_string());
        }
        let parts = candidate.pointer("/content/parts").and_then(Value::as_array);
        let text: String = parts
            .into_iter()
            .flatten()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect();
        if text.is_empty() {
            ProviderReply::Invalid("candidate has no text parts".into())
        } else {
            ProviderReply::Text(text)
        }
    }
}

pub struct AdapterRegistry {
    adapters: BTreeMap<String, Arc<dyn ProviderAdapter>>,
}

impl AdapterRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self { adapters: BTreeMap::new() };
        reg.register(Arc::new(GenericAdapter));
        reg.register(Arc::new(OpenAiAdapter));
        reg.register(Arc::new(GeminiAdapter));
        reg
    }

    pub fn register(&mut self, adapter: Arc<dyn ProviderAdapter>) {
        self.adapters.insert(adapter.name().to_string(), adapter);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn ProviderAdapter>> {
        self.adapters.get(name).cloned()
    }
}

/// Counting gate for concurrent requests.
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    adapter: Arc<dyn ProviderAdapter>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    safety: BTreeMap<String, String>,
    gate: InFlight,
}

enum Attempt {
    Done(ChatOutcome),
    Transient(String),
}

impl HttpBackend {
    /// Resolves the adapter and API key. Fails before any network traffic when
    /// the key variable is named but unset.
    pub fn from_settings(settings: &HttpSettings) -> Result<Self, BackendError> {
        if settings.endpoint.is_empty() {
            return Err(BackendError::Config("http backend needs an endpoint".into()));
        }
        if settings.max_in_flight == 0 || settings.retry.attempts == 0 {
            return Err(BackendError::Config("max_in_flight and retry attempts must be positive".into()));
        }
        let adapter = AdapterRegistry::with_builtins()
            .get(&settings.adapter)
            .ok_or_else(|| BackendError::UnknownAdapter(settings.adapter.clone()))?;
        let api_key = match &settings.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(settings.timeout))
            .build()
            .into();
        Ok(Self {
            endpoint: settings.endpoint.clone(),
            api_key,
            adapter,
            agent,
            retry: settings.retry,
            safety: settings.safety_overrides.clone(),
            gate: InFlight { limit: settings.max_in_flight, active: Mutex::new(0), freed: Condvar::new() },
        })
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        for (k, v) in self.adapter.headers(self.api_key.as_deref()) {
            req = req.header(k, v);
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        if status >= 500 {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Done(ChatOutcome::TransportError(format!("HTTP {status}: {}", truncate(&text))));
        }
        let parsed: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Done(ChatOutcome::TransportError(format!("response is not JSON: {e}"))),
        };
        Attempt::Done(match self.adapter.decode(&parsed) {
            ProviderReply::Text(t) => ChatOutcome::text(t),
            ProviderReply::Blocked(r) => ChatOutcome::Blocked(r),
            ProviderReply::Invalid(d) => ChatOutcome::TransportError(d),
        })
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &ChatRequest) -> ChatOutcome {
        if !request.is_valid() {
            return ChatOutcome::TransportError("invalid request: roles must alternate from user".into());
        }
        let body = self.adapter.encode(request, &self.safety).to_string();
        let _permit = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                std::thread::sleep(backoff_delay(&self.retry, attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(outcome) => return outcome,
                Attempt::Transient(detail) => {
                    tracing::warn!(attempt = attempt + 1, %detail, "transient transport failure");
                    last = detail;
                }
            }
        }
        ChatOutcome::TransportError(format!("gave up after {} attempts: {last}", self.retry.attempts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Stage;
    use crate::llm::GenerationConfig;

    fn request() -> ChatRequest {
        ChatRequest::single(Stage::Evidence, "sys", "hello", GenerationConfig::for_stage(Stage::Evidence, "m1"))
    }

    #[test]
    fn gemini_disables_every_harm_category() {
        let body = GeminiAdapter.encode(&request(), &BTreeMap::new());
        let settings = body["safetySettings"].as_array().unwrap();
        assert_eq!(settings.len(), 4);
        assert!(settings.iter().all(|s| s["threshold"] == "BLOCK_NONE"));
        assert_eq!(body["generationConfig"]["temperature"], 0.0);
    }

    #[test]
    fn gemini_block_reason_is_blocked() {
        let reply = GeminiAdapter.decode(&json!({"promptFeedback": {"blockReason": "SAFETY"}}));
        assert_eq!(reply, ProviderReply::Blocked("SAFETY".into()));
        let reply = GeminiAdapter.decode(&json!({"candidates": [{"content": {"parts": [{"text": "a"}, {"text": "b"}]}}]}));
        assert_eq!(reply, ProviderReply::Text("ab".into()));
    }

    #[test]
    fn openai_content_filter_is_blocked() {
        let reply = OpenAiAdapter.decode(&json!({"choices": [{"finish_reason": "content_filter", "message": {}}]}));
        assert_eq!(reply, ProviderReply::Blocked("content_filter".into()));
        let body = OpenAiAdapter.encode(&request(), &BTreeMap::new());
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn generic_roundtrip_shapes() {
        let body = GenericAdapter.encode(&request(), &BTreeMap::new());
        assert_eq!(body["system"], "sys");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(GenericAdapter.decode(&json!({"text": "ok"})), ProviderReply::Text("ok".into()));
        assert!(matches!(GenericAdapter.decode(&json!({})), ProviderReply::Invalid(_)));
    }

    #[test]
    fn unset_key_variable_fails_at_construction() {
        let settings = HttpSettings {
            endpoint: "http://127.0.0.1:9/never".into(),
            api_key_env: Some("EHRQA_TEST_DEFINITELY_UNSET_KEY".into()),
            ..HttpSettings::default()
        };
        assert!(matches!(HttpBackend::from_settings(&settings), Err(BackendError::MissingApiKey(_))));
    }
}
