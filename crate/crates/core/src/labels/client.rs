//! Chat-model clients used for label extraction.
//!
//! [`LlmClient`] is the pluggable interface; two implementations ship:
//! an HTTP client for any chat-completions-compatible endpoint, and a
//! deterministic rule-based mock that labels synthetic reports by keyword
//! matching so the whole pipeline runs offline.

use crate::error::CoreError;
use crate::schema::{LabelSchema, SchemaKind};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub trait LlmClient: Send + Sync {
    /// Send one (system, user) message pair; returns the assistant text.
    fn send(&self, system: &str, user: &str) -> Result<String, CoreError>;

    fn name(&self) -> &str;
}

// ---------------------------------------------------------------------------
// HTTP chat-completions client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct ChatMessage {
    role: &'static str,
    content: String,
}

#[derive(Debug, Clone, Serialize)]
struct ChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint. The API key
/// is read from an environment variable, never from config files.
pub struct HttpChatClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// `api_key_env` names the environment variable holding the bearer token
    /// (empty or unset variable means no Authorization header is sent).
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Result<Self, CoreError> {
        let api_key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
        let timeout = Duration::from_secs(60);
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| CoreError::LlmTransport(e.to_string()))?;
        Ok(HttpChatClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            timeout,
            http,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn request_body(&self, system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: system.to_string(),
                },
                ChatMessage {
                    role: "user",
                    content: user.to_string(),
                },
            ],
            temperature: 0.0,
        }
    }
}

/// Extract the assistant text from a chat-completions JSON response body.
pub(crate) fn parse_chat_response(body: &str) -> Result<String, CoreError> {
    let resp: ChatResponse = serde_json::from_str(body)
        .map_err(|e| CoreError::LlmTransport(format!("malformed response body: {e}")))?;
    resp.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| CoreError::LlmTransport("response has no choices".into()))
}

impl LlmClient for HttpChatClient {
    fn send(&self, system: &str, user: &str) -> Result<String, CoreError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self
            .http
            .post(&url)
            .timeout(self.timeout)
            .json(&self.request_body(system, user));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| CoreError::LlmTransport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| CoreError::LlmTransport(e.to_string()))?;
        if !status.is_success() {
            return Err(CoreError::LlmTransport(format!(
                "http {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        parse_chat_response(&body)
    }

    fn name(&self) -> &str {
        &self.model
    }
}

// ---------------------------------------------------------------------------
// Deterministic mock
// ---------------------------------------------------------------------------

/// Rule-based stand-in for a chat model. Splits the report into sentences and
/// labels each schema category by keyword match: a sentence mentioning the
/// category (by key or display name) yields 1, or 0 when the mention is
/// negated ("no", "not", "without"); unmentioned categories yield -1
/// (0 for binary schemas).
pub struct MockReportLabeler {
    schema: LabelSchema,
    /// Lowercased match terms per category.
    aliases: Vec<Vec<String>>,
    name: String,
}

impl MockReportLabeler {
    pub fn new(schema: LabelSchema) -> Self {
        let mut aliases: Vec<Vec<String>> = schema
            .categories
            .iter()
            .map(|c| {
                let mut v = vec![c.to_lowercase()];
                if c.contains('_') {
                    v.push(c.replace('_', " ").to_lowercase());
                }
                v
            })
            .collect();
        if let Some(groups) = &schema.groups {
            for group in groups {
                for (display, key) in &group.entries {
                    if let Some(i) = schema.categories.iter().position(|c| c == key) {
                        aliases[i].push(display.to_lowercase());
                    }
                }
            }
        }
        MockReportLabeler {
            name: format!("mock-{}", schema.name),
            schema,
            aliases,
        }
    }

    fn label_category(&self, sentences: &[String], index: usize) -> i8 {
        let missing = match self.schema.kind {
            SchemaKind::Diagnostic => -1,
            SchemaKind::VisualPattern => 0,
        };
        for s in sentences {
            let Some(alias) = self.aliases[index].iter().find(|a| s.contains(a.as_str()))
            else {
                continue;
            };
            let negated = s.contains(&format!("no {alias}"))
                || s.contains(&format!("without {alias}"))
                || s.contains(" not ")
                || s.starts_with("not ");
            return if negated { 0 } else { 1 };
        }
        missing
    }
}

impl LlmClient for MockReportLabeler {
    fn send(&self, _system: &str, user: &str) -> Result<String, CoreError> {
        let sentences: Vec<String> = user
            .split(['.', ';'])
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        let values: Vec<String> = (0..self.schema.arity())
            .map(|i| self.label_category(&sentences, i).to_string())
            .collect();
        Ok(values.join(","))
    }

    fn name(&self) -> &str {
        &self.name
    }
}

// ---------------------------------------------------------------------------
// Scripted client (testing aid)
// ---------------------------------------------------------------------------

/// Replays a fixed sequence of responses and counts calls; the last entry
/// repeats once the script is exhausted. `Err` entries simulate transport
/// failures.
pub struct ScriptedClient {
    script: Mutex<Vec<Result<String, String>>>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new(script: Vec<Result<String, String>>) -> Self {
        assert!(!script.is_empty(), "script must have at least one entry");
        ScriptedClient {
            script: Mutex::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn always(response: &str) -> Self {
        Self::new(vec![Ok(response.to_string())])
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for ScriptedClient {
    fn send(&self, _system: &str, _user: &str) -> Result<String, CoreError> {
        let idx = self.calls.fetch_add(1, Ordering::SeqCst);
        let script = self.script.lock().expect("script lock");
        let entry = script.get(idx).unwrap_or_else(|| script.last().unwrap());
        match entry {
            Ok(s) => Ok(s.clone()),
            Err(e) => Err(CoreError::LlmTransport(e.clone())),
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{schema_desk_8, schema_visual_11};

    #[test]
    fn mock_labels_by_keyword_and_negation() {
        let client = MockReportLabeler::new(schema_desk_8());
        let report = "There is nodule in the left upper zone. There is no effusion. \
                      Cardiomegaly is not present. The study is of adequate quality.";
        let out = client.send("sys", report).unwrap();
        // nodule=1, effusion=0, cardiomegaly=0, everything else unmentioned=-1
        assert_eq!(out, "1,0,-1,-1,-1,0,-1,-1");
    }

    #[test]
    fn mock_binary_schema_defaults_to_zero() {
        let client = MockReportLabeler::new(schema_visual_11());
        let out = client.send("sys", "There is patchy opacity.").unwrap();
        let tokens: Vec<&str> = out.split(',').collect();
        assert_eq!(tokens.len(), 11);
        assert_eq!(tokens[4], "1"); // morphology_patchy mentioned
        assert!(tokens.iter().filter(|t| **t == "-1").count() == 0);
    }

    #[test]
    fn chat_response_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"0,1"}}]}"#;
        assert_eq!(parse_chat_response(body).unwrap(), "0,1");
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_response("not json").is_err());
    }

    #[test]
    fn scripted_client_replays_and_counts() {
        let c = ScriptedClient::new(vec![Err("boom".into()), Ok("0,1".into())]);
        assert!(c.send("s", "u").is_err());
        assert_eq!(c.send("s", "u").unwrap(), "0,1");
        assert_eq!(c.send("s", "u").unwrap(), "0,1");
        assert_eq!(c.calls(), 3);
    }
}
