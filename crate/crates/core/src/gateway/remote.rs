use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{validate_turns, BackendSpec, ChatBackend, ChatRole, ChatTurn, GatewayError};

/// Environment variable holding the bearer token for remote backends.
pub const API_KEY_ENV: &str = "HALMIT_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(500) }
    }
}

/// POSTs a JSON body, retrying transport failures and non-2xx statuses
/// with exponential backoff.
pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &B,
    retry: &RetryPolicy,
) -> Result<R, GatewayError> {
    let attempts = retry.attempts.max(1);
    let mut backoff = retry.initial_backoff;
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        let mut request = client.post(url).json(body);
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(response) if response.status().is_success() => {
                let text = response
                    .text()
                    .map_err(|e| GatewayError::Malformed(format!("reading body: {e}")))?;
                return serde_json::from_str(&text)
                    .map_err(|e| GatewayError::Malformed(format!("{e}: {text}")));
            }
            Ok(response) => {
                let status = response.status();
                let text = response.text().unwrap_or_default();
                last_error = format!("HTTP {status}: {text}");
            }
            Err(e) => last_error = e.to_string(),
        }
        tracing::warn!(url, attempt, error = %last_error, "remote call failed");
        if attempt < attempts {
            thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(GatewayError::Transport { attempts, message: last_error })
}

/// OpenAI-compatible `POST {endpoint}/chat/completions` client.
#[derive(Debug)]
pub struct RemoteChat {
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    n: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteChat {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            temperature,
            max_tokens,
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn from_spec(spec: &BackendSpec) -> Result<Self, GatewayError> {
        let endpoint = spec
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::Config("remote backend requires an endpoint".into()))?;
        Ok(Self::new(endpoint, spec.model_name.clone(), spec.temperature, spec.max_tokens))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

fn role_name(role: ChatRole) -> &'static str {
    match role {
        ChatRole::System => "system",
        ChatRole::User => "user",
        ChatRole::Assistant => "assistant",
    }
}

impl ChatBackend for RemoteChat {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        validate_turns(turns)?;
        let url = format!("{}/chat/completions", self.endpoint);
        let mut out = Vec::with_capacity(n);
        // Some servers ignore `n`; keep asking for the remainder.
        while out.len() < n {
            let request = ChatRequest {
                model: &self.model,
                messages: turns
                    .iter()
                    .map(|t| WireMessage { role: role_name(t.role), content: &t.content })
                    .collect(),
                temperature: self.temperature,
                max_tokens: self.max_tokens,
                n: n - out.len(),
            };
            let response: ChatResponse = post_json(&self.client, &url, &request, &self.retry)?;
            if response.choices.is_empty() {
                return Err(GatewayError::ShortBatch { got: out.len(), want: n });
            }
            for choice in response.choices.into_iter().take(n - out.len()) {
                match choice.message.content {
                    Some(text) if !text.trim().is_empty() => out.push(text),
                    _ => return Err(GatewayError::Malformed("choice without content".into())),
                }
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        &self.model
    }
}
