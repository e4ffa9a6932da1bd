//! Uniform access to chat models and text embedding.
//!
//! Every language-model role (target agent, query generator, evaluation
//! judge, entailment judge) goes through [`ChatBackend`]. Backends come in
//! three kinds: an OpenAI-compatible remote client, a scripted mock keyed by
//! prompt, and the synthetic world used for desk-scale verification.

mod embedding;
mod remote;
mod scripted;
mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{
    build_embedder, cosine, normalize, EmbeddingKind, EmbeddingSpec, Embedder, HashedEmbedder,
    RemoteEmbedder,
};
pub use remote::{RemoteChat, RetryPolicy, API_KEY_ENV};
pub use scripted::{Script, ScriptRule, ScriptedBackend};
pub use synthetic::{
    faithful_answer, DistractorSchedule, SyntheticAgent, SyntheticGenerator, SyntheticJudge,
    SyntheticWorld, WorldConfig, REFERENCE_WORLD,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid chat turns: {0}")]
    InvalidTurns(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no scripted reply for prompt {0:?}")]
    ScriptKeyMissing(String),
    #[error("backend returned {got} of {want} requested samples")]
    ShortBatch { got: usize, want: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has zero norm")]
    DegenerateEmbedding,
    #[error("embedding dimension {got} does not match expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

/// Checks content is non-empty and that roles alternate user/assistant
/// after an optional leading system turn, ending on a user turn.
pub fn validate_turns(turns: &[ChatTurn]) -> Result<(), GatewayError> {
    let body = match turns.first() {
        None => return Err(GatewayError::InvalidTurns("no turns".into())),
        Some(t) if t.role == ChatRole::System => &turns[1..],
        Some(_) => turns,
    };
    if body.is_empty() {
        return Err(GatewayError::InvalidTurns("no user turn".into()));
    }
    for (i, turn) in turns.iter().enumerate() {
        if turn.content.trim().is_empty() {
            return Err(GatewayError::InvalidTurns(format!("turn {i} is empty")));
        }
    }
    for (i, turn) in body.iter().enumerate() {
        let want = if i % 2 == 0 { ChatRole::User } else { ChatRole::Assistant };
        if turn.role != want {
            return Err(GatewayError::InvalidTurns(format!(
                "turn {i} has role {:?}, expected {want:?}",
                turn.role
            )));
        }
    }
    if body.len() % 2 == 0 {
        return Err(GatewayError::InvalidTurns("last turn must come from the user".into()));
    }
    Ok(())
}

/// Content of the final user turn.
pub fn last_user(turns: &[ChatTurn]) -> &str {
    turns
        .iter()
        .rev()
        .find(|t| t.role == ChatRole::User)
        .map(|t| t.content.as_str())
        .unwrap_or("")
}

/// A chat-completion capable model.
///
/// `complete_n` mirrors the `n` parameter of the OpenAI wire format:
/// it returns exactly `n` independent completions or an error.
pub trait ChatBackend: Send + Sync {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError>;

    fn name(&self) -> &str;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        (**self).complete_n(turns, n)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        (**self).complete_n(turns, n)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// One completion for a validated conversation.
pub fn complete(backend: &dyn ChatBackend, turns: &[ChatTurn]) -> Result<String, GatewayError> {
    validate_turns(turns)?;
    let mut out = backend.complete_n(turns, 1)?;
    match out.pop() {
        Some(text) if !text.trim().is_empty() && out.is_empty() => Ok(text),
        Some(_) if !out.is_empty() => Err(GatewayError::ShortBatch { got: out.len() + 1, want: 1 }),
        _ => Err(GatewayError::Malformed("empty completion".into())),
    }
}

/// Sends `query` to the backend `k` times. All-or-nothing.
pub fn sample_k(backend: &dyn ChatBackend, query: &str, k: usize) -> Result<Vec<String>, GatewayError> {
    if k < 2 {
        return Err(GatewayError::Config(format!("sample_k needs k >= 2, got {k}")));
    }
    let turns = [ChatTurn::user(query)];
    validate_turns(&turns)?;
    let out = backend.complete_n(&turns, k)?;
    if out.len() != k {
        return Err(GatewayError::ShortBatch { got: out.len(), want: k });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
    Synthetic,
}

/// Which part a backend plays. Only synthetic backends care: the same
/// world answers as the agent, the query generator or the judge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Target,
    Generator,
    Judge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Script file for scripted backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// World file for synthetic backends; the bundled reference world when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
}

fn default_model_name() -> String {
    "default".to_string()
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    256
}

impl BackendSpec {
    pub fn synthetic(seed: u64) -> Self {
        Self {
            kind: BackendKind::Synthetic,
            endpoint: None,
            model_name: "synthetic".into(),
            temperature: 1.0,
            max_tokens: 256,
            seed: Some(seed),
            script: None,
            world: None,
        }
    }

    pub fn scripted(script: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_name: "scripted".into(),
            temperature: 0.0,
            max_tokens: 256,
            seed: None,
            script: Some(script.into()),
            world: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be positive".into()));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint.is_none() => {
                Err(GatewayError::Config("remote backend requires an endpoint".into()))
            }
            BackendKind::Scripted if self.script.is_none() => {
                Err(GatewayError::Config("scripted backend requires a script file".into()))
            }
            _ => Ok(()),
        }
    }

    /// Loads the synthetic world this spec points at.
    pub fn load_world(&self) -> Result<SyntheticWorld, GatewayError> {
        let config = match &self.world {
            Some(path) => WorldConfig::from_path(path)?,
            None => WorldConfig::reference(),
        };
        SyntheticWorld::from_config(&config)
    }
}

/// Instantiates the backend described by `spec` for the given role.
pub fn build_backend(spec: &BackendSpec, role: Role) -> Result<Arc<dyn ChatBackend>, GatewayError> {
    spec.validate()?;
    let seed = spec.seed.unwrap_or(0);
    Ok(match spec.kind {
        BackendKind::Remote => Arc::new(RemoteChat::from_spec(spec)?),
        BackendKind::Scripted => {
            let path = spec.script.as_ref().expect("validated");
            Arc::new(ScriptedBackend::new(Script::from_path(path)?))
        }
        BackendKind::Synthetic => match role {
            Role::Target => Arc::new(SyntheticAgent::new(Arc::new(spec.load_world()?), seed)),
            Role::Generator => Arc::new(SyntheticGenerator::new(Arc::new(spec.load_world()?), seed)),
            Role::Judge => Arc::new(SyntheticJudge),
        },
    })
}
