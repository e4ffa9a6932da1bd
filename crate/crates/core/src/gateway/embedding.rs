use serde::{Deserialize, Serialize};

use super::remote::{post_json, RetryPolicy};
use super::GatewayError;
use crate::text::{fnv1a, tokenize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Remote,
    Hashed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Hashed embeddings only: add character trigram features.
    #[serde(default = "default_trigrams")]
    pub trigrams: bool,
}

fn default_dimension() -> usize {
    256
}

fn default_trigrams() -> bool {
    true
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self::hashed(default_dimension())
    }
}

impl EmbeddingSpec {
    pub fn hashed(dimension: usize) -> Self {
        Self { kind: EmbeddingKind::Hashed, dimension, endpoint: None, model_name: None, trigrams: true }
    }
}

/// Maps text to a unit vector of fixed dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
}

pub fn build_embedder(spec: &EmbeddingSpec) -> Result<Box<dyn Embedder>, GatewayError> {
    if spec.dimension == 0 {
        return Err(GatewayError::Config("embedding dimension must be positive".into()));
    }
    Ok(match spec.kind {
        EmbeddingKind::Hashed if spec.trigrams => Box::new(HashedEmbedder::new(spec.dimension)),
        EmbeddingKind::Hashed => Box::new(HashedEmbedder::unigrams(spec.dimension)),
        EmbeddingKind::Remote => {
            let endpoint = spec
                .endpoint
                .clone()
                .ok_or_else(|| GatewayError::Config("remote embedding requires an endpoint".into()))?;
            Box::new(RemoteEmbedder::new(
                endpoint,
                spec.model_name.clone().unwrap_or_else(|| "default".into()),
                spec.dimension,
            ))
        }
    })
}

/// Signed feature hashing over unigrams and character trigrams.
///
/// Each token contributes its unigram plus the trigrams of `#token#`; every
/// feature lands in bucket `h mod d` with sign taken from the top hash bit.
#[derive(Clone, Debug)]
pub struct HashedEmbedder {
    dimension: usize,
    trigrams: bool,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension, trigrams: true }
    }

    /// Unigram features only.
    pub fn unigrams(dimension: usize) -> Self {
        Self { trigrams: false, ..Self::new(dimension) }
    }

    pub fn has_trigrams(&self) -> bool {
        self.trigrams
    }

    fn add_feature(&self, acc: &mut [f64], feature: &[u8]) {
        let h = fnv1a(feature);
        let bucket = (h % self.dimension as u64) as usize;
        acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
}

impl Embedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let mut acc = vec![0.0; self.dimension];
        let mut feature = Vec::with_capacity(32);
        for token in &tokens {
            feature.clear();
            feature.extend_from_slice(b"u:");
            feature.extend_from_slice(token.as_bytes());
            self.add_feature(&mut acc, &feature);
            if !self.trigrams {
                continue;
            }
            let padded: Vec<char> = std::iter::once('#').chain(token.chars()).chain(std::iter::once('#')).collect();
            for window in padded.windows(3) {
                feature.clear();
                feature.extend_from_slice(b"t:");
                let gram: String = window.iter().collect();
                feature.extend_from_slice(gram.as_bytes());
                self.add_feature(&mut acc, &feature);
            }
        }
        normalize(acc)
    }
}

/// Client for `POST {endpoint}/embeddings`.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dimension: usize,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: String, model: String, dimension: usize) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model,
            dimension,
            retry: RetryPolicy::default(),
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let url = format!("{}/embeddings", self.endpoint);
        let body = EmbeddingRequest { model: &self.model, input: text };
        let response: EmbeddingResponse = post_json(&self.client, &url, &body, &self.retry)?;
        let vector = response
            .data
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Malformed("embedding response has no data".into()))?
            .embedding;
        if vector.len() != self.dimension {
            return Err(GatewayError::Dimension { got: vector.len(), want: self.dimension });
        }
        normalize(vector)
    }
}

pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, GatewayError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(GatewayError::DegenerateEmbedding);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}
