//! The hallucination monitor.
//!
//! A query is flagged when the three most similar boundary records are all
//! over the similarity threshold and their similarity-weighted centroid is
//! itself close to the query. Otherwise the target is sampled and the query
//! is flagged when its semantic entropy exceeds that of every retrieved
//! boundary record.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::entropy::{semantic_entropy_of, Entailment};
use crate::gateway::{cosine, ChatBackend, Embedder, GatewayError};
use crate::store::{Neighbor, StoreError, VectorStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon_sim: f64,
    #[serde(default = "default_retrieve")]
    pub k_retrieve: usize,
    #[serde(default = "default_k_entropy")]
    pub k_entropy: usize,
    /// Upper bound on concurrent target sampling in batch checks and the service.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_epsilon() -> f64 {
    0.8
}
fn default_retrieve() -> usize {
    8
}
fn default_k_entropy() -> usize {
    5
}
fn default_in_flight() -> usize {
    8
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            epsilon_sim: default_epsilon(),
            k_retrieve: default_retrieve(),
            k_entropy: default_k_entropy(),
            max_in_flight: default_in_flight(),
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if !(self.epsilon_sim > 0.0 && self.epsilon_sim < 1.0) {
            return Err(MonitorError::Config(format!("epsilon_sim must lie in (0, 1), got {}", self.epsilon_sim)));
        }
        if self.k_retrieve < 3 || self.k_entropy < 2 || self.max_in_flight == 0 {
            return Err(MonitorError::Config(
                "k_retrieve must be at least 3, k_entropy at least 2 and max_in_flight positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitor config: {0}")]
    Config(String),
    #[error("centroid needs exactly three neighbors with a non-zero similarity sum")]
    DegenerateCentroid,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    CentroidProximity,
    EntropyExceeds,
    WithinBound,
    EmptyStore,
}

impl Reason {
    pub fn flags(self) -> bool {
        matches!(self, Reason::CentroidProximity | Reason::EntropyExceeds)
    }
}

fn six_places<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

fn six_places_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => six_places(x, s),
        None => s.serialize_none(),
    }
}

/// A retrieved boundary record as reported in a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborSummary {
    pub id: u64,
    pub domain: String,
    pub query: String,
    #[serde(serialize_with = "six_places")]
    pub semantic_entropy: f64,
    #[serde(serialize_with = "six_places")]
    pub similarity: f64,
}

impl From<&Neighbor> for NeighborSummary {
    fn from(n: &Neighbor) -> Self {
        Self {
            id: n.record.id,
            domain: n.record.domain.clone(),
            query: n.record.query.clone(),
            semantic_entropy: n.record.semantic_entropy,
            similarity: n.similarity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub flagged: bool,
    pub reason: Reason,
    #[serde(serialize_with = "six_places_opt")]
    pub centroid_similarity: Option<f64>,
    #[serde(serialize_with = "six_places_opt")]
    pub query_entropy: Option<f64>,
    #[serde(serialize_with = "six_places_opt")]
    pub neighbor_max_entropy: Option<f64>,
    pub neighbors: Vec<NeighborSummary>,
}

impl Verdict {
    /// Compact JSON plus a newline: the bytes the CLI prints and the service returns.
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("verdicts serialize");
        s.push('\n');
        s
    }
}

/// `C = sum S_i v_i / sum S_i`, normalized.
pub fn weighted_centroid(vectors: &[&[f64]], similarities: &[f64]) -> Result<Vec<f64>, MonitorError> {
    let total: f64 = similarities.iter().sum();
    if vectors.is_empty() || vectors.len() != similarities.len() || total == 0.0 {
        return Err(MonitorError::DegenerateCentroid);
    }
    let mut c = vec![0.0; vectors[0].len()];
    for (v, s) in vectors.iter().zip(similarities) {
        c.iter_mut().zip(v.iter()).for_each(|(acc, x)| *acc += s * x / total);
    }
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MonitorError::DegenerateCentroid);
    }
    Ok(c.into_iter().map(|x| x / norm).collect())
}

/// Normalized centroid of exactly three neighbors.
pub fn centroid(neighbors: &[Neighbor]) -> Result<Vec<f64>, MonitorError> {
    if neighbors.len() != 3 {
        return Err(MonitorError::DegenerateCentroid);
    }
    let vectors: Vec<Vec<f64>> = neighbors
        .iter()
        .map(|n| n.record.embedding.iter().map(|x| f64::from(*x)).collect())
        .collect();
    let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    let sims: Vec<f64> = neighbors.iter().map(|n| n.similarity).collect();
    weighted_centroid(&refs, &sims)
}

/// Everything a check reads. The store is only borrowed immutably.
#[derive(Clone, Copy)]
pub struct Monitor<'a> {
    pub store: &'a VectorStore,
    pub target: &'a dyn ChatBackend,
    pub oracle: &'a dyn Entailment,
    pub embedder: &'a dyn Embedder,
    pub config: &'a MonitorConfig,
}

impl Monitor<'_> {
    pub fn check(&self, query: &str, domain: Option<&str>) -> Result<Verdict, MonitorError> {
        let eps = self.config.epsilon_sim;
        if self.embedder.dimension() != self.store.dimension() {
            return Err(StoreError::Dimension { got: self.embedder.dimension(), want: self.store.dimension() }.into());
        }
        let q = self.embedder.embed(query)?;
        let neighbors = self.store.top_k(&q, self.config.k_retrieve, domain);
        if neighbors.is_empty() {
            tracing::warn!(domain, "boundary store has no records; query passes unchecked");
            return Ok(Verdict {
                flagged: false,
                reason: Reason::EmptyStore,
                centroid_similarity: None,
                query_entropy: None,
                neighbor_max_entropy: None,
                neighbors: Vec::new(),
            });
        }
        let summaries: Vec<NeighborSummary> = neighbors.iter().map(NeighborSummary::from).collect();
        let neighbor_max_entropy = neighbors
            .iter()
            .map(|n| n.record.semantic_entropy)
            .fold(f64::NEG_INFINITY, f64::max);

        let mut centroid_similarity = None;
        if neighbors.iter().filter(|n| n.similarity > eps).count() >= 3 {
            if let Ok(c) = centroid(&neighbors[..3]) {
                let s_c = cosine(&q, &c);
                centroid_similarity = Some(s_c);
                if s_c >= eps {
                    return Ok(Verdict {
                        flagged: true,
                        reason: Reason::CentroidProximity,
                        centroid_similarity,
                        query_entropy: None,
                        neighbor_max_entropy: Some(neighbor_max_entropy),
                        neighbors: summaries,
                    });
                }
            }
        }

        let (h, _) = semantic_entropy_of(query, self.target, self.config.k_entropy, self.oracle)?;
        let reason = if h > neighbor_max_entropy { Reason::EntropyExceeds } else { Reason::WithinBound };
        Ok(Verdict {
            flagged: reason.flags(),
            reason,
            centroid_similarity,
            query_entropy: Some(h),
            neighbor_max_entropy: Some(neighbor_max_entropy),
            neighbors: summaries,
        })
    }

    /// Element-wise [`check`](Self::check), at most `max_in_flight` at a time.
    /// Order is preserved and each item carries its own result.
    pub fn check_batch(&self, queries: &[(String, Option<String>)]) -> Vec<Result<Verdict, MonitorError>> {
        if queries.is_empty() {
            return Vec::new();
        }
        let pool = match rayon::ThreadPoolBuilder::new().num_threads(self.config.max_in_flight).build() {
            Ok(pool) => pool,
            Err(e) => {
                let msg = format!("worker pool: {e}");
                return queries.iter().map(|_| Err(MonitorError::Config(msg.clone()))).collect();
            }
        };
        pool.install(|| queries.par_iter().map(|(q, d)| self.check(q, d.as_deref())).collect())
    }
}

/// Continuous score for ranking metrics.
///
/// The centroid path scores `S_C`, which is at least `epsilon_sim`. Every
/// other outcome scores `H / ln K` squeezed into `[0, epsilon_sim)`, so any
/// centroid flag outranks any entropy-based outcome.
pub fn score(verdict: &Verdict, config: &MonitorConfig) -> f64 {
    match verdict.reason {
        Reason::CentroidProximity => verdict.centroid_similarity.unwrap_or(1.0),
        Reason::EmptyStore => 0.0,
        Reason::EntropyExceeds | Reason::WithinBound => {
            let h_max = (config.k_entropy as f64).ln();
            let h = verdict.query_entropy.unwrap_or(0.0);
            config.epsilon_sim * (1.0 - 1e-6) * (h / h_max).clamp(0.0, 1.0)
        }
    }
}
