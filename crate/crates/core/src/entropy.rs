//! Semantic entropy: cluster K sampled responses into equivalence classes
//! and take the discrete entropy of the class frequencies (natural log).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::evaluator::unigram_f1;
use crate::gateway::{complete, sample_k, BackendSpec, ChatBackend, ChatTurn, GatewayError};
use crate::prompts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    LlmJudge,
    ExactMatch,
    TokenOverlap,
}

/// Serializable description of an equivalence oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: OracleKind,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendSpec>,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { kind: OracleKind::TokenOverlap, threshold: default_threshold(), judge: None }
    }
}

/// One-directional entailment test. Clustering always asks both directions.
pub trait Entailment: Send + Sync {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, GatewayError>;
}

#[derive(Clone)]
pub struct EquivalenceOracle {
    kind: OracleKind,
    threshold: f64,
    judge: Option<Arc<dyn ChatBackend>>,
}

impl std::fmt::Debug for EquivalenceOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquivalenceOracle")
            .field("kind", &self.kind)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl EquivalenceOracle {
    pub fn exact_match() -> Self {
        Self { kind: OracleKind::ExactMatch, threshold: 1.0, judge: None }
    }

    pub fn token_overlap(threshold: f64) -> Self {
        assert!(threshold > 0.0 && threshold <= 1.0, "threshold must lie in (0, 1]");
        Self { kind: OracleKind::TokenOverlap, threshold, judge: None }
    }

    pub fn llm_judge(backend: Arc<dyn ChatBackend>) -> Self {
        Self { kind: OracleKind::LlmJudge, threshold: 1.0, judge: Some(backend) }
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn from_spec(spec: &OracleSpec) -> Result<Self, GatewayError> {
        match spec.kind {
            OracleKind::ExactMatch => Ok(Self::exact_match()),
            OracleKind::TokenOverlap => {
                if !(spec.threshold > 0.0 && spec.threshold <= 1.0) {
                    return Err(GatewayError::Config(format!("oracle threshold {} outside (0, 1]", spec.threshold)));
                }
                Ok(Self::token_overlap(spec.threshold))
            }
            OracleKind::LlmJudge => {
                let judge = spec
                    .judge
                    .as_ref()
                    .ok_or_else(|| GatewayError::Config("llm_judge oracle needs a judge backend".into()))?;
                Ok(Self::llm_judge(crate::gateway::build_backend(judge, crate::gateway::Role::Judge)?))
            }
        }
    }
}

impl Entailment for EquivalenceOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, GatewayError> {
        match self.kind {
            OracleKind::ExactMatch => Ok(premise == hypothesis),
            OracleKind::TokenOverlap => Ok(unigram_f1(hypothesis, premise) >= self.threshold),
            OracleKind::LlmJudge => {
                let backend = self.judge.as_ref().expect("llm_judge oracle has a backend");
                let reply = complete(backend.as_ref(), &[ChatTurn::user(prompts::entailment(premise, hypothesis))])?;
                parse_yes_no(&reply)
                    .ok_or_else(|| GatewayError::Malformed(format!("entailment reply {reply:?} is not yes/no")))
            }
        }
    }
}

fn parse_yes_no(reply: &str) -> Option<bool> {
    let first = reply
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())?
        .to_lowercase();
    match first.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// A partition of response indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
}

impl Clustering {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut next = 0;
        let clusters = sizes
            .iter()
            .map(|&n| {
                let c: Vec<usize> = (next..next + n).collect();
                next += n;
                c
            })
            .collect();
        Self { clusters }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

/// Greedy first-fit clustering in input order: each response joins the
/// first cluster whose representative (first member) it is equivalent to
/// in both directions, else founds a new cluster.
pub fn cluster(responses: &[String], oracle: &dyn Entailment) -> Result<Clustering, GatewayError> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, response) in responses.iter().enumerate() {
        let mut home = None;
        for (c, members) in clusters.iter().enumerate() {
            let rep = &responses[members[0]];
            if oracle.entails(rep, response)? && oracle.entails(response, rep)? {
                home = Some(c);
                break;
            }
        }
        match home {
            Some(c) => clusters[c].push(i),
            None => clusters.push(vec![i]),
        }
    }
    Ok(Clustering { clusters })
}

/// `H = -sum_c (n_c / K) ln(n_c / K)`.
pub fn entropy(clustering: &Clustering) -> f64 {
    entropy_of_sizes(&clustering.sizes())
}

pub fn entropy_of_sizes(sizes: &[usize]) -> f64 {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let k = total as f64;
    let h: f64 = sizes
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / k;
            -p * p.ln()
        })
        .sum();
    // Clamp away the -0.0 / rounding noise at the ends of [0, ln K].
    h.clamp(0.0, k.ln())
}

/// Samples the target `k` times and returns the semantic entropy with the responses.
pub fn semantic_entropy_of(
    query: &str,
    target: &dyn ChatBackend,
    k: usize,
    oracle: &dyn Entailment,
) -> Result<(f64, Vec<String>), GatewayError> {
    let responses = sample_k(target, query, k)?;
    let clustering = cluster(&responses, oracle)?;
    Ok((entropy(&clustering), responses))
}
