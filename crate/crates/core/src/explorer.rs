//! Probabilistic fractal exploration of an agent's generalization bound.
//!
//! A coordinator keeps a breadth-first frontier of queries. Each round the
//! frontier is processed in parallel: the target is sampled K times, every
//! response is judged, and the semantic entropy of the samples is measured.
//! Hallucinating queries become boundary records and are expanded with the
//! three fractal rewrites, drawn from the active probabilities; clean
//! queries are replaced by fresh ones. The run stops once the ratio of
//! hallucinated question/answer pairs passes `gamma_stop`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{cluster, entropy, Entailment};
use crate::evaluator::{judge, sig_product, EvalError, Judgment};
use crate::gateway::{complete, sample_k, ChatBackend, ChatTurn, Embedder, GatewayError};
use crate::policy::{self, probabilities_from_rewards, PolicyError, PolicySample, ValueNetwork, INITIAL_REWARD};
use crate::prompts;
use crate::store::{to_f32, BoundaryRecord, Lineage, StoreError, VectorStore};
use crate::text::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// FT1: a more specific query.
    Deduction,
    /// FT2: a parallel query reached by analogy.
    Analogy,
    /// FT3: a broader, more abstract query.
    Induction,
}

impl TransformKind {
    pub const ALL: [TransformKind; 3] = [Self::Deduction, Self::Analogy, Self::Induction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Deduction => "deduction",
            Self::Analogy => "analogy",
            Self::Induction => "induction",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "deduction" | "ft1" => Some(Self::Deduction),
            "analogy" | "ft2" => Some(Self::Analogy),
            "induction" | "ft3" => Some(Self::Induction),
            _ => None,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfspConfig {
    #[serde(default = "uniform")]
    pub probabilities: [f64; 3],
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_gamma")]
    pub gamma_stop: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_seeds")]
    pub seeds_per_domain: usize,
    #[serde(default = "default_branch")]
    pub branch_width: usize,
    #[serde(default = "default_frontier")]
    pub frontier_limit: usize,
    /// Stop after this many processed queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<usize>,
    /// Compute gamma over only the last N judged pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_window: Option<usize>,
    /// Only these rewrites expand a hallucinating query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restrict_on_hallucination: Option<Vec<TransformKind>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Branch worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
}

fn uniform() -> [f64; 3] {
    [1.0 / 3.0; 3]
}
fn default_k() -> usize {
    5
}
fn default_gamma() -> f64 {
    0.6
}
fn default_iterations() -> usize {
    50
}
fn default_seeds() -> usize {
    10
}
fn default_branch() -> usize {
    3
}
fn default_frontier() -> usize {
    64
}
fn default_omega() -> f64 {
    policy::DEFAULT_OMEGA
}

impl Default for IfspConfig {
    fn default() -> Self {
        Self {
            probabilities: uniform(),
            k: default_k(),
            gamma_stop: default_gamma(),
            max_iterations: default_iterations(),
            seeds_per_domain: default_seeds(),
            branch_width: default_branch(),
            frontier_limit: default_frontier(),
            query_budget: None,
            gamma_window: None,
            restrict_on_hallucination: None,
            seed: 0,
            omega: default_omega(),
            workers: 0,
        }
    }
}

impl IfspConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        let bad = |m: String| Err(ExploreError::Config(m));
        let p = self.probabilities;
        if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("probabilities {p:?} must be non-negative and sum to 1"));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.gamma_stop > 0.0 && self.gamma_stop < 1.0) {
            return bad(format!("gamma_stop must lie in (0, 1), got {}", self.gamma_stop));
        }
        if self.max_iterations == 0 || self.seeds_per_domain == 0 || self.branch_width == 0 || self.frontier_limit == 0 {
            return bad("max_iterations, seeds_per_domain, branch_width and frontier_limit must be positive".into());
        }
        if self.gamma_window == Some(0) || self.query_budget == Some(0) {
            return bad("gamma_window and query_budget must be positive when set".into());
        }
        if matches!(&self.restrict_on_hallucination, Some(kinds) if kinds.is_empty()) {
            return bad("restrict_on_hallucination must name at least one transformation".into());
        }
        if !(self.omega > 0.0) {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Gamma,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformUsage {
    pub deduction: u64,
    pub analogy: u64,
    pub induction: u64,
}

impl TransformUsage {
    fn bump(&mut self, kind: TransformKind) {
        match kind {
            TransformKind::Deduction => self.deduction += 1,
            TransformKind::Analogy => self.analogy += 1,
            TransformKind::Induction => self.induction += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.deduction + self.analogy + self.induction
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedBranch {
    pub iteration: u64,
    pub query: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub domain: String,
    pub boundary_count: usize,
    /// Gamma after each round.
    pub gamma_trajectory: Vec<f64>,
    /// `(step, H)` for every processed query, in processing order.
    pub entropy_trajectory: Vec<(u64, f64)>,
    pub transform_usage: TransformUsage,
    pub terminated_by: TerminatedBy,
    pub iterations: usize,
    pub queries_processed: usize,
    /// Judgments under the review confidence.
    pub low_confidence_pairs: usize,
    pub failed_branches: Vec<FailedBranch>,
}

/// One line of the exploration event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Pair {
        iteration: u64,
        step: u64,
        query: String,
        response: String,
        hallucinated: bool,
        confidence: f64,
        /// Running gamma including this pair.
        gamma: f64,
    },
    Sample(PolicySample),
}

#[derive(Clone, Debug)]
pub struct Exploration {
    pub report: ExplorationReport,
    pub events: Vec<Event>,
}

impl Exploration {
    pub fn samples(&self) -> impl Iterator<Item = &PolicySample> {
        self.events.iter().filter_map(|e| match e {
            Event::Sample(s) => Some(s),
            Event::Pair { .. } => None,
        })
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("invalid exploration config: {0}")]
    Config(String),
    #[error("seed generation failed: {0}")]
    Seed(GatewayError),
    #[error("only {got} distinct seed queries after regeneration, wanted {want}")]
    TooFewSeeds { got: usize, want: usize },
    #[error("generator returned the parent query unchanged twice: {0:?}")]
    Degenerate(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// `hallucinated / total`, zero when nothing has been judged.
pub fn hallucination_ratio(hallucinated: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hallucinated as f64 / total as f64
    }
}

const SEED_ROUNDS: usize = 3;

/// `n` distinct seed queries for `domain`. Duplicates are regenerated for up
/// to three further rounds.
pub fn seed_queries(domain: &str, n: usize, generator: &dyn ChatBackend) -> Result<Vec<String>, ExploreError> {
    if n == 0 {
        return Err(ExploreError::Config("seed_queries needs n >= 1".into()));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for attempt in 0..=SEED_ROUNDS {
        let missing = n - out.len();
        let prompt = prompts::seed_attempt(domain, missing, attempt);
        let reply = complete(generator, &[ChatTurn::user(prompt)]).map_err(ExploreError::Seed)?;
        for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if out.len() < n && seen.insert(line.to_string()) {
                out.push(line.to_string());
            }
        }
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(ExploreError::TooFewSeeds { got: out.len(), want: n })
}

/// One rewrite of `parent`. An echo of the parent gets one reprompt.
pub fn transform_query(parent: &str, kind: TransformKind, generator: &dyn ChatBackend) -> Result<String, ExploreError> {
    transform_children(parent, kind, 1, generator)?.pop().expect("one child requested")
}

/// `count` rewrites of `parent` from one batched request. Each entry fails
/// separately when that rewrite echoed the parent twice.
fn transform_children(
    parent: &str,
    kind: TransformKind,
    count: usize,
    generator: &dyn ChatBackend,
) -> Result<Vec<Result<String, ExploreError>>, ExploreError> {
    if parent.trim().is_empty() {
        return Err(GatewayError::EmptyText.into());
    }
    let prompt = prompts::transform(kind, parent);
    let turns = [ChatTurn::user(prompt.clone())];
    crate::gateway::validate_turns(&turns)?;
    let first = generator.complete_n(&turns, count)?;
    if first.len() != count {
        return Err(GatewayError::ShortBatch { got: first.len(), want: count }.into());
    }
    Ok(first
        .into_iter()
        .map(|child| {
            let child = child.trim().to_string();
            if !child.is_empty() && child != parent.trim() {
                return Ok(child);
            }
            let retry = [
                ChatTurn::user(prompt.clone()),
                ChatTurn::assistant(if child.is_empty() { "(empty)".to_string() } else { child }),
                ChatTurn::user(prompts::transform_retry(kind, parent)),
            ];
            let again = complete(generator, &retry)?.trim().to_string();
            if again == parent.trim() {
                Err(ExploreError::Degenerate(parent.to_string()))
            } else {
                Ok(again)
            }
        })
        .collect())
}

/// Where the transformation probabilities of a hallucinating query come from.
#[derive(Clone, Copy, Debug)]
pub enum ProbabilitySource<'a> {
    /// `IfspConfig::probabilities`.
    Config,
    /// A fresh uniformly random point of the simplex for every expansion.
    RandomSimplex,
    /// The value network's per-state probabilities.
    Policy(&'a ValueNetwork),
}

/// The collaborators of a run.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub target: &'a dyn ChatBackend,
    pub generator: &'a dyn ChatBackend,
    pub judge: &'a dyn ChatBackend,
    pub oracle: &'a dyn Entailment,
    pub embedder: &'a dyn Embedder,
}

#[derive(Clone, Debug)]
struct FrontierItem {
    query: String,
    root: String,
    /// Set when this query was produced by a rewrite.
    via: Option<TransformKind>,
    parent: Option<ParentInfo>,
    /// Eviction priority: the parent's entropy.
    priority: f64,
}

#[derive(Clone, Debug)]
struct ParentInfo {
    step: u64,
    record_id: Option<u64>,
    entropy: f64,
    reward: f64,
    features: Vec<f64>,
}

struct Processed {
    responses: Vec<String>,
    judgments: Vec<Judgment>,
    entropy: f64,
    embedding: Vec<f64>,
    features: Vec<f64>,
    children: Vec<(String, Option<TransformKind>)>,
    child_failures: Vec<String>,
}

fn simplex_point(rng: &mut impl Rng) -> [f64; 3] {
    let draws = [0; 3].map(|_| -(1.0 - rng.random::<f64>()).ln());
    let total: f64 = draws.iter().sum();
    draws.map(|d| d / total)
}

fn draw_kind(p: &[f64; 3], allowed: Option<&[TransformKind]>, rng: &mut impl Rng) -> TransformKind {
    let mut weights = *p;
    if let Some(allowed) = allowed {
        for kind in TransformKind::ALL {
            if !allowed.contains(&kind) {
                weights[kind.index()] = 0.0;
            }
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            allowed.iter().for_each(|k| weights[k.index()] = 1.0);
        }
    }
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for kind in TransformKind::ALL {
        u -= weights[kind.index()];
        if u < 0.0 {
            return kind;
        }
    }
    *TransformKind::ALL.iter().rev().find(|k| weights[k.index()] > 0.0).unwrap_or(&TransformKind::Induction)
}

fn process(
    item: &FrontierItem,
    round: usize,
    domain: &str,
    agents: &Agents,
    source: ProbabilitySource,
    config: &IfspConfig,
) -> Result<Processed, ExploreError> {
    let responses = sample_k(agents.target, &item.query, config.k)?;
    let judgments = responses
        .iter()
        .map(|r| judge(&item.query, r, agents.judge))
        .collect::<Result<Vec<_>, _>>()?;
    let h = entropy(&cluster(&responses, agents.oracle)?);
    let embedding = agents.embedder.embed(&item.query)?;
    let state = policy::state_features(&item.root, &item.query, h, config.omega, agents.embedder)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        &config.seed.to_le_bytes(),
        &(round as u64).to_le_bytes(),
        item.query.as_bytes(),
    ]));

    let mut children = Vec::new();
    let mut child_failures = Vec::new();
    if judgments.iter().any(|j| j.hallucinated) {
        let p = match source {
            ProbabilitySource::Config => config.probabilities,
            ProbabilitySource::RandomSimplex => simplex_point(&mut rng),
            ProbabilitySource::Policy(net) => policy::select_probabilities(net, &state.features)?,
        };
        let allowed = config.restrict_on_hallucination.as_deref();
        let mut per_kind: BTreeMap<TransformKind, usize> = BTreeMap::new();
        for _ in 0..config.branch_width {
            *per_kind.entry(draw_kind(&p, allowed, &mut rng)).or_default() += 1;
        }
        for (kind, count) in per_kind {
            match transform_children(&item.query, kind, count, agents.generator) {
                Ok(batch) => {
                    for child in batch {
                        match child {
                            Ok(q) => children.push((q, Some(kind))),
                            Err(e) => child_failures.push(e.to_string()),
                        }
                    }
                }
                Err(e) => child_failures.push(e.to_string()),
            }
        }
    } else {
        let turns = [ChatTurn::user(prompts::fresh(domain, &item.query))];
        match agents.generator.complete_n(&turns, config.branch_width) {
            Ok(batch) => children.extend(
                batch
                    .into_iter()
                    .map(|q| q.trim().to_string())
                    .filter(|q| !q.is_empty())
                    .map(|q| (q, None)),
            ),
            Err(e) => child_failures.push(e.to_string()),
        }
    }
    Ok(Processed {
        responses,
        judgments,
        entropy: h,
        embedding,
        features: state.features,
        children,
        child_failures,
    })
}

struct GammaCounter {
    window: Option<usize>,
    pairs: Vec<bool>,
    hallucinated: usize,
}

impl GammaCounter {
    fn push(&mut self, hallucinated: bool) {
        self.pairs.push(hallucinated);
        self.hallucinated += usize::from(hallucinated);
    }

    fn value(&self) -> f64 {
        match self.window {
            Some(w) if self.pairs.len() > w => {
                let tail = &self.pairs[self.pairs.len() - w..];
                hallucination_ratio(tail.iter().filter(|h| **h).count(), w)
            }
            _ => hallucination_ratio(self.hallucinated, self.pairs.len()),
        }
    }
}

/// Runs the exploration loop for `domain`, inserting boundary records
/// into `store`.
pub fn explore(
    domain: &str,
    agents: &Agents,
    store: &mut VectorStore,
    source: ProbabilitySource,
    config: &IfspConfig,
) -> Result<Exploration, ExploreError> {
    config.validate()?;
    if agents.embedder.dimension() != store.dimension() {
        return Err(StoreError::Dimension { got: agents.embedder.dimension(), want: store.dimension() }.into());
    }
    if let ProbabilitySource::Policy(net) = source {
        if net.input_len() != policy::FEATURE_LEN {
            return Err(PolicyError::Shape { got: policy::FEATURE_LEN, want: net.input_len() }.into());
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExploreError::Config(format!("worker pool: {e}")))?;

    let seeds = seed_queries(domain, config.seeds_per_domain, agents.generator)?;
    let mut visited: HashSet<String> = seeds.iter().cloned().collect();
    let mut frontier: Vec<FrontierItem> = seeds
        .into_iter()
        .map(|q| FrontierItem { root: q.clone(), query: q, via: None, parent: None, priority: 0.0 })
        .collect();

    let mut report = ExplorationReport {
        domain: domain.to_string(),
        boundary_count: 0,
        gamma_trajectory: Vec::new(),
        entropy_trajectory: Vec::new(),
        transform_usage: TransformUsage::default(),
        terminated_by: TerminatedBy::MaxIterations,
        iterations: 0,
        queries_processed: 0,
        low_confidence_pairs: 0,
        failed_branches: Vec::new(),
    };
    let mut events = Vec::new();
    let mut gamma = GammaCounter { window: config.gamma_window, pairs: Vec::new(), hallucinated: 0 };
    let mut step: u64 = 0;

    for round in 0..config.max_iterations {
        if let Some(budget) = config.query_budget {
            frontier.truncate(budget.saturating_sub(report.queries_processed));
        }
        if frontier.is_empty() {
            break;
        }
        let results: Vec<Result<Processed, ExploreError>> =
            pool.install(|| frontier.par_iter().map(|item| process(item, round, domain, agents, source, config)).collect());

        let mut children: Vec<FrontierItem> = Vec::new();
        let mut round_samples: Vec<(u64, PolicySample)> = Vec::new();
        for (item, result) in frontier.iter().zip(results) {
            let done = match result {
                Ok(done) => done,
                Err(e) => {
                    report.failed_branches.push(FailedBranch {
                        iteration: round as u64,
                        query: item.query.clone(),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let this_step = step;
            step += 1;
            report.queries_processed += 1;
            report.entropy_trajectory.push((this_step, done.entropy));
            for (response, j) in done.responses.iter().zip(&done.judgments) {
                gamma.push(j.hallucinated);
                report.low_confidence_pairs += usize::from(j.low_confidence());
                events.push(Event::Pair {
                    iteration: round as u64,
                    step: this_step,
                    query: item.query.clone(),
                    response: response.clone(),
                    hallucinated: j.hallucinated,
                    confidence: j.confidence,
                    gamma: gamma.value(),
                });
            }

            let sig = sig_product(&done.judgments);
            let (h_prev, r_prev) = item.parent.as_ref().map_or((0.0, INITIAL_REWARD), |p| (p.entropy, p.reward));
            let r = policy::reward(h_prev, done.entropy, sig, r_prev);
            if let (Some(kind), Some(parent)) = (item.via, &item.parent) {
                round_samples.push((
                    parent.step,
                    PolicySample {
                        query: item.query.clone(),
                        responses: done.responses.clone(),
                        h_prev,
                        h_cur: done.entropy,
                        sig_product: sig,
                        reward: r,
                        p_target: [0.0; 3],
                        state_features: parent.features.clone(),
                        transform: kind,
                    },
                ));
            }

            let record_id = if sig == 0 {
                let lineage = match (item.via, item.parent.as_ref().and_then(|p| p.record_id)) {
                    (Some(transform), Some(parent_id)) => Some(Lineage { parent_id, transform }),
                    _ => None,
                };
                let id = store.insert(BoundaryRecord {
                    id: 0,
                    domain: domain.to_string(),
                    query: item.query.clone(),
                    responses: done.responses.clone(),
                    semantic_entropy: done.entropy,
                    embedding: to_f32(&done.embedding),
                    hallucinated: true,
                    lineage,
                    iteration: round as u64,
                })?;
                report.boundary_count += 1;
                Some(id)
            } else {
                None
            };

            for error in done.child_failures {
                report.failed_branches.push(FailedBranch { iteration: round as u64, query: item.query.clone(), error });
            }
            let info = ParentInfo {
                step: this_step,
                record_id,
                entropy: done.entropy,
                reward: r,
                features: done.features,
            };
            for (query, via) in done.children {
                if !visited.insert(query.clone()) {
                    continue;
                }
                if let Some(kind) = via {
                    report.transform_usage.bump(kind);
                }
                children.push(FrontierItem {
                    query,
                    root: item.root.clone(),
                    via,
                    parent: Some(info.clone()),
                    priority: done.entropy,
                });
            }
        }

        // Sibling mean rewards per rewrite give the logged probability target.
        let mut sibling: BTreeMap<u64, ([f64; 3], [usize; 3])> = BTreeMap::new();
        for (parent, s) in &round_samples {
            let entry = sibling.entry(*parent).or_insert(([0.0; 3], [0; 3]));
            entry.0[s.transform.index()] += s.reward;
            entry.1[s.transform.index()] += 1;
        }
        for (parent, mut s) in round_samples {
            let (sums, counts) = sibling[&parent];
            let means = [0, 1, 2].map(|i| if counts[i] == 0 { policy::REWARD_FLOOR } else { sums[i] / counts[i] as f64 });
            s.p_target = probabilities_from_rewards(means);
            events.push(Event::Sample(s));
        }

        report.iterations = round + 1;
        let g = gamma.value();
        report.gamma_trajectory.push(g);
        if g > config.gamma_stop {
            report.terminated_by = TerminatedBy::Gamma;
            break;
        }
        // Stable sort keeps generation order among equal priorities.
        children.sort_by(|a, b| b.priority.total_cmp(&a.priority));
        children.truncate(config.frontier_limit);
        frontier = children;
    }
    tracing::info!(
        domain,
        boundary = report.boundary_count,
        queries = report.queries_processed,
        terminated_by = ?report.terminated_by,
        "exploration finished"
    );
    Ok(Exploration { report, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::EquivalenceOracle;
    use crate::gateway::{HashedEmbedder, Script, ScriptedBackend, SyntheticAgent, SyntheticGenerator, SyntheticJudge, SyntheticWorld};
    use std::sync::Arc;

    #[test]
    fn ratio_examples() {
        assert_eq!(hallucination_ratio(0, 0), 0.0);
        assert_eq!(hallucination_ratio(3, 4), 0.75);
    }

    #[test]
    fn running_gamma_matches_recompute() {
        let seq = [true, false, false, true, true, false, true, true, false, false];
        let mut g = GammaCounter { window: None, pairs: Vec::new(), hallucinated: 0 };
        for (i, h) in seq.iter().enumerate() {
            g.push(*h);
            let oracle = seq[..=i].iter().filter(|x| **x).count() as f64 / (i + 1) as f64;
            assert_eq!(g.value(), oracle);
        }
        let mut w = GammaCounter { window: Some(3), pairs: Vec::new(), hallucinated: 0 };
        seq.iter().for_each(|h| w.push(*h));
        assert_eq!(w.value(), 1.0 / 3.0);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TransformKind::ALL {
            assert_eq!(TransformKind::from_name(k.name()), Some(k));
        }
        assert_eq!(TransformKind::from_name("FT3"), Some(TransformKind::Induction));
        assert_eq!(TransformKind::from_name("metaphor"), None);
        assert_eq!(serde_json::to_string(&TransformKind::Analogy).unwrap(), "\"analogy\"");
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = IfspConfig::default();
        assert_eq!((c.k, c.gamma_stop, c.seeds_per_domain, c.branch_width), (5, 0.6, 10, 3));
        c.validate().unwrap();
        let bad = IfspConfig { probabilities: [0.5, 0.5, 0.1], ..IfspConfig::default() };
        assert!(bad.validate().is_err());
        let bad = IfspConfig { gamma_stop: 1.0, ..IfspConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn seed_reply(n: usize) -> String {
        (0..n).map(|i| format!("canned seed {i}?")).collect::<Vec<_>>().join("\n")
    }

    #[test]
    fn seeds_canned_and_regenerated() {
        let gen = ScriptedBackend::new(Script::default().rule("Task: seed", &[&seed_reply(10)]));
        assert_eq!(seed_queries("d", 10, &gen).unwrap(), (0..10).map(|i| format!("canned seed {i}?")).collect::<Vec<_>>());

        let dup = "a?\nb?\na?\nc?\nb?\nd?\ne?\nf?\ng?\nh?";
        let gen = ScriptedBackend::new(
            Script::default().rule("Task: seed && Attempt: 1", &["h?\ni?\nj?"]).rule("Task: seed", &[dup]),
        );
        let seeds = seed_queries("d", 10, &gen).unwrap();
        assert_eq!(seeds.len(), 10);
        assert_eq!(seeds.iter().collect::<HashSet<_>>().len(), 10);

        let stuck = ScriptedBackend::new(Script::default().with_default(&["same?\nsame?"]));
        assert!(matches!(seed_queries("d", 3, &stuck), Err(ExploreError::TooFewSeeds { got: 1, want: 3 })));
        assert!(matches!(seed_queries("d", 0, &stuck), Err(ExploreError::Config(_))));
    }

    #[test]
    fn transforms_dispatch_and_reject_echoes() {
        let parent = "Did humans really land on the moon in 1969?";
        let gen = ScriptedBackend::new(
            Script::default()
                .rule("Transformation: deduction", &["Which astronauts walked on the moon during Apollo 11?"])
                .rule("Transformation: analogy", &["Did humans really reach the bottom of the Mariana Trench?"])
                .rule("Transformation: induction", &["How do societies verify claims of historic achievements?"]),
        );
        let kids: HashSet<String> = TransformKind::ALL
            .iter()
            .map(|k| transform_query(parent, *k, &gen).unwrap())
            .collect();
        assert_eq!(kids.len(), 3);
        assert!(!kids.contains(parent));
        assert_eq!(
            transform_query(parent, TransformKind::Deduction, &gen).unwrap(),
            "Which astronauts walked on the moon during Apollo 11?"
        );

        let echo = ScriptedBackend::new(Script::default().with_default(&[parent]));
        assert!(matches!(transform_query(parent, TransformKind::Analogy, &echo), Err(ExploreError::Degenerate(_))));

        let second_try = ScriptedBackend::new(
            Script::default().rule("Attempt: 1", &["a new question?"]).rule("Transformation: analogy", &[parent]),
        );
        assert_eq!(transform_query(parent, TransformKind::Analogy, &second_try).unwrap(), "a new question?");
    }

    fn scripted_agents_run(target_reply: &str, judge_reply: &str, config: &IfspConfig) -> (Exploration, VectorStore) {
        let fresh: Vec<String> = (0..400).map(|i| format!("fresh question {i}?")).collect();
        let fresh: Vec<&str> = fresh.iter().map(String::as_str).collect();
        let generator = ScriptedBackend::new(
            Script::default()
                .rule("Task: seed", &[&seed_reply(10)])
                .rule("Task: transform", &["rewritten a?", "rewritten b?", "rewritten c?", "rewritten d?"])
                .rule("Task: fresh", &fresh),
        );
        let target = ScriptedBackend::new(Script::default().with_default(&[target_reply]));
        let judge_backend = ScriptedBackend::new(Script::default().with_default(&[judge_reply]));
        let oracle = EquivalenceOracle::exact_match();
        let embedder = HashedEmbedder::new(16);
        let agents = Agents {
            target: &target,
            generator: &generator,
            judge: &judge_backend,
            oracle: &oracle,
            embedder: &embedder,
        };
        let mut store = VectorStore::new(16);
        let run = explore("trivia", &agents, &mut store, ProbabilitySource::Config, config).unwrap();
        (run, store)
    }

    #[test]
    fn all_seeds_hallucinate() {
        let config = IfspConfig { max_iterations: 5, workers: 1, ..IfspConfig::default() };
        let (run, store) = scripted_agents_run("made up", "verdict: yes, confidence: 90", &config);
        let r = &run.report;
        assert_eq!(r.terminated_by, TerminatedBy::Gamma);
        assert_eq!(r.gamma_trajectory, vec![1.0]);
        assert_eq!(r.boundary_count, 10);
        assert_eq!(store.len(), 10);
        assert!(store.records().iter().all(|rec| rec.hallucinated && rec.responses.len() == 5));
        assert!(store.records().iter().all(|rec| rec.lineage.is_none()));
    }

    #[test]
    fn no_hallucinations_runs_out_of_iterations() {
        let config = IfspConfig { max_iterations: 3, workers: 1, ..IfspConfig::default() };
        let (run, store) = scripted_agents_run("fine", "verdict: no, confidence: 90", &config);
        assert_eq!(run.report.terminated_by, TerminatedBy::MaxIterations);
        assert_eq!(run.report.boundary_count, 0);
        assert!(store.is_empty());
        assert_eq!(run.report.gamma_trajectory, vec![0.0; 3]);
        assert_eq!(run.samples().count(), 0);
    }

    #[test]
    fn judge_failure_fails_the_branch_only() {
        let config = IfspConfig { max_iterations: 2, workers: 1, ..IfspConfig::default() };
        let (run, _) = scripted_agents_run("fine", "no idea", &config);
        assert_eq!(run.report.failed_branches.len(), 10);
        assert_eq!(run.report.queries_processed, 0);
        assert_eq!(run.report.terminated_by, TerminatedBy::MaxIterations);
    }

    fn synthetic_run(config: &IfspConfig, source: ProbabilitySource) -> (Exploration, VectorStore, Arc<SyntheticWorld>) {
        let world = Arc::new(SyntheticWorld::reference());
        let target = SyntheticAgent::new(world.clone(), 1);
        let generator = SyntheticGenerator::new(world.clone(), 2);
        let judge_backend = SyntheticJudge;
        let oracle = EquivalenceOracle::exact_match();
        let agents = Agents {
            target: &target,
            generator: &generator,
            judge: &judge_backend,
            oracle: &oracle,
            embedder: world.embedder(),
        };
        let mut store = VectorStore::new(world.dimension);
        let run = explore("synthetic", &agents, &mut store, source, config).unwrap();
        (run, store, world)
    }

    fn synthetic_config() -> IfspConfig {
        IfspConfig { max_iterations: 8, query_budget: Some(300), seed: 5, ..IfspConfig::default() }
    }

    #[test]
    fn synthetic_boundary_sits_just_outside_competence() {
        let (run, store, world) = synthetic_run(&synthetic_config(), ProbabilitySource::Config);
        assert!(run.report.boundary_count > 0);
        let mean: f64 = store
            .records()
            .iter()
            .map(|r| world.nearest(&r.embedding.iter().map(|x| f64::from(*x)).collect::<Vec<_>>()).1)
            .sum::<f64>()
            / store.len() as f64;
        let radius = world.radii[0];
        assert!(mean > radius && mean < radius + 0.35, "mean distance {mean}");
    }

    #[test]
    fn report_invariants_hold() {
        let (run, store, _) = synthetic_run(&synthetic_config(), ProbabilitySource::RandomSimplex);
        let r = &run.report;
        assert!(r.gamma_trajectory.iter().all(|g| (0.0..=1.0).contains(g)));
        if r.terminated_by == TerminatedBy::Gamma {
            assert!(*r.gamma_trajectory.last().unwrap() >= 0.6);
        }
        assert!(r.queries_processed <= 300);
        // Per-round gamma equals a recount over the pair log.
        let mut per_round: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        let (mut h, mut t) = (0, 0);
        for e in &run.events {
            if let Event::Pair { iteration, hallucinated, gamma, .. } = e {
                h += usize::from(*hallucinated);
                t += 1;
                assert_eq!(*gamma, hallucination_ratio(h, t));
                per_round.insert(*iteration, (h, t));
            }
        }
        let recount: Vec<f64> = per_round.values().map(|(h, t)| hallucination_ratio(*h, *t)).collect();
        assert_eq!(recount, r.gamma_trajectory);
        // Lineage is a forest rooted at stored records.
        for rec in store.records() {
            assert!(rec.hallucinated && rec.responses.len() == 5);
            let mut cur = rec;
            let mut hops = 0;
            while let Some(l) = &cur.lineage {
                assert!(l.parent_id < cur.id);
                cur = store.get(l.parent_id).expect("parent stored");
                hops += 1;
                assert!(hops <= store.len());
            }
        }
        for s in run.samples() {
            assert!((s.p_target.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(s.reward.is_finite());
        }
    }

    #[test]
    fn seeded_runs_are_identical_across_worker_counts() {
        let one = IfspConfig { workers: 1, ..synthetic_config() };
        let many = IfspConfig { workers: 4, ..synthetic_config() };
        let (a, sa, _) = synthetic_run(&one, ProbabilitySource::Config);
        let (b, sb, _) = synthetic_run(&many, ProbabilitySource::Config);
        assert_eq!(a.report, b.report);
        assert_eq!(a.events, b.events);
        assert_eq!(sa.to_bytes(), sb.to_bytes());
    }

    #[test]
    fn restriction_limits_rewrites() {
        let config = IfspConfig {
            restrict_on_hallucination: Some(vec![TransformKind::Deduction, TransformKind::Analogy]),
            ..synthetic_config()
        };
        let (run, _, _) = synthetic_run(&config, ProbabilitySource::Config);
        assert_eq!(run.report.transform_usage.induction, 0);
        assert!(run.report.transform_usage.total() > 0);
    }

    #[test]
    fn event_log_round_trips() {
        let (run, _, _) = synthetic_run(&IfspConfig { query_budget: Some(60), ..synthetic_config() }, ProbabilitySource::Config);
        for e in &run.events {
            let line = serde_json::to_string(e).unwrap();
            assert_eq!(&serde_json::from_str::<Event>(&line).unwrap(), e);
        }
    }
}
