//! Synthetic-world benchmark, ablation sweeps and the convergence experiment.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ingest::QaItem;
use super::metrics::{auc_pr, auroc, f1_accuracy};
use crate::entropy::EquivalenceOracle;
use crate::evaluator::gqa_label;
use crate::explorer::{explore, Agents, ExploreError, IfspConfig, ProbabilitySource};
use crate::gateway::{complete, ChatBackend, ChatTurn, GatewayError, SyntheticAgent, SyntheticGenerator, SyntheticJudge, SyntheticWorld};
use crate::monitor::{score, Monitor, MonitorConfig, MonitorError};
use crate::policy::{train, PolicyError, TrainConfig, ValueNetwork};
use crate::store::VectorStore;
use crate::text::mix_seed;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_domain")]
    pub domain: String,
    /// Runs in a convergence experiment.
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Trailing exploration steps averaged by the convergence experiment.
    #[serde(default = "default_tail")]
    pub tail: usize,
}

fn default_eval() -> usize {
    400
}
fn default_domain() -> String {
    "synthetic".into()
}
fn default_runs() -> usize {
    10
}
fn default_tail() -> usize {
    30
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { n_eval: default_eval(), seed: 0, domain: default_domain(), runs: default_runs(), tail: default_tail() }
    }
}

/// Exploration settings of the reference benchmark: a 500-query budget.
pub fn reference_explore_config() -> IfspConfig {
    IfspConfig { query_budget: Some(500), ..IfspConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: QaItem,
    pub monitor_score: f64,
    pub flagged: bool,
    /// True when hallucinated.
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub positives: usize,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub f1: f64,
    pub accuracy: f64,
}

pub fn metrics(scored: &[ScoredItem]) -> Metrics {
    let scores: Vec<f64> = scored.iter().map(|s| s.monitor_score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    let predictions: Vec<bool> = scored.iter().map(|s| s.flagged).collect();
    let (f1, accuracy) = f1_accuracy(&predictions, &labels).expect("equal lengths");
    Metrics {
        n: scored.len(),
        positives: labels.iter().filter(|l| **l).count(),
        auroc: auroc(&scores, &labels).ok(),
        auc_pr: auc_pr(&scores, &labels).ok(),
        f1,
        accuracy,
    }
}

/// Ground truth for one evaluation item.
pub trait Labeler: Sync {
    fn hallucinated(&self, item: &QaItem) -> Result<bool, BenchError>;
}

/// Labels from the world's competence predicate.
pub struct WorldLabeler<'a>(pub &'a SyntheticWorld);

impl Labeler for WorldLabeler<'_> {
    fn hallucinated(&self, item: &QaItem) -> Result<bool, BenchError> {
        Ok(self.0.hallucinates(&item.question)?)
    }
}

/// Labels from comparing the target's answer with the reference answer.
pub struct GqaLabeler<'a>(pub &'a dyn ChatBackend);

impl Labeler for GqaLabeler<'_> {
    fn hallucinated(&self, item: &QaItem) -> Result<bool, BenchError> {
        let answer = complete(self.0, &[ChatTurn::user(item.question.clone())])?;
        Ok(gqa_label(&answer, &item.reference_answer).hallucinated)
    }
}

/// Monitors and labels every item. Both dataset and synthetic pipelines go
/// through here and differ only in the labeler.
pub fn evaluate_items(items: &[QaItem], monitor: &Monitor, labeler: &dyn Labeler) -> Result<Vec<ScoredItem>, BenchError> {
    let queries: Vec<(String, Option<String>)> = items.iter().map(|i| (i.question.clone(), Some(i.domain.clone()))).collect();
    let verdicts = monitor.check_batch(&queries);
    items
        .par_iter()
        .zip(verdicts)
        .map(|(item, verdict)| {
            let verdict = verdict?;
            Ok(ScoredItem {
                item: item.clone(),
                monitor_score: score(&verdict, monitor.config),
                flagged: verdict.flagged,
                label: labeler.hallucinated(item)?,
            })
        })
        .collect()
}

/// Half in-competence and half out-of-competence queries from the world's
/// evaluation distribution. Gives up on a class after `200 * n` draws.
pub fn stratified_eval(world: &SyntheticWorld, n: usize, domain: &str, seed: u64) -> Result<Vec<QaItem>, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want_out = n / 2;
    let want_in = n - want_out;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for _ in 0..200 * n.max(1) {
        if inside.len() == want_in && outside.len() == want_out {
            break;
        }
        let q = world.eval_query(&mut rng)?;
        if world.hallucinates(&q)? {
            if outside.len() < want_out {
                outside.push(q);
            }
        } else if inside.len() < want_in {
            inside.push(q);
        }
    }
    Ok(inside
        .into_iter()
        .chain(outside)
        .enumerate()
        .map(|(i, q)| QaItem {
            id: format!("eval-{i}"),
            domain: domain.to_string(),
            reference_answer: crate::gateway::faithful_answer(&q),
            question: q,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub boundary_count: usize,
    pub queries_explored: usize,
    pub monitor: Metrics,
    /// Same items scored by signed distance past the nearest ball edge.
    pub oracle_auroc: Option<f64>,
    pub entropy_trajectory: Vec<(u64, f64)>,
    pub gamma_trajectory: Vec<f64>,
    pub warnings: Vec<String>,
}

fn backend_seed(seed: u64, role: &str) -> u64 {
    mix_seed(&[&seed.to_le_bytes(), role.as_bytes()])
}

/// Explores the world into a fresh store, then monitors a stratified draw.
pub fn run_benchmark(
    world: &Arc<SyntheticWorld>,
    explore_config: &IfspConfig,
    monitor_config: &MonitorConfig,
    bench: &BenchmarkConfig,
    policy: Option<&ValueNetwork>,
) -> Result<BenchmarkReport, BenchError> {
    monitor_config.validate()?;
    let seed = bench.seed;
    let target = SyntheticAgent::new(world.clone(), backend_seed(seed, "target"));
    let generator = SyntheticGenerator::new(world.clone(), backend_seed(seed, "generator"));
    let judge = SyntheticJudge;
    let oracle = EquivalenceOracle::exact_match();
    let agents = Agents { target: &target, generator: &generator, judge: &judge, oracle: &oracle, embedder: world.embedder() };
    let mut store = VectorStore::new(world.dimension);
    let explore_config = IfspConfig { seed, ..explore_config.clone() };
    let source = policy.map_or(ProbabilitySource::Config, ProbabilitySource::Policy);
    let run = explore(&bench.domain, &agents, &mut store, source, &explore_config)?;

    let mut warnings = Vec::new();
    if store.is_empty() {
        warnings.push("exploration produced an empty store; every query passes unchecked".to_string());
    }
    let items = stratified_eval(world, bench.n_eval, &bench.domain, backend_seed(seed, "eval"))?;
    if items.len() < bench.n_eval {
        warnings.push(format!("only {} of {} evaluation queries could be drawn", items.len(), bench.n_eval));
    }
    let monitor = Monitor { store: &store, target: &target, oracle: &oracle, embedder: world.embedder(), config: monitor_config };
    let scored = evaluate_items(&items, &monitor, &WorldLabeler(world))?;
    let m = metrics(&scored);
    if m.auroc.is_none() {
        warnings.push("evaluation draw holds a single class; AUROC undefined".to_string());
    }
    let oracle_scores: Vec<f64> = items
        .iter()
        .map(|i| world.embed(&i.question).map(|v| world.boundary_margin(&v)))
        .collect::<Result<_, _>>()?;
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(BenchmarkReport {
        seed,
        boundary_count: run.report.boundary_count,
        queries_explored: run.report.queries_processed,
        monitor: m,
        oracle_auroc: auroc(&oracle_scores, &labels).ok(),
        entropy_trajectory: run.report.entropy_trajectory,
        gamma_trajectory: run.report.gamma_trajectory,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    GammaStop,
    EpsilonSim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: Option<f64>,
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

/// One benchmark per value with shared seeds. Failed cells are reported in
/// their row and the sweep carries on.
pub fn sweep(
    world: &Arc<SyntheticWorld>,
    parameter: SweepParameter,
    values: &[f64],
    explore_config: &IfspConfig,
    monitor_config: &MonitorConfig,
    bench: &BenchmarkConfig,
) -> Result<Vec<SweepRow>, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Config("sweep needs at least one value".into()));
    }
    Ok(values
        .par_iter()
        .map(|&value| {
            let mut e = explore_config.clone();
            let mut m = monitor_config.clone();
            match parameter {
                SweepParameter::GammaStop => e.gamma_stop = value,
                SweepParameter::EpsilonSim => m.epsilon_sim = value,
            }
            match run_benchmark(world, &e, &m, bench, None) {
                Ok(r) => SweepRow { value, accuracy: Some(r.monitor.accuracy), auroc: r.monitor.auroc, error: None },
                Err(err) => SweepRow { value, accuracy: None, auroc: None, error: Some(err.to_string()) },
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub seed: u64,
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub reinforced_tail_entropy: f64,
    pub random_tail_entropy: f64,
    pub reinforced_trajectory: Vec<(u64, f64)>,
    pub random_trajectory: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub runs: Vec<ConvergenceRun>,
    /// Runs where the reinforced tail entropy is strictly higher.
    pub reinforced_wins: usize,
}

/// Exploration settings of the convergence experiment. Gamma is set out of
/// reach so every run spends the whole budget.
pub fn convergence_explore_config() -> IfspConfig {
    IfspConfig { query_budget: Some(300), gamma_stop: 0.99, max_iterations: 100, ..IfspConfig::default() }
}

pub fn tail_mean(trajectory: &[(u64, f64)], tail: usize) -> f64 {
    let start = trajectory.len().saturating_sub(tail);
    let slice = &trajectory[start..];
    if slice.is_empty() {
        return 0.0;
    }
    slice.iter().map(|(_, h)| h).sum::<f64>() / slice.len() as f64
}

/// Per seed: a uniform-random warm-up run collects policy samples, a value
/// network is trained on them, and then a policy-driven run and a
/// uniform-random run are compared on their trailing mean entropy.
pub fn convergence_experiment(
    world: &Arc<SyntheticWorld>,
    explore_config: &IfspConfig,
    train_config: &TrainConfig,
    bench: &BenchmarkConfig,
) -> Result<ConvergenceReport, BenchError> {
    let runs = (0..bench.runs as u64)
        .into_par_iter()
        .map(|i| convergence_run(world, explore_config, train_config, bench, bench.seed + i))
        .collect::<Result<Vec<_>, _>>()?;
    let reinforced_wins = runs.iter().filter(|r| r.reinforced_tail_entropy > r.random_tail_entropy).count();
    Ok(ConvergenceReport { runs, reinforced_wins })
}

fn convergence_run(
    world: &Arc<SyntheticWorld>,
    explore_config: &IfspConfig,
    train_config: &TrainConfig,
    bench: &BenchmarkConfig,
    seed: u64,
) -> Result<ConvergenceRun, BenchError> {
    let target = SyntheticAgent::new(world.clone(), backend_seed(seed, "target"));
    let generator = SyntheticGenerator::new(world.clone(), backend_seed(seed, "generator"));
    let judge = SyntheticJudge;
    let oracle = EquivalenceOracle::exact_match();
    let agents = Agents { target: &target, generator: &generator, judge: &judge, oracle: &oracle, embedder: world.embedder() };
    let run_with = |source: ProbabilitySource, run_seed: u64| {
        let mut store = VectorStore::new(world.dimension);
        let config = IfspConfig { seed: run_seed, workers: 1, ..explore_config.clone() };
        explore(&bench.domain, &agents, &mut store, source, &config)
    };

    let warmup = run_with(ProbabilitySource::RandomSimplex, backend_seed(seed, "warmup"))?;
    let samples: Vec<_> = warmup.samples().cloned().collect();
    let train_config = TrainConfig { rng_seed: seed, ..train_config.clone() };
    let (net, curve) = train(&samples, &train_config)?;

    let run_seed = backend_seed(seed, "compare");
    let reinforced = run_with(ProbabilitySource::Policy(&net), run_seed)?;
    let random = run_with(ProbabilitySource::RandomSimplex, run_seed)?;
    Ok(ConvergenceRun {
        seed,
        samples: samples.len(),
        initial_loss: curve.first().copied().unwrap_or(f64::NAN),
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
        reinforced_tail_entropy: tail_mean(&reinforced.report.entropy_trajectory, bench.tail),
        random_tail_entropy: tail_mean(&random.report.entropy_trajectory, bench.tail),
        reinforced_trajectory: reinforced.report.entropy_trajectory,
        random_trajectory: random.report.entropy_trajectory,
    })
}

/// Two-column `step entropy` plot data.
pub fn write_trajectory(trajectory: &[(u64, f64)], mut out: impl Write) -> std::io::Result<()> {
    for (step, h) in trajectory {
        writeln!(out, "{step}\t{h:.6}")?;
    }
    Ok(())
}
