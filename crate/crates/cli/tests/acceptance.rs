//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a result differs from the expectation recorded below.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use halmit_core::entropy::{entropy_of_sizes, EquivalenceOracle};
use halmit_core::explorer::{explore, Agents, ProbabilitySource};
use halmit_core::gateway::{
    last_user, ChatBackend, ChatTurn, Embedder, GatewayError, ScriptedBackend, SyntheticAgent, SyntheticGenerator,
    SyntheticJudge,
};
use halmit_core::harness::benchmark::{
    convergence_explore_config, evaluate_items, reference_explore_config, stratified_eval, GqaLabeler,
};
use halmit_core::harness::{auc_pr, auroc, convergence_experiment, run_benchmark, sweep, BenchmarkConfig, QaItem, SweepParameter};
use halmit_core::monitor::{weighted_centroid, Monitor, MonitorConfig, Reason};
use halmit_core::policy::{probabilities_from_rewards, reward, synthetic_dataset, train, ValueNetwork, FEATURE_LEN};
use halmit_core::evaluator::gqa_label;
use halmit_core::{BoundaryRecord, IfspConfig, SyntheticWorld, TrainConfig, VectorStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail on the reference world. See the README.
const EXPECTED_FAILURES: &[usize] = &[6];

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// 1. Formula exactness.
fn formulas() -> Outcome {
    let h = entropy_of_sizes(&[3, 2]);
    if !close(h, 0.6730, 1e-4) {
        return Err(format!("entropy {{3,2}} = {h}"));
    }
    let p = probabilities_from_rewards([1.0, 1.0, 2.0]);
    if p != [0.25, 0.25, 0.5] {
        return Err(format!("probabilities (1,1,2) = {p:?}"));
    }
    let rewards = [reward(1.2, 1.5, 1, 7.0), reward(0.4, 0.9, 0, 2.0), reward(0.4, 0.9, 0, 0.0)];
    if !close(rewards[0], 0.3, 1e-12) || rewards[1] != 0.5 || !close(rewards[2], 1000.0, 1e-9) {
        return Err(format!("rewards {rewards:?}"));
    }
    let c = weighted_centroid(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]], &[1.0, 1.0, 2.0]).map_err(|e| e.to_string())?;
    ensure(
        close(c[0], 0.9487, 1e-4) && close(c[1], 0.3162, 1e-4),
        format!("H{{3,2}}={h:.6}, p=(0.25,0.25,0.5), rewards {rewards:?}, centroid ({:.4}, {:.4})", c[0], c[1]),
    )
}

/// Fixed vectors per query text.
struct TableEmbedder {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Embedder for TableEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.vectors.get(text).cloned().ok_or_else(|| GatewayError::Malformed(format!("no vector for {text}")))
    }
}

/// Fixed response lists per query text.
struct TableTarget(HashMap<String, Vec<String>>);

impl ChatBackend for TableTarget {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        let replies = self.0.get(last_user(turns)).ok_or_else(|| GatewayError::Malformed("unknown query".into()))?;
        Ok(replies.iter().take(n).cloned().collect())
    }

    fn name(&self) -> &str {
        "table"
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
            return unit(v);
        }
    }
}

fn plain_entropy(responses: &[String]) -> f64 {
    let mut seen: Vec<(&String, usize)> = Vec::new();
    for r in responses {
        match seen.iter_mut().find(|(s, _)| *s == r) {
            Some(slot) => slot.1 += 1,
            None => seen.push((r, 1)),
        }
    }
    let k = responses.len() as f64;
    let h: f64 = seen.iter().map(|&(_, n)| n as f64 / k).map(|p| -p * p.ln()).sum();
    h.clamp(0.0, k.ln())
}

/// Straight-line reading of the monitoring algorithm.
fn reference_reason(
    q: &[f64],
    records: &[(u64, Vec<f32>, f64)],
    eps: f64,
    k_retrieve: usize,
    query_responses: &[String],
) -> Reason {
    if records.is_empty() {
        return Reason::EmptyStore;
    }
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, u64, usize)> = Vec::new();
    for (i, (id, e, _)) in records.iter().enumerate() {
        let en = e.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
        let dot: f64 = q.iter().zip(e).map(|(a, b)| a * f64::from(*b)).sum();
        scored.push(((dot / (qn * en)).clamp(-1.0, 1.0), *id, i));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k_retrieve);
    let max_h = scored.iter().map(|s| records[s.2].2).fold(f64::NEG_INFINITY, f64::max);
    if scored.iter().filter(|s| s.0 > eps).count() >= 3 {
        let total: f64 = scored[..3].iter().map(|s| s.0).sum();
        let mut c = vec![0.0; q.len()];
        for s in &scored[..3] {
            for (j, x) in records[s.2].1.iter().enumerate() {
                c[j] += s.0 * f64::from(*x) / total;
            }
        }
        let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s_c = q.iter().zip(&c).map(|(a, b)| a * b / cn).sum::<f64>() / qn;
        if s_c >= eps {
            return Reason::CentroidProximity;
        }
    }
    if plain_entropy(query_responses) > max_h {
        Reason::EntropyExceeds
    } else {
        Reason::WithinBound
    }
}

// 2. Monitor against the straight-line reference.
fn monitor_oracle() -> Outcome {
    const D: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let patterns: [&[usize]; 6] = [&[0, 0, 0, 0, 0], &[0, 0, 0, 1, 1], &[0, 1, 0, 1, 2], &[0, 1, 2, 3, 4], &[0, 0, 1, 0, 0], &[0, 1, 1, 2, 2]];
    let pattern_entropy = |p: &[usize]| plain_entropy(&p.iter().map(|i| format!("r{i}")).collect::<Vec<_>>());
    let mut tally: HashMap<String, usize> = HashMap::new();
    for case in 0..1000 {
        let eps = [0.6, 0.7, 0.8, 0.9][case % 4];
        let q = random_unit(&mut rng, D);
        let n = rng.random_range(0..=10);
        let mut store = VectorStore::new(D);
        let mut records = Vec::new();
        for _ in 0..n {
            let v = if !records.is_empty() && rng.random_bool(0.15) {
                let (_, prev, _): &(u64, Vec<f32>, f64) = &records[rng.random_range(0..records.len())];
                prev.iter().map(|x| f64::from(*x)).collect()
            } else {
                let noise = random_unit(&mut rng, D);
                let spread = rng.random_range(0.0..1.5);
                unit(q.iter().zip(&noise).map(|(a, b)| a + spread * b).collect())
            };
            let h = if rng.random_bool(0.5) {
                pattern_entropy(patterns[rng.random_range(0..patterns.len())])
            } else {
                rng.random_range(0.0..5f64.ln())
            };
            let embedding: Vec<f32> = v.iter().map(|x| *x as f32).collect();
            let id = store
                .insert(BoundaryRecord {
                    id: 0,
                    domain: "d".into(),
                    query: format!("record {}", records.len()),
                    responses: Vec::new(),
                    semantic_entropy: h,
                    embedding: embedding.clone(),
                    hallucinated: true,
                    lineage: None,
                    iteration: 0,
                })
                .map_err(|e| format!("case {case}: {e}"))?;
            records.push((id, embedding, h));
        }
        let responses: Vec<String> =
            patterns[rng.random_range(0..patterns.len())].iter().map(|i| format!("r{i}")).collect();
        let embedder = TableEmbedder { dimension: D, vectors: HashMap::from([("query".to_string(), q.clone())]) };
        let target = TableTarget(HashMap::from([("query".to_string(), responses.clone())]));
        let oracle = EquivalenceOracle::exact_match();
        let config = MonitorConfig { epsilon_sim: eps, ..MonitorConfig::default() };
        let monitor = Monitor { store: &store, target: &target, oracle: &oracle, embedder: &embedder, config: &config };
        let verdict = monitor.check("query", None).map_err(|e| format!("case {case}: {e}"))?;
        let want = reference_reason(&q, &records, eps, config.k_retrieve, &responses);
        if verdict.reason != want || verdict.flagged != matches!(want, Reason::CentroidProximity | Reason::EntropyExceeds) {
            return Err(format!("case {case}: got {:?}, reference {want:?}", verdict.reason));
        }
        *tally.entry(format!("{want:?}")).or_default() += 1;
    }
    let mut tally: Vec<_> = tally.into_iter().collect();
    tally.sort();
    Ok(format!("1000/1000 agree; reasons {tally:?}"))
}

fn pair_count_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Walks the precision/recall curve one ranked item at a time and sums
/// precision times the recall step.
fn curve_auc_pr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let at = order.iter().position(|&j| scores[j] < scores[i]).unwrap_or(order.len());
        order.insert(at, i);
    }
    let positives = labels.iter().filter(|l| **l).count() as f64;
    let (mut tp, mut recall, mut area) = (0.0, 0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1.0;
        }
        let r = tp / positives;
        area += (tp / (rank + 1) as f64) * (r - recall);
        recall = r;
    }
    area
}

// 3. Metric oracles.
fn metric_oracles() -> Outcome {
    let example = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    if example != 0.75 {
        return Err(format!("worked example gives {example}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let a = auroc(&scores, &labels).map_err(|e| format!("case {case}: {e}"))?;
        let p = auc_pr(&scores, &labels).map_err(|e| format!("case {case}: {e}"))?;
        let da = (a - pair_count_auroc(&scores, &labels)).abs();
        let dp = (p - curve_auc_pr(&scores, &labels)).abs();
        worst = worst.max(da).max(dp);
        if da > 1e-12 || dp > 1e-12 {
            return Err(format!("case {case}: auroc off by {da:e}, auc_pr off by {dp:e}"));
        }
    }
    Ok(format!("worked example 0.75; 500 instances, worst deviation {worst:e}"))
}

// 4. Analytic gradients against central differences. Relative error is
// taken over the whole gradient vector of each parameterization.
fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut worst_element): (f64, f64) = (0.0, 0.0);
    for trial in 0..20 {
        let net = ValueNetwork::new(FEATURE_LEN, 1000 + trial);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..FEATURE_LEN).map(|_| rng.random_range(0.0..1.5)).collect()).collect();
        let batch: Vec<(&[f64], usize, f64)> =
            xs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 3, rng.random_range(-2.0..2.0))).collect();
        let (_, grad) = net.loss_and_grad(&batch).map_err(|e| e.to_string())?;
        let base = net.params();
        let mut probe = net.clone();
        let step = 1e-5;
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + step;
            probe.set_params(&p);
            let plus = probe.loss_and_grad(&batch).map_err(|e| e.to_string())?.0;
            p[i] = base[i] - step;
            probe.set_params(&p);
            let minus = probe.loss_and_grad(&batch).map_err(|e| e.to_string())?.0;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut grad.iter().zip(&numeric).map(|(a, n)| a - n));
        worst = worst.max(diff / norm(&mut grad.iter().copied()).max(norm(&mut numeric.iter().copied())));
        for (a, n) in grad.iter().zip(&numeric) {
            worst_element = worst_element.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
    }
    ensure(
        worst < 1e-4,
        format!("20 nets, worst relative error {worst:.3e} (worst single component {worst_element:.3e})"),
    )
}

// 5. Training on the synthetic policy dataset.
fn training() -> Outcome {
    let data = synthetic_dataset(1024, 5);
    let config = TrainConfig::default();
    let (net, curve) = train(&data, &config).map_err(|e| e.to_string())?;
    let (again, _) = train(&data, &config).map_err(|e| e.to_string())?;
    let (first, last) = (curve[0], *curve.last().unwrap());
    let drop = 1.0 - last / first;
    ensure(
        curve.len() == 300 && drop >= 0.5 && net.to_bytes() == again.to_bytes(),
        format!("lr {} batch {}: loss {first:.5} -> {last:.5} ({:.1}% drop) in {} epochs, rerun identical", config.learning_rate, config.batch_size, drop * 100.0, curve.len()),
    )
}

// 6. Reinforced versus random probabilities.
fn convergence(world: &Arc<SyntheticWorld>) -> Outcome {
    let report = convergence_experiment(world, &convergence_explore_config(), &TrainConfig::default(), &BenchmarkConfig::default())
        .map_err(|e| e.to_string())?;
    let detail: Vec<String> = report
        .runs
        .iter()
        .map(|r| format!("{}:{:.3}/{:.3}", r.seed, r.reinforced_tail_entropy, r.random_tail_entropy))
        .collect();
    ensure(
        report.reinforced_wins >= 8,
        format!("reinforced ahead in {}/10 (seed:reinforced/random {})", report.reinforced_wins, detail.join(" ")),
    )
}

// 7. Reference benchmark.
fn benchmark(world: &Arc<SyntheticWorld>) -> Outcome {
    let start = Instant::now();
    let report = run_benchmark(world, &reference_explore_config(), &MonitorConfig::default(), &BenchmarkConfig::default(), None)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let a = report.monitor.auroc.unwrap_or(0.0);
    let o = report.oracle_auroc.unwrap_or(0.0);
    ensure(
        a >= 0.90 && o >= 0.99 && elapsed < Duration::from_secs(120),
        format!("monitor auroc {a:.4}, oracle auroc {o:.4}, {} boundary records, {:.2}s", report.boundary_count, elapsed.as_secs_f64()),
    )
}

// 8. Sweeps.
fn ablation(world: &Arc<SyntheticWorld>) -> Outcome {
    let explore = reference_explore_config();
    let monitor = MonitorConfig::default();
    let bench = BenchmarkConfig::default();
    let accuracies = |param, values: &[f64]| -> Result<Vec<f64>, String> {
        sweep(world, param, values, &explore, &monitor, &bench)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| r.accuracy.ok_or_else(|| r.error.unwrap_or_default()))
            .collect()
    };
    let gammas = accuracies(SweepParameter::GammaStop, &[0.35, 0.45, 0.55, 0.65])?;
    let eps = accuracies(SweepParameter::EpsilonSim, &[0.6, 0.7, 0.8, 0.9])?;
    let spread = gammas.iter().cloned().fold(f64::MIN, f64::max) - gammas.iter().cloned().fold(f64::MAX, f64::min);
    let best = eps.iter().all(|a| *a <= eps[2]);
    ensure(spread <= 0.10 && best, format!("gamma accuracies {gammas:?} (spread {spread:.4}); epsilon accuracies {eps:?}"))
}

fn spawn_check(config: &std::path::Path, query: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_halmit"))
        .args(["check", "--config", config.to_str().unwrap(), "--domain", "synthetic", query])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

// 9. Determinism, persistence and service parity.
fn determinism(world: &Arc<SyntheticWorld>) -> Outcome {
    let run = || {
        let target = SyntheticAgent::new(world.clone(), 1);
        let generator = SyntheticGenerator::new(world.clone(), 2);
        let oracle = EquivalenceOracle::exact_match();
        let agents = Agents { target: &target, generator: &generator, judge: &SyntheticJudge, oracle: &oracle, embedder: world.embedder() };
        let mut store = VectorStore::new(world.dimension);
        let config = IfspConfig { seed: 9, ..reference_explore_config() };
        explore("synthetic", &agents, &mut store, ProbabilitySource::Config, &config).map(|_| store)
    };
    let a = run().map_err(|e| e.to_string())?;
    let b = run().map_err(|e| e.to_string())?;
    if a.to_bytes() != b.to_bytes() {
        return Err("two seeded explore runs gave different stores".into());
    }

    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let path = dir.path().join("boundary.store");
    a.save(&path).map_err(|e| e.to_string())?;
    let loaded = VectorStore::load(&path).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let q = random_unit(&mut rng, world.dimension);
        let k = rng.random_range(1..=12);
        let x = a.top_k(&q, k, None);
        let y = loaded.top_k(&q, k, None);
        let same = x.len() == y.len()
            && x.iter().zip(&y).all(|(m, n)| m.similarity.to_bits() == n.similarity.to_bits() && m.record == n.record);
        if !same {
            return Err("top_k differs after save/load".into());
        }
    }

    let config = dir.path().join("halmit.toml");
    fs::write(
        &config,
        "[gateway.target]\nkind = \"synthetic\"\nseed = 1\n[gateway.generator]\nkind = \"synthetic\"\n\
         [gateway.judge]\nkind = \"synthetic\"\n[gateway.embedding]\nkind = \"hashed\"\ndimension = 32\ntrigrams = false\n\
         [entropy]\nkind = \"exact_match\"\n",
    )
    .map_err(|e| e.to_string())?;
    let mut server = Command::new(env!("CARGO_BIN_EXE_halmit"))
        .args(["serve", "--config", config.to_str().unwrap(), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
    let base = format!("http://{}", line.trim().trim_start_matches("listening on "));
    let client = reqwest::blocking::Client::new();
    let queries: Vec<String> = stratified_eval(world, 20, "synthetic", 19).map_err(|e| e.to_string())?.into_iter().map(|i| i.question).collect();
    let mut mismatch = None;
    for q in &queries {
        let body = serde_json::json!({ "domain": "synthetic", "query": q });
        let served = client.post(format!("{base}/v1/check")).json(&body).send().and_then(|r| r.bytes()).map_err(|e| e.to_string());
        let printed = spawn_check(&config, q);
        if served.as_deref().ok() != printed.as_deref().ok() || printed.is_err() {
            mismatch = Some(q.clone());
            break;
        }
    }
    let _ = server.kill();
    let _ = server.wait();
    match mismatch {
        Some(q) => Err(format!("service and CLI disagree on {q:?}")),
        None => Ok(format!(
            "identical stores ({} records), 200 top_k probes bit-exact after reload, {} service responses byte-equal to check output",
            a.len(),
            queries.len()
        )),
    }
}

// 10. Reference-answer labeling.
fn gqa() -> Outcome {
    let same = gqa_label("the capital of france is paris", "the capital of france is paris");
    let disjoint = gqa_label("bananas grow quickly", "the capital of france is paris");
    let half = gqa_label("a b", "a c");
    if same.hallucinated || !disjoint.hallucinated || half.mean != 0.5 || half.hallucinated {
        return Err(format!("identical {same:?}, disjoint {disjoint:?}, half {half:?}"));
    }
    let target = ScriptedBackend::from_pairs([("q1", "paris is the capital"), ("q2", "it is lyon")]);
    let items = vec![
        QaItem { id: "1".into(), domain: "geo".into(), question: "q1".into(), reference_answer: "paris is the capital".into() },
        QaItem { id: "2".into(), domain: "geo".into(), question: "q2".into(), reference_answer: "paris is the capital".into() },
    ];
    let store = VectorStore::new(8);
    let embedder = halmit_core::gateway::HashedEmbedder::new(8);
    let oracle = EquivalenceOracle::exact_match();
    let config = MonitorConfig::default();
    let monitor = Monitor { store: &store, target: &target, oracle: &oracle, embedder: &embedder, config: &config };
    let scored = evaluate_items(&items, &monitor, &GqaLabeler(&target)).map_err(|e| e.to_string())?;
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    ensure(labels == [false, true], format!("identical, disjoint and mean-0.5 cases labeled correctly; labeler {labels:?}"))
}

fn main() {
    let world = Arc::new(SyntheticWorld::reference());
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("formula exactness", Box::new(formulas)),
        ("monitor oracle equivalence", Box::new(monitor_oracle)),
        ("metric oracles", Box::new(metric_oracles)),
        ("gradient check", Box::new(gradient_check)),
        ("policy training", Box::new(training)),
        ("convergence", Box::new({
            let w = world.clone();
            move || convergence(&w)
        })),
        ("synthetic benchmark", Box::new({
            let w = world.clone();
            move || benchmark(&w)
        })),
        ("ablation stability", Box::new({
            let w = world.clone();
            move || ablation(&w)
        })),
        ("determinism and persistence", Box::new({
            let w = world.clone();
            move || determinism(&w)
        })),
        ("gqa labeler", Box::new(gqa)),
    ];
    let mut surprises = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {status} {name} [{secs:.2}s]: {detail}");
        if outcome.is_ok() == EXPECTED_FAILURES.contains(&n) {
            surprises.push(n);
        }
    }
    if surprises.is_empty() {
        println!("acceptance: all results as expected (expected failures: {EXPECTED_FAILURES:?})");
    } else {
        println!("acceptance: unexpected results for criteria {surprises:?}");
        std::process::exit(1);
    }
}
