//! One function per subcommand. Each loads what it needs, calls into the
//! core crate and writes its artifacts.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use halmit_core::explorer::{explore as run_explore, Agents, Event, ProbabilitySource, TerminatedBy};
use halmit_core::gateway::{build_backend, build_embedder, BackendKind, Role};
use halmit_core::harness::benchmark::{convergence_explore_config, write_trajectory};
use halmit_core::harness::{convergence_experiment, run_benchmark, sweep as run_sweep, SweepParameter};
use halmit_core::monitor::Monitor;
use halmit_core::policy::{train, write_loss_curve};
use halmit_core::{Config, EquivalenceOracle, PolicySample, SyntheticWorld, ValueNetwork, VectorStore};
use serde::Serialize;

use crate::Global;

pub fn load_config(global: &Global) -> Result<Config> {
    let path = global.config.as_ref().context("--config <path> is required")?;
    let mut config = Config::load(path)?;
    if let Some(seed) = global.seed {
        config.explore.seed = seed;
        config.policy.rng_seed = seed;
        config.benchmark.seed = seed;
    }
    if let Some(domain) = &global.domain {
        config.domain = domain.clone();
        config.benchmark.domain = domain.clone();
    }
    Ok(config)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_policy(config: &Config) -> Result<ValueNetwork> {
    let path = &config.paths.checkpoint;
    ValueNetwork::load(path).with_context(|| format!("loading policy checkpoint {}", path.display()))
}

pub fn explore(config: &Config, append: bool, use_policy: bool) -> Result<ExitCode> {
    let gw = &config.gateway;
    let target = build_backend(&gw.target, Role::Target)?;
    let generator = build_backend(&gw.generator, Role::Generator)?;
    let judge = build_backend(&gw.judge, Role::Judge)?;
    let oracle = EquivalenceOracle::from_spec(&config.entropy)?;
    let embedder = build_embedder(&gw.embedding)?;
    let agents = Agents {
        target: target.as_ref(),
        generator: generator.as_ref(),
        judge: judge.as_ref(),
        oracle: &oracle,
        embedder: embedder.as_ref(),
    };

    let store_path = &config.paths.store;
    let mut store = if append && store_path.exists() {
        VectorStore::load(store_path)?
    } else {
        VectorStore::new(embedder.dimension())
    };
    let net = if use_policy { Some(load_policy(config)?) } else { None };
    let source = net.as_ref().map_or(ProbabilitySource::Config, ProbabilitySource::Policy);
    let run = run_explore(&config.domain, &agents, &mut store, source, &config.explore)?;

    if let Some(dir) = store_path.parent() {
        fs::create_dir_all(dir)?;
    }
    store.save(store_path)?;
    let report_path = config.paths.reports.join(format!("explore_{}.json", config.domain));
    write_json(&report_path, &run.report)?;

    let log_path = &config.paths.event_log;
    if let Some(dir) = log_path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    for event in &run.events {
        serde_json::to_writer(&mut log, event)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;

    let r = &run.report;
    println!(
        "{}: {} boundary records from {} queries, {} iterations, stopped by {}",
        r.domain,
        r.boundary_count,
        r.queries_processed,
        r.iterations,
        match r.terminated_by {
            TerminatedBy::Gamma => "gamma",
            TerminatedBy::MaxIterations => "max_iterations",
        }
    );
    Ok(match r.terminated_by {
        TerminatedBy::Gamma => ExitCode::SUCCESS,
        TerminatedBy::MaxIterations => ExitCode::from(2),
    })
}

pub fn read_samples(path: &Path) -> Result<Vec<PolicySample>> {
    let file = File::open(path).with_context(|| format!("opening event log {}", path.display()))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad event", path.display(), n + 1))?;
        if let Event::Sample(s) = event {
            samples.push(s);
        }
    }
    Ok(samples)
}

pub fn train_policy(config: &Config) -> Result<ExitCode> {
    let samples = read_samples(&config.paths.event_log)?;
    let (net, curve) = train(&samples, &config.policy)?;
    net.save(&config.paths.checkpoint)?;
    write_loss_curve(&curve, create(&config.paths.loss_curve)?)?;
    println!(
        "trained on {} samples for {} epochs: loss {:.6} -> {:.6}",
        samples.len(),
        curve.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn check(config: &Config, query: &str, domain: Option<&str>) -> Result<ExitCode> {
    let store_path = &config.paths.store;
    if !store_path.exists() {
        bail!("store {} not found; run `halmit explore` first", store_path.display());
    }
    let store = VectorStore::load(store_path)?;
    let target = build_backend(&config.gateway.target, Role::Target)?;
    let oracle = EquivalenceOracle::from_spec(&config.entropy)?;
    let embedder = build_embedder(&config.gateway.embedding)?;
    let monitor = Monitor {
        store: &store,
        target: target.as_ref(),
        oracle: &oracle,
        embedder: embedder.as_ref(),
        config: &config.monitor,
    };
    let verdict = monitor.check(query, domain)?;
    print!("{}", verdict.to_json_line());
    Ok(ExitCode::SUCCESS)
}

fn world(config: &Config) -> Result<Arc<SyntheticWorld>> {
    let spec = &config.gateway.target;
    if spec.kind != BackendKind::Synthetic {
        bail!("benchmarks need a synthetic target backend");
    }
    Ok(Arc::new(spec.load_world()?))
}

pub fn benchmark(config: &Config, use_policy: bool, convergence: bool) -> Result<ExitCode> {
    let world = world(config)?;
    let reports = &config.paths.reports;
    if convergence {
        let report = convergence_experiment(&world, &convergence_explore_config(), &config.policy, &config.benchmark)?;
        write_json(&reports.join("convergence.json"), &report)?;
        for run in &report.runs {
            write_trajectory(&run.reinforced_trajectory, create(&reports.join(format!("convergence_{}_reinforced.tsv", run.seed)))?)?;
            write_trajectory(&run.random_trajectory, create(&reports.join(format!("convergence_{}_random.tsv", run.seed)))?)?;
        }
        println!("reinforced runs ahead on tail entropy: {} of {}", report.reinforced_wins, report.runs.len());
        return Ok(ExitCode::SUCCESS);
    }
    let net = if use_policy { Some(load_policy(config)?) } else { None };
    let report = run_benchmark(&world, &config.explore, &config.monitor, &config.benchmark, net.as_ref())?;
    write_json(&reports.join("benchmark.json"), &report)?;
    write_trajectory(&report.entropy_trajectory, create(&reports.join("benchmark_entropy.tsv"))?)?;
    let m = &report.monitor;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "seed {}: {} boundary records, auroc {}, accuracy {:.4}, oracle auroc {}",
        report.seed,
        report.boundary_count,
        fmt(m.auroc),
        m.accuracy,
        fmt(report.oracle_auroc)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(config: &Config, parameter: SweepParameter, values: &[f64]) -> Result<ExitCode> {
    let world = world(config)?;
    let rows = run_sweep(&world, parameter, values, &config.explore, &config.monitor, &config.benchmark)?;
    let name = match parameter {
        SweepParameter::GammaStop => "gamma_stop",
        SweepParameter::EpsilonSim => "epsilon_sim",
    };
    let path = config.paths.reports.join(format!("sweep_{name}.tsv"));
    let mut out = create(&path)?;
    writeln!(out, "{name}\taccuracy\tauroc\terror")?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for row in &rows {
        writeln!(out, "{}\t{}\t{}\t{}", row.value, cell(row.accuracy), cell(row.auroc), row.error.as_deref().unwrap_or(""))?;
    }
    out.flush()?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}
