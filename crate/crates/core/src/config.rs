//! The single TOML configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::OracleSpec;
use crate::explorer::IfspConfig;
use crate::gateway::{BackendSpec, EmbeddingSpec};
use crate::harness::BenchmarkConfig;
use crate::monitor::MonitorConfig;
use crate::policy::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub target: BackendSpec,
    pub generator: BackendSpec,
    pub judge: BackendSpec,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default = "default_loss_curve")]
    pub loss_curve: PathBuf,
    #[serde(default = "default_event_log")]
    pub event_log: PathBuf,
    /// Directory for reports and plot data.
    #[serde(default = "default_reports")]
    pub reports: PathBuf,
}

fn default_store() -> PathBuf {
    "boundary.store".into()
}
fn default_checkpoint() -> PathBuf {
    "policy.ckpt".into()
}
fn default_loss_curve() -> PathBuf {
    "loss_curve.tsv".into()
}
fn default_event_log() -> PathBuf {
    "events.jsonl".into()
}
fn default_reports() -> PathBuf {
    "reports".into()
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            store: default_store(),
            checkpoint: default_checkpoint(),
            loss_curve: default_loss_curve(),
            event_log: default_event_log(),
            reports: default_reports(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_domain")]
    pub domain: String,
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub entropy: OracleSpec,
    #[serde(default)]
    pub explore: IfspConfig,
    #[serde(default)]
    pub policy: TrainConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

fn default_domain() -> String {
    "general".into()
}

impl Default for Config {
    /// Synthetic backends over the reference world.
    fn default() -> Self {
        Self {
            domain: "synthetic".into(),
            gateway: GatewayConfig {
                target: BackendSpec::synthetic(1),
                generator: BackendSpec::synthetic(2),
                judge: BackendSpec::synthetic(3),
                embedding: EmbeddingSpec { trigrams: false, ..EmbeddingSpec::hashed(32) },
            },
            entropy: OracleSpec::default(),
            explore: IfspConfig::default(),
            policy: TrainConfig::default(),
            monitor: MonitorConfig::default(),
            paths: Paths::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<inline>".into(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut config: Config = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        config.validate()?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.store, &mut paths.checkpoint, &mut paths.loss_curve, &mut paths.event_log, &mut paths.reports] {
            fix(p);
        }
        for spec in [&mut self.gateway.target, &mut self.gateway.generator, &mut self.gateway.judge] {
            spec.script.iter_mut().chain(spec.world.iter_mut()).for_each(fix);
        }
        if let Some(judge) = &mut self.entropy.judge {
            judge.script.iter_mut().chain(judge.world.iter_mut()).for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        for spec in [&self.gateway.target, &self.gateway.generator, &self.gateway.judge] {
            spec.validate().map_err(|e| invalid(&e))?;
        }
        self.explore.validate().map_err(|e| invalid(&e))?;
        self.monitor.validate().map_err(|e| invalid(&e))?;
        if self.gateway.embedding.dimension == 0 {
            return Err(ConfigError::Invalid("embedding dimension must be positive".into()));
        }
        if self.domain.trim().is_empty() {
            return Err(ConfigError::Invalid("domain must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[gateway.target]
kind = "synthetic"
[gateway.generator]
kind = "synthetic"
[gateway.judge]
kind = "synthetic"
"#;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(c.explore.gamma_stop, 0.6);
        assert_eq!(c.explore.seeds_per_domain, 10);
        assert_eq!(c.monitor.epsilon_sim, 0.8);
        assert_eq!(c.policy.learning_rate, 1e-4);
        assert_eq!(c.policy.batch_size, 64);
        assert_eq!(c.policy.max_epochs, 300);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml(&format!("{MINIMAL}\n[monitor]\nepsilon = 0.7\n")).is_err());
        assert!(Config::from_toml(&format!("colour = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        for c in [Config::default(), Config::from_toml(MINIMAL).unwrap()] {
            let text = c.to_toml();
            let back = Config::from_toml(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml(), text);
        }
        let mut c = Config::default();
        c.explore.query_budget = Some(500);
        c.explore.restrict_on_hallucination = Some(vec![crate::TransformKind::Deduction]);
        c.gateway.target = BackendSpec::scripted("script.json");
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("halmit.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.paths.store, dir.path().join("boundary.store"));
        assert!(matches!(Config::load(&dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
    }
}
