//! Black-box hallucination watchdog for LLM-empowered agents.
//!
//! The crate maps an agent's generalization bound into a vector store by
//! probabilistic fractal exploration of the query space, then monitors
//! incoming queries against that bound. Modules:
//!
//! - [`gateway`]: chat and embedding backends (remote, scripted, synthetic).
//! - [`store`]: flat exact-cosine store of boundary records.
//! - [`entropy`]: semantic entropy over clustered responses.
//! - [`evaluator`]: hallucination judging and reference-based labels.
//! - [`explorer`]: the fractal exploration loop.
//! - [`policy`]: rewards, state features and the value network.
//! - [`monitor`]: the query watchdog.
//! - [`harness`]: metrics, dataset ingestion and synthetic benchmarks.

pub mod config;
pub mod entropy;
pub mod evaluator;
pub mod explorer;
pub mod gateway;
pub mod harness;
pub mod monitor;
pub mod policy;
pub mod prompts;
pub mod store;
pub mod text;

pub use config::Config;
pub use entropy::{Clustering, EquivalenceOracle, OracleKind};
pub use evaluator::{GqaLabel, Judgment};
pub use explorer::{ExplorationReport, IfspConfig, TransformKind};
pub use gateway::{BackendSpec, ChatBackend, ChatTurn, EmbeddingSpec, Embedder, SyntheticWorld};
pub use monitor::{MonitorConfig, Reason, Verdict};
pub use policy::{PolicySample, TrainConfig, ValueNetwork};
pub use store::{BoundaryRecord, Neighbor, VectorStore};
