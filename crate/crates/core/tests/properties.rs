//! Cross-module properties: store ordering, monitor threshold monotonicity
//! and benchmark reproducibility.

use std::collections::HashMap;
use std::sync::Arc;

use halmit_core::entropy::EquivalenceOracle;
use halmit_core::gateway::{last_user, ChatBackend, ChatTurn, Embedder, GatewayError};
use halmit_core::harness::benchmark::reference_explore_config;
use halmit_core::harness::{run_benchmark, BenchmarkConfig};
use halmit_core::monitor::{Monitor, MonitorConfig, Reason};
use halmit_core::store::to_f32;
use halmit_core::{BoundaryRecord, SyntheticWorld, VectorStore};
use proptest::prelude::*;

const D: usize = 6;

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
}

fn record(query: String, v: &[f64], h: f64) -> BoundaryRecord {
    BoundaryRecord {
        id: 0,
        domain: "d".into(),
        query,
        responses: Vec::new(),
        semantic_entropy: h,
        embedding: to_f32(v),
        hallucinated: true,
        lineage: None,
        iteration: 0,
    }
}

fn vectors(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, D), 1..max)
        .prop_map(|vs| vs.iter().filter_map(|v| unit(v)).collect())
}

struct Fixed(Vec<f64>);

impl Embedder for Fixed {
    fn dimension(&self) -> usize {
        self.0.len()
    }

    fn embed(&self, _: &str) -> Result<Vec<f64>, GatewayError> {
        Ok(self.0.clone())
    }
}

struct Replies(HashMap<String, Vec<String>>);

impl ChatBackend for Replies {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        Ok(self.0[last_user(turns)].iter().take(n).cloned().collect())
    }

    fn name(&self) -> &str {
        "replies"
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_ignores_insertion_order(vs in vectors(30), q in prop::collection::vec(-1.0f64..1.0, D), k in 1usize..12, seed in any::<u64>()) {
        let Some(q) = unit(&q) else { return Ok(()) };
        let records: Vec<BoundaryRecord> = vs.iter().enumerate().map(|(i, v)| record(format!("r{i:03}"), v, 0.5)).collect();
        let mut shuffled = records.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        // Renumber by the canonical key so id tie-breaks agree.
        let build = |rs: &[BoundaryRecord]| {
            let mut sorted: Vec<&BoundaryRecord> = rs.iter().collect();
            sorted.sort_by(|a, b| a.query.cmp(&b.query));
            let ids: HashMap<&str, u64> = sorted.iter().enumerate().map(|(i, r)| (r.query.as_str(), i as u64 + 1)).collect();
            let mut store = VectorStore::new(D);
            let mut by_id: Vec<BoundaryRecord> = rs.iter().map(|r| BoundaryRecord { id: ids[r.query.as_str()], ..r.clone() }).collect();
            by_id.sort_by_key(|r| r.id);
            for r in by_id {
                store.insert(r).unwrap();
            }
            store
        };
        let key = |store: &VectorStore| -> Vec<(String, u64)> {
            store.top_k(&q, k, None).into_iter().map(|n| (n.record.query, n.similarity.to_bits())).collect()
        };
        let mut plain = VectorStore::new(D);
        let mut permuted = VectorStore::new(D);
        for r in &records {
            plain.insert(r.clone()).unwrap();
        }
        for r in &shuffled {
            permuted.insert(r.clone()).unwrap();
        }
        prop_assert_eq!(key(&build(&records)), key(&build(&shuffled)));
        // Without ties the sequence of (query, similarity) is order-free anyway.
        let sims: Vec<u64> = key(&plain).into_iter().map(|(_, b)| b).collect();
        let psims: Vec<u64> = key(&permuted).into_iter().map(|(_, b)| b).collect();
        prop_assert_eq!(sims, psims);
    }

    #[test]
    fn raising_epsilon_never_creates_centroid_flags(
        vs in vectors(11),
        q in prop::collection::vec(-1.0f64..1.0, D),
        spread in 0.0f64..1.2,
        hs in prop::collection::vec(0.0f64..1.6, 10),
        pattern in 0usize..4,
    ) {
        let Some(q) = unit(&q) else { return Ok(()) };
        let mut store = VectorStore::new(D);
        for (i, v) in vs.iter().enumerate() {
            let near: Vec<f64> = q.iter().zip(v).map(|(a, b)| a + spread * b).collect();
            if let Some(u) = unit(&near) {
                store.insert(record(format!("r{i}"), &u, hs[i % hs.len()])).unwrap();
            }
        }
        let replies = [["a"; 5], ["a", "a", "a", "b", "b"], ["a", "b", "c", "a", "b"], ["a", "b", "c", "d", "e"]][pattern];
        let target = Replies(HashMap::from([("query".to_string(), replies.iter().map(|s| s.to_string()).collect())]));
        let oracle = EquivalenceOracle::exact_match();
        let embedder = Fixed(q.clone());
        let mut was_centroid = true;
        for eps in [0.6, 0.7, 0.8, 0.9] {
            let config = MonitorConfig { epsilon_sim: eps, ..MonitorConfig::default() };
            let monitor = Monitor { store: &store, target: &target, oracle: &oracle, embedder: &embedder, config: &config };
            let v = monitor.check("query", None).unwrap();
            let centroid = v.reason == Reason::CentroidProximity;
            prop_assert!(was_centroid || !centroid, "centroid flag appeared at eps {}", eps);
            was_centroid = centroid;

            prop_assert_eq!(v.flagged, v.reason.flags());
            prop_assert!(v.neighbors.len() <= config.k_retrieve);
            prop_assert!(v.neighbors.windows(2).all(|w| w[0].similarity >= w[1].similarity));
            match v.reason {
                Reason::CentroidProximity => {
                    prop_assert!(v.centroid_similarity.unwrap() >= eps);
                    prop_assert!(v.query_entropy.is_none());
                }
                Reason::EntropyExceeds => prop_assert!(v.query_entropy.unwrap() > v.neighbor_max_entropy.unwrap()),
                Reason::WithinBound => prop_assert!(v.query_entropy.unwrap() <= v.neighbor_max_entropy.unwrap()),
                Reason::EmptyStore => prop_assert!(store.is_empty()),
            }
        }
    }
}

#[test]
fn benchmark_is_bit_reproducible() {
    let world = Arc::new(SyntheticWorld::reference());
    let bench = BenchmarkConfig { n_eval: 80, seed: 4, ..BenchmarkConfig::default() };
    let run = || run_benchmark(&world, &reference_explore_config(), &MonitorConfig::default(), &bench, None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
