//! Fixtures shared by the benchmarks.

use halmit_core::store::to_f32;
use halmit_core::{BoundaryRecord, VectorStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_unit(rng: &mut impl Rng, dimension: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dimension).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `n` random unit records split over two domains.
pub fn random_store(n: usize, dimension: usize, seed: u64) -> VectorStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = VectorStore::new(dimension);
    for i in 0..n {
        store
            .insert(BoundaryRecord {
                id: 0,
                domain: if i % 2 == 0 { "a" } else { "b" }.into(),
                query: format!("q{i}"),
                responses: Vec::new(),
                semantic_entropy: rng.random_range(0.0..1.6),
                embedding: to_f32(&random_unit(&mut rng, dimension)),
                hallucinated: true,
                lineage: None,
                iteration: 0,
            })
            .expect("unit records insert");
    }
    store
}
