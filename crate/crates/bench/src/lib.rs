//! Shared setup for the criterion benchmarks in `benches/`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relmem_core::{EmbeddingVector, VectorIndex};

/// `n` random vectors of dimension `dim`, seeded so runs are comparable.
pub fn random_index(n: usize, dim: usize, seed: u64) -> VectorIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = VectorIndex::new(dim).expect("dimension is positive");
    for i in 0..n {
        index
            .insert(format!("v{i:06}"), random_vector(&mut rng, dim))
            .expect("fresh id");
    }
    index
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(v) = EmbeddingVector::new(v) {
            return v;
        }
    }
}
