//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hivechat_core::retrieval::{build_store, PairStore, QueryResponsePair};
use hivechat_core::VectorTable;

pub const VOCAB: usize = 2_000;

pub fn word(i: usize) -> String {
    format!("tok{i}")
}

/// A random table of `VOCAB` tokens.
pub fn table(dim: usize, seed: u64) -> VectorTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..VOCAB).map(|i| {
        (
            word(i),
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    });
    VectorTable::from_entries(dim, entries).expect("consistent dims")
}

/// A sentence of `len` random vocabulary tokens.
pub fn sentence(rng: &mut impl Rng, len: usize) -> String {
    (0..len)
        .map(|_| word(rng.random_range(0..VOCAB)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn store(n: usize, table: &VectorTable, seed: u64) -> PairStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|i| QueryResponsePair {
            query: sentence(&mut rng, 8),
            response: format!("reply {i}"),
            votes: Default::default(),
            source: String::new(),
        })
        .collect();
    build_store(pairs, table).store
}
