//! Fixtures shared by the criterion benches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use semhash_core::synth::{self, SynthConfig};
use semhash_core::{BinaryCode, CodeIndex, Corpus, Query};

/// Codes scattered around `classes` random centroids: each bit of a member
/// is flipped with probability `flip`. Labels are the centroid index.
pub fn clustered_pool(n: usize, bits: usize, classes: usize, flip: f64, seed: u64) -> CodeIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<BinaryCode> = (0..classes).map(|_| BinaryCode::from_fn(bits, |_| rng.gen())).collect();
    let mut index = CodeIndex::empty(bits);
    for id in 0..n {
        let c = rng.gen_range(0..classes);
        let code = BinaryCode::from_fn(bits, |k| centroids[c].get(k) ^ rng.gen_bool(flip));
        index.push(id as u64, &code, vec![c as u32]).expect("fresh ids");
    }
    index
}

/// The first `n` pool entries as queries that exclude themselves.
pub fn pool_queries(pool: &CodeIndex, n: usize) -> Vec<Query> {
    pool.entries()
        .take(n)
        .map(|(id, code, labels)| Query { doc_id: Some(id), code, labels: labels.to_vec() })
        .collect()
}

/// A labelled synthetic corpus with an 80/10/10 split.
pub fn split_corpus(documents: usize, vocab_size: usize, topics: usize, seed: u64) -> Corpus {
    let cfg = SynthConfig { documents, vocab_size, topics, seed, ..SynthConfig::default() };
    synth::generate(&cfg).and_then(|c| c.split((0.8, 0.1, 0.1), seed)).expect("valid synthetic config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_clusters_retrieve_their_own_class() {
        let pool = clustered_pool(400, 64, 4, 0.02, 1);
        assert_eq!(pool.len(), 400);
        let queries = pool_queries(&pool, 20);
        assert!(pool.precision_at_k(&queries, 50).unwrap() > 0.99);
    }
}
