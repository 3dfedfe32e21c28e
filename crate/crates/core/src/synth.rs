//! Synthetic topic corpora for tests, benchmarks and demos.
//!
//! Each topic owns a block of the vocabulary with Zipf-like word weights and
//! leaks a share of its mass onto the next topic's block. Documents mix
//! their topic's distribution with a background distribution over the whole
//! vocabulary.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::corpus::{Corpus, Document, LabelId, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub documents: usize,
    pub vocab_size: usize,
    pub topics: usize,
    /// Token count per document is drawn uniformly from this range.
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token comes from the document's topic rather than
    /// the background.
    pub purity: f64,
    /// Share of each topic's mass placed on the next topic's words.
    pub overlap: f64,
    /// Probability that a document carries a second topic and label.
    pub multi_label: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 1000,
            vocab_size: 500,
            topics: 5,
            min_len: 20,
            max_len: 60,
            purity: 0.5,
            overlap: 0.2,
            multi_label: 0.0,
            seed: 0,
        }
    }
}

fn zipf(n: usize) -> Vec<f64> {
    (0..n).map(|r| 1.0 / (r as f64 + 1.0)).collect()
}

/// Per-topic word weights over the full vocabulary.
fn topic_weights(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let block = cfg.vocab_size / cfg.topics;
    (0..cfg.topics)
        .map(|t| {
            let mut w = vec![0.0; cfg.vocab_size];
            let next = (t + 1) % cfg.topics;
            for (r, z) in zipf(block).into_iter().enumerate() {
                w[t * block + r] += (1.0 - cfg.overlap) * z;
                w[next * block + r] += cfg.overlap * z;
            }
            w
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    if cfg.topics == 0 || cfg.vocab_size < cfg.topics {
        return Err(Error::Validation(format!("{} topics over {} words", cfg.topics, cfg.vocab_size)));
    }
    if cfg.min_len == 0 || cfg.max_len < cfg.min_len {
        return Err(Error::Validation(format!("bad length range {}..={}", cfg.min_len, cfg.max_len)));
    }
    for (name, p) in [("purity", cfg.purity), ("overlap", cfg.overlap), ("multi_label", cfg.multi_label)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let topics: Vec<WeightedIndex<f64>> = topic_weights(cfg)
        .into_iter()
        .map(|w| WeightedIndex::new(w).map_err(|e| Error::Validation(e.to_string())))
        .collect::<Result<_>>()?;
    let background = WeightedIndex::new(zipf(cfg.vocab_size)).map_err(|e| Error::Validation(e.to_string()))?;
    // Background ranks are shuffled so frequent background words are not
    // all inside the first topic's block.
    let mut perm: Vec<u32> = (0..cfg.vocab_size as u32).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng_for(cfg.seed, &[0xb6]));

    let mut docs = Vec::with_capacity(cfg.documents);
    for i in 0..cfg.documents {
        let mut rng = rng_for(cfg.seed, &[0xd0c, i as u64]);
        let primary = rng.gen_range(0..cfg.topics);
        let mut labels = vec![primary as LabelId];
        if cfg.topics > 1 && rng.gen_bool(cfg.multi_label) {
            let mut other = rng.gen_range(0..cfg.topics - 1);
            if other >= primary {
                other += 1;
            }
            labels.push(other as LabelId);
        }
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut counts = std::collections::BTreeMap::<u32, u32>::new();
        for _ in 0..len {
            let w = if rng.gen_bool(cfg.purity) {
                let t = labels[rng.gen_range(0..labels.len())] as usize;
                topics[t].sample(&mut rng) as u32
            } else {
                perm[background.sample(&mut rng)]
            };
            *counts.entry(w).or_default() += 1;
        }
        docs.push(Document::new(i as u64, labels, counts));
    }
    Corpus::new(Vocabulary::synthetic(cfg.vocab_size), docs, None)
}
