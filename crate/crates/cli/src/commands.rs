use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use semhash_core::model::embedding_neighbors;
use semhash_core::synth::{self, SynthConfig};
use semhash_core::{Checkpoint, CodeIndex, Corpus, Query, Split};

use crate::error::{CliError, CliResult};
use crate::run::{run_training, RunConfig};
use crate::{SplitArg, SweepArg};

const DEFAULT_BETA: f64 = 0.05;
const DEFAULT_LAMBDA: f64 = 0.01;

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let s = serde_json::to_string(value).map_err(|e| CliError::runtime("E_IO", e.to_string()))?;
    println!("{s}");
    Ok(())
}

pub fn train(config: Option<&Path>, overrides: &[String]) -> CliResult<()> {
    let cfg = RunConfig::resolve(config, overrides)?;
    let summary = run_training(&cfg)?;
    print_json(&summary)
}

pub fn encode(checkpoint: &Path, bow: &Path, vocab: &Path, split: SplitArg, output: &Path, text: Option<&Path>) -> CliResult<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let corpus = Corpus::load(bow, vocab)?;
    if corpus.vocabulary() != &ckpt.vocabulary {
        return Err(CliError::runtime(
            "E_MISMATCH",
            format!(
                "corpus vocabulary ({} words) does not match the checkpoint's ({} words)",
                corpus.vocabulary().len(),
                ckpt.vocabulary.len()
            ),
        ));
    }
    let wanted = match split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Validation => Some(Split::Validation),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let mut index = CodeIndex::empty(ckpt.model.code_bits());
    for (i, doc) in corpus.documents().iter().enumerate() {
        if wanted.is_some_and(|s| corpus.split_of_index(i) != s) {
            continue;
        }
        let code = ckpt.model.encode(&ckpt.idf.transform(doc))?;
        index.push(doc.doc_id, &code, doc.labels.clone())?;
    }
    index.save(output)?;
    if let Some(path) = text {
        index.write_text(BufWriter::new(File::create(path)?))?;
    }
    print_json(&serde_json::json!({
        "output": output.display().to_string(),
        "documents": index.len(),
        "bits": index.bits(),
    }))
}

pub fn search(index: &Path, queries: &Path, docs: &[u64], k: usize) -> CliResult<()> {
    let index = CodeIndex::load(index)?;
    let queries = CodeIndex::load(queries)?;
    if index.bits() != queries.bits() {
        return Err(CliError::runtime("E_MISMATCH", format!("index has {} bits, queries have {}", index.bits(), queries.bits())));
    }
    let wanted: HashSet<u64> = docs.iter().copied().collect();
    if let Some(missing) = docs.iter().find(|d| queries.lookup(**d).is_none()) {
        return Err(CliError::runtime("E_UNKNOWN_DOC", format!("doc {missing} is not in the query file")));
    }
    let out = io::stdout();
    let mut w = BufWriter::new(out.lock());
    writeln!(w, "query\trank\tdoc_id\tdistance")?;
    for (id, code, _) in queries.entries() {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let res = index.hamming_topk(&code, Some(id), k)?;
        for (rank, (doc, dist)) in res.hits.iter().enumerate() {
            writeln!(w, "{id}\t{}\t{doc}\t{dist}", rank + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Quantiles {
    min: f64,
    p25: f64,
    median: f64,
    p75: f64,
    max: f64,
}

fn quantiles(values: &[f64]) -> Quantiles {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    Quantiles { min: v[0], p25: at(0.25), median: at(0.5), p75: at(0.75), max: v[v.len() - 1] }
}

pub fn eval(train: &Path, test: &Path, k: usize) -> CliResult<()> {
    let db = CodeIndex::load(train)?;
    let queries = CodeIndex::load(test)?;
    if db.bits() != queries.bits() {
        return Err(CliError::runtime("E_MISMATCH", format!("database codes have {} bits, query codes have {}", db.bits(), queries.bits())));
    }
    if queries.is_empty() {
        return Err(CliError::runtime("E_EMPTY", "query code file has no documents"));
    }
    let queries: Vec<Query> = queries
        .entries()
        .map(|(id, code, labels)| Query { doc_id: Some(id), code, labels: labels.to_vec() })
        .collect();
    let per_query = db.query_precisions(&queries, k)?;
    let precision = per_query.iter().sum::<f64>() / per_query.len() as f64;
    print_json(&serde_json::json!({
        "k": k,
        "queries": per_query.len(),
        "precision": precision,
        "per_query": quantiles(&per_query),
    }))
}

/// Values in first-seen order with exact repeats removed.
fn dedupe(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &v in values {
        // -0.0 and 0.0 are the same setting
        let key = if v == 0.0 { 0u64 } else { v.to_bits() };
        if seen.insert(key) {
            kept.push(v);
        } else {
            dropped.push(v);
        }
    }
    (kept, dropped)
}

pub fn ablate(config: Option<&Path>, overrides: &[String], sweep: SweepArg, values: &[f64]) -> CliResult<()> {
    let base = RunConfig::resolve(config, overrides)?;
    let (name, default) = match sweep {
        SweepArg::Beta => ("beta", DEFAULT_BETA),
        SweepArg::Lambda => ("lambda", DEFAULT_LAMBDA),
    };
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(CliError::config(name, format!("sweep value {bad} must be finite and non-negative")));
    }
    let (values, dropped) = dedupe(values);
    for v in &dropped {
        eprintln!("warning: duplicate {name} value {v} dropped");
    }
    base.validate()?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in &values {
        let mut cfg = base.clone();
        match sweep {
            SweepArg::Beta => cfg.train.beta = v,
            SweepArg::Lambda => cfg.train.lambda = v,
        }
        cfg.output_dir = base.output_dir.join(format!("{name}-{v}"));
        let summary = run_training(&cfg)?;
        rows.push((v, summary.test_p100));
    }
    let out = io::stdout();
    let mut w = BufWriter::new(out.lock());
    writeln!(w, "{name}\tprecision@{}\tnote", base.train.eval_k)?;
    for (v, p) in rows {
        let p = p.map_or("NA".to_string(), |p| format!("{p:.4}"));
        let note = if v == default { "default" } else { "" };
        writeln!(w, "{v}\t{p}\t{note}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn neighbors(checkpoint: &Path, n: usize, words: &[String]) -> CliResult<()> {
    if words.is_empty() {
        return Err(CliError::usage("neighbors needs at least one word"));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let unknown: Vec<&str> = words.iter().filter(|w| ckpt.vocabulary.id(w).is_none()).map(String::as_str).collect();
    if !unknown.is_empty() {
        return Err(CliError::runtime("E_UNKNOWN_WORD", format!("not in vocabulary: {}", unknown.join(","))));
    }
    let out = io::stdout();
    let mut w = BufWriter::new(out.lock());
    writeln!(w, "word\trank\tneighbor\tcosine")?;
    for word in words {
        for (rank, (token, dist)) in embedding_neighbors(&ckpt.model.decoder, &ckpt.vocabulary, word, n)?.into_iter().enumerate() {
            writeln!(w, "{word}\t{}\t{token}\t{:.6}", rank + 1, 1.0 - dist)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn synth(cfg: &SynthConfig, bow: &Path, vocab: &Path) -> CliResult<()> {
    let corpus = synth::generate(cfg)?;
    corpus.save(bow, vocab)?;
    print_json(&serde_json::json!({
        "corpus": bow.display().to_string(),
        "vocab": vocab.display().to_string(),
        "documents": corpus.documents().len(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedupe_keeps_first_occurrence() {
        let (kept, dropped) = dedupe(&[0.05, 0.0, 0.05, -0.0, 1.0]);
        assert_eq!(kept, vec![0.05, 0.0, 1.0]);
        assert_eq!(dropped.len(), 2);
    }

    #[test]
    fn quantiles_of_small_sets() {
        let q = quantiles(&[0.5, 0.0, 1.0, 0.25, 0.75]);
        assert_eq!((q.min, q.p25, q.median, q.p75, q.max), (0.0, 0.25, 0.5, 0.75, 1.0));
        let q = quantiles(&[0.3]);
        assert_eq!(q.median, 0.3);
    }
}
