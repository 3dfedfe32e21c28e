//! Bag-of-words corpus ingestion, TF-IDF weighting and train/validation/test
//! splits.
//!
//! Documents are read from a line-oriented text format:
//!
//! ```text
//! # comment
//! d0 lbl=2 3:1 7:4
//! d1 lbl=0 lbl=5 split=test 1:2 3:1
//! ```
//!
//! The first field is the document id (an optional leading `d` is
//! accepted). `lbl=<int>` may repeat for multi-label documents. `split=` is
//! optional and takes `train`, `validation` (or `val`) or `test`; either every
//! document carries one or none does. The remaining fields are
//! `<term_id>:<count>` pairs. Term ids index a sidecar vocabulary file with
//! one `<term_id>\t<token>` entry per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type DocId = u64;
pub type TermId = u32;
pub type LabelId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TermId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for tok in tokens {
            let tok = tok.into();
            let id = vocab.id_to_token.len() as TermId;
            if vocab.token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Validation(format!("duplicate token `{tok}`")));
            }
            vocab.id_to_token.push(tok);
        }
        Ok(vocab)
    }

    /// Vocabulary of `size` placeholder tokens `w0`, `w1`, ...
    pub fn synthetic(size: usize) -> Self {
        Self::from_tokens((0..size).map(|i| format!("w{i}"))).expect("placeholder tokens are unique")
    }

    /// Parse a `<term_id>\t<token>` sidecar. Ids must be dense in `[0, |V|)`,
    /// in any order.
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut entries: BTreeMap<TermId, String> = BTreeMap::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, tok) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "expected `<term_id>\\t<token>`".into(),
            })?;
            let id: TermId = id.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad term id `{id}`"),
            })?;
            if entries.insert(id, tok.to_string()).is_some() {
                return Err(Error::Parse { line: lineno, msg: format!("duplicate term id {id}") });
            }
        }
        for (expected, &id) in entries.keys().enumerate() {
            if expected as TermId != id {
                return Err(Error::Validation(format!("vocabulary ids not dense: missing id {expected}")));
            }
        }
        Self::from_tokens(entries.into_values())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, tok) in self.id_to_token.iter().enumerate() {
            writeln!(w, "{id}\t{tok}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TermId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TermId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// A sparse word-count vector with optional labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: DocId,
    /// Sorted, deduplicated. Empty means unlabeled.
    pub labels: Vec<LabelId>,
    /// Strictly increasing term ids, counts >= 1.
    pub terms: Vec<(TermId, u32)>,
}

impl Document {
    /// Build a document, sorting terms and summing duplicate term ids.
    pub fn new(doc_id: DocId, mut labels: Vec<LabelId>, terms: impl IntoIterator<Item = (TermId, u32)>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        let mut merged: BTreeMap<TermId, u32> = BTreeMap::new();
        for (t, c) in terms {
            if c > 0 {
                *merged.entry(t).or_insert(0) += c;
            }
        }
        Document { doc_id, labels, terms: merged.into_iter().collect() }
    }

    pub fn token_count(&self) -> u64 {
        self.terms.iter().map(|&(_, c)| c as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TfidfVector {
    pub terms: Vec<(TermId, f64)>,
}

impl TfidfVector {
    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|&(_, w)| w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

/// Inverse document frequencies over the training split: `ln(N_train / df)`,
/// zero for terms never seen in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Idf {
    pub weights: Vec<f64>,
}

impl Idf {
    pub fn transform(&self, doc: &Document) -> TfidfVector {
        TfidfVector {
            terms: doc
                .terms
                .iter()
                .map(|&(t, c)| (t, c as f64 * self.weights.get(t as usize).copied().unwrap_or(0.0)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocabulary: Vocabulary,
    documents: Vec<Document>,
    labels: BTreeMap<LabelId, String>,
    splits: Vec<Split>,
    explicit_splits: bool,
}

impl Corpus {
    /// Assemble a corpus from parts. Every document starts in the training
    /// split unless `splits` is given.
    pub fn new(vocabulary: Vocabulary, documents: Vec<Document>, splits: Option<Vec<Split>>) -> Result<Self> {
        let explicit_splits = splits.is_some();
        let splits = splits.unwrap_or_else(|| vec![Split::Train; documents.len()]);
        if splits.len() != documents.len() {
            return Err(Error::Validation("split table length differs from document count".into()));
        }
        let mut seen = HashSet::with_capacity(documents.len());
        let mut labels = BTreeMap::new();
        for doc in &documents {
            if !seen.insert(doc.doc_id) {
                return Err(Error::Validation(format!("duplicate doc_id {}", doc.doc_id)));
            }
            validate_document(doc, vocabulary.len())?;
            for &l in &doc.labels {
                labels.entry(l).or_insert_with(|| l.to_string());
            }
        }
        Ok(Corpus { vocabulary, documents, labels, splits, explicit_splits })
    }

    /// Parse bow-text from a reader against a known vocabulary.
    pub fn parse_bow<R: Read>(reader: R, vocabulary: Vocabulary) -> Result<Self> {
        let mut documents = Vec::new();
        let mut splits = Vec::new();
        let mut tagged = 0usize;
        let mut seen = HashSet::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (doc, split) = parse_line(trimmed, lineno)?;
            if split.is_some() {
                tagged += 1;
            }
            if doc.terms.is_empty() {
                return Err(Error::Parse { line: lineno, msg: format!("document {} has no terms", doc.doc_id) });
            }
            if let Some(&(t, _)) = doc.terms.iter().find(|&&(t, _)| t as usize >= vocabulary.len()) {
                return Err(Error::Validation(format!(
                    "line {lineno}: term id {t} out of range for vocabulary of size {}",
                    vocabulary.len()
                )));
            }
            if !seen.insert(doc.doc_id) {
                return Err(Error::Parse { line: lineno, msg: format!("duplicate doc_id {}", doc.doc_id) });
            }
            documents.push(doc);
            splits.push(split.unwrap_or(Split::Train));
        }
        if tagged != 0 && tagged != documents.len() {
            return Err(Error::Validation(format!(
                "{tagged} of {} documents carry split= tags; tag all or none",
                documents.len()
            )));
        }
        let explicit = tagged != 0;
        Corpus::new(vocabulary, documents, explicit.then_some(splits))
    }

    pub fn load(bow: &Path, vocab: &Path) -> Result<Self> {
        let vocabulary = Vocabulary::load(vocab)?;
        Self::parse_bow(File::open(bow)?, vocabulary)
    }

    /// Write bow-text. Split tags are written when the corpus has an explicit
    /// split assignment, so a reload restores it.
    pub fn write_bow<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        for (doc, split) in self.documents.iter().zip(&self.splits) {
            write!(w, "d{}", doc.doc_id)?;
            for l in &doc.labels {
                write!(w, " lbl={l}")?;
            }
            if self.explicit_splits {
                write!(w, " split={split}")?;
            }
            for (t, c) in &doc.terms {
                write!(w, " {t}:{c}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, bow: &Path, vocab: &Path) -> Result<()> {
        self.write_bow(File::create(bow)?)?;
        self.vocabulary.write(BufWriter::new(File::create(vocab)?))?;
        Ok(())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn labels(&self) -> &BTreeMap<LabelId, String> {
        &self.labels
    }

    /// Number of classifier outputs needed: one past the largest label id.
    pub fn num_classes(&self) -> usize {
        self.labels.keys().next_back().map_or(0, |&l| l as usize + 1)
    }

    pub fn has_explicit_splits(&self) -> bool {
        self.explicit_splits
    }

    pub fn split_of_index(&self, idx: usize) -> Split {
        self.splits[idx]
    }

    pub fn split_of(&self, doc_id: DocId) -> Option<Split> {
        self.documents.iter().position(|d| d.doc_id == doc_id).map(|i| self.splits[i])
    }

    /// Indices (into `documents()`) of the documents in `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, &s)| s == split).map(|(i, _)| i).collect()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.splits.iter().filter(|&&x| x == s).count();
        (count(Split::Train), count(Split::Validation), count(Split::Test))
    }

    /// Document frequencies over the training split.
    pub fn idf(&self) -> Result<Idf> {
        let train = self.split_indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Validation("training split is empty; cannot compute TF-IDF".into()));
        }
        let mut df = vec![0u64; self.vocabulary.len()];
        for &i in &train {
            for &(t, _) in &self.documents[i].terms {
                df[t as usize] += 1;
            }
        }
        let n = train.len() as f64;
        let weights = df.iter().map(|&d| if d == 0 { 0.0 } else { (n / d as f64).ln() }).collect();
        Ok(Idf { weights })
    }

    /// Reassign splits by a seeded shuffle. Sizes are the rounded fractions,
    /// with the test split taking the remainder.
    pub fn split(&self, fractions: (f64, f64, f64), seed: u64) -> Result<Corpus> {
        let (ft, fv, fs) = fractions;
        if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f < 0.0) || ft <= 0.0 {
            return Err(Error::Validation(format!("invalid split fractions {fractions:?}")));
        }
        if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split fractions {fractions:?} do not sum to 1")));
        }
        let n = self.documents.len();
        let wanted = [ft, fv, fs].iter().filter(|&&f| f > 0.0).count();
        if n < wanted {
            return Err(Error::Validation(format!("{n} documents cannot fill {wanted} splits")));
        }
        let mut n_train = (ft * n as f64).round() as usize;
        let mut n_val = (fv * n as f64).round() as usize;
        // Every split with a positive fraction gets at least one document.
        if fv > 0.0 && n_val == 0 {
            n_val = 1;
        }
        n_train = n_train.clamp(1, n);
        if n_train + n_val > n {
            n_val = n - n_train;
        }
        if fs > 0.0 && n_train + n_val == n {
            if n_train > n_val && n_train > 1 {
                n_train -= 1;
            } else if n_val > 0 {
                n_val -= 1;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::rng_for(seed, &[0x5811]));
        let mut splits = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        let mut out = self.clone();
        out.splits = splits;
        out.explicit_splits = true;
        Ok(out)
    }
}

fn validate_document(doc: &Document, vocab_size: usize) -> Result<()> {
    if doc.terms.is_empty() {
        return Err(Error::Validation(format!("document {} has no terms", doc.doc_id)));
    }
    let mut prev: Option<TermId> = None;
    for &(t, c) in &doc.terms {
        if c == 0 {
            return Err(Error::Validation(format!("document {} has a zero count", doc.doc_id)));
        }
        if t as usize >= vocab_size {
            return Err(Error::Validation(format!(
                "document {}: term id {t} out of range for vocabulary of size {vocab_size}",
                doc.doc_id
            )));
        }
        if prev.is_some_and(|p| p >= t) {
            return Err(Error::Validation(format!("document {}: term ids not increasing", doc.doc_id)));
        }
        prev = Some(t);
    }
    Ok(())
}

fn parse_line(line: &str, lineno: usize) -> Result<(Document, Option<Split>)> {
    let perr = |msg: String| Error::Parse { line: lineno, msg };
    let mut fields = line.split_whitespace();
    let id_field = fields.next().ok_or_else(|| perr("missing doc id".into()))?;
    let doc_id: DocId = id_field
        .strip_prefix('d')
        .unwrap_or(id_field)
        .parse()
        .map_err(|_| perr(format!("bad doc id `{id_field}`")))?;
    let mut labels = Vec::new();
    let mut split = None;
    let mut terms = Vec::new();
    for f in fields {
        if let Some(l) = f.strip_prefix("lbl=") {
            labels.push(l.parse().map_err(|_| perr(format!("bad label `{f}`")))?);
        } else if let Some(s) = f.strip_prefix("split=") {
            if split.is_some() {
                return Err(perr("repeated split= tag".into()));
            }
            split = Some(s.parse::<Split>().map_err(|e| perr(e.to_string()))?);
        } else {
            let (t, c) = f.split_once(':').ok_or_else(|| perr(format!("expected term:count, got `{f}`")))?;
            let t: TermId = t.parse().map_err(|_| perr(format!("bad term id in `{f}`")))?;
            let c: u32 = c.parse().map_err(|_| perr(format!("bad count in `{f}`")))?;
            if c == 0 {
                return Err(perr(format!("zero count in `{f}`")));
            }
            terms.push((t, c));
        }
    }
    Ok((Document::new(doc_id, labels, terms), split))
}

/// TF-IDF vectors for the documents of `split`, with document frequencies
/// taken from the training split only.
pub fn compute_tfidf(corpus: &Corpus, split: Split) -> Result<BTreeMap<DocId, TfidfVector>> {
    let idf = corpus.idf()?;
    Ok(corpus
        .split_indices(split)
        .into_iter()
        .map(|i| {
            let doc = &corpus.documents()[i];
            (doc.doc_id, idf.transform(doc))
        })
        .collect())
}

/// Nonempty label-set intersection. Both slices must be sorted.
pub fn labels_overlap(a: &[LabelId], b: &[LabelId]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}
