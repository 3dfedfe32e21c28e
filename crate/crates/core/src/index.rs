//! Exact Hamming retrieval over bit-packed codes.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::code::{hamming_words, words_for, BinaryCode};
use crate::corpus::{labels_overlap, DocId, LabelId};
use crate::error::{Error, Result};

const CODE_MAGIC: &[u8; 8] = b"SHCODES1";

/// Codes stored back to back, `words_for(bits)` words each.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeIndex {
    bits: usize,
    stride: usize,
    words: Vec<u64>,
    doc_ids: Vec<DocId>,
    labels: Vec<Vec<LabelId>>,
    position: HashMap<DocId, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: Option<DocId>,
    /// `(doc_id, distance)`, nearest first.
    pub hits: Vec<(DocId, u32)>,
}

/// One retrieval query.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub doc_id: Option<DocId>,
    pub code: BinaryCode,
    pub labels: Vec<LabelId>,
}

impl CodeIndex {
    pub fn empty(bits: usize) -> Self {
        CodeIndex { bits, stride: words_for(bits), words: Vec::new(), doc_ids: Vec::new(), labels: Vec::new(), position: HashMap::new() }
    }

    pub fn build(bits: usize, entries: impl IntoIterator<Item = (DocId, BinaryCode, Vec<LabelId>)>) -> Result<Self> {
        let mut index = Self::empty(bits);
        for (id, code, labels) in entries {
            index.push(id, &code, labels)?;
        }
        Ok(index)
    }

    pub fn push(&mut self, doc_id: DocId, code: &BinaryCode, mut labels: Vec<LabelId>) -> Result<()> {
        if code.len() != self.bits {
            return Err(Error::Validation(format!("code of {} bits in a {}-bit index", code.len(), self.bits)));
        }
        if self.position.insert(doc_id, self.doc_ids.len()).is_some() {
            return Err(Error::Validation(format!("duplicate doc_id {doc_id} in index")));
        }
        labels.sort_unstable();
        labels.dedup();
        self.words.extend_from_slice(code.words());
        self.doc_ids.push(doc_id);
        self.labels.push(labels);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[DocId] {
        &self.doc_ids
    }

    pub fn labels_at(&self, i: usize) -> &[LabelId] {
        &self.labels[i]
    }

    pub fn code_at(&self, i: usize) -> BinaryCode {
        BinaryCode::from_words(self.bits, self.words[i * self.stride..(i + 1) * self.stride].to_vec())
            .expect("index stores well-formed codes")
    }

    pub fn lookup(&self, doc_id: DocId) -> Option<(BinaryCode, &[LabelId])> {
        self.position.get(&doc_id).map(|&i| (self.code_at(i), self.labels[i].as_slice()))
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (DocId, BinaryCode, &[LabelId])> + '_ {
        (0..self.len()).map(move |i| (self.doc_ids[i], self.code_at(i), self.labels[i].as_slice()))
    }

    fn distances(&self, query: &BinaryCode) -> Vec<u32> {
        let q = query.words();
        match self.stride {
            1 => self.words.iter().map(|w| (w ^ q[0]).count_ones()).collect(),
            2 => self.words.chunks_exact(2).map(|w| (w[0] ^ q[0]).count_ones() + (w[1] ^ q[1]).count_ones()).collect(),
            0 => vec![0; self.len()],
            s => self.words.chunks_exact(s).map(|w| hamming_words(w, q)).collect(),
        }
    }

    /// The `k` nearest codes by Hamming distance, ties by ascending doc_id.
    /// An entry whose id equals `exclude` is never returned.
    pub fn hamming_topk(&self, query: &BinaryCode, exclude: Option<DocId>, k: usize) -> Result<RetrievalResult> {
        if query.len() != self.bits {
            return Err(Error::Validation(format!("query of {} bits against a {}-bit index", query.len(), self.bits)));
        }
        let dist = self.distances(query);
        let skip = exclude.and_then(|id| self.position.get(&id).copied());
        let available = self.len() - usize::from(skip.is_some());
        let k = k.min(available);
        if k == 0 {
            return Ok(RetrievalResult { query: exclude, hits: Vec::new() });
        }
        // Find the radius that holds the k-th neighbor, then keep everything
        // strictly inside it plus the lowest ids on its boundary.
        let mut hist = vec![0usize; self.bits + 1];
        for (i, &d) in dist.iter().enumerate() {
            if Some(i) != skip {
                hist[d as usize] += 1;
            }
        }
        let mut radius = 0;
        let mut inside = 0;
        while inside + hist[radius] < k {
            inside += hist[radius];
            radius += 1;
        }
        let radius = radius as u32;
        let mut hits = Vec::with_capacity(k);
        let mut boundary = Vec::new();
        for (i, &d) in dist.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            if d < radius {
                hits.push((self.doc_ids[i], d));
            } else if d == radius {
                boundary.push(self.doc_ids[i]);
            }
        }
        boundary.sort_unstable();
        hits.extend(boundary.into_iter().take(k - inside).map(|id| (id, radius)));
        hits.sort_unstable_by_key(|&(id, d)| (d, id));
        Ok(RetrievalResult { query: exclude, hits })
    }

    /// Precision of one query: the share of its retrieved neighbors that
    /// share a label with it. Zero when nothing can be retrieved.
    pub fn query_precision(&self, query: &Query, k: usize) -> Result<f64> {
        let res = self.hamming_topk(&query.code, query.doc_id, k)?;
        if res.hits.is_empty() {
            return Ok(0.0);
        }
        let relevant = res
            .hits
            .iter()
            .filter(|(id, _)| labels_overlap(&self.labels[self.position[id]], &query.labels))
            .count();
        Ok(relevant as f64 / res.hits.len() as f64)
    }

    /// Per-query precision@k, in query order. Runs queries in parallel.
    pub fn query_precisions(&self, queries: &[Query], k: usize) -> Result<Vec<f64>> {
        queries.par_iter().map(|q| self.query_precision(q, k)).collect()
    }

    /// Mean precision@k over `queries`, with `k` clipped to the pool size.
    pub fn precision_at_k(&self, queries: &[Query], k: usize) -> Result<f64> {
        if queries.is_empty() {
            return Err(Error::Validation("precision@k needs at least one query".into()));
        }
        let per = self.query_precisions(queries, k)?;
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }

    /// Binary layout, all little-endian:
    /// `"SHCODES1"`, `K: u32`, `count: u64`, `count * ceil(K/64)` code words
    /// as `u64`, `count` doc ids as `u64`, then per document `n: u32`
    /// followed by `n` labels as `u32`.
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(CODE_MAGIC)?;
        let bits = u32::try_from(self.bits).map_err(|_| Error::Format("code length does not fit in u32".into()))?;
        w.write_all(&bits.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        for id in &self.doc_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for labels in &self.labels {
            w.write_all(&(labels.len() as u32).to_le_bytes())?;
            for l in labels {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CODE_MAGIC {
            return Err(Error::Format("not a code file (bad magic)".into()));
        }
        let bits = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let stride = words_for(bits);
        let mut words = Vec::with_capacity(count.saturating_mul(stride).min(1 << 24));
        for _ in 0..count * stride {
            words.push(read_u64(&mut r)?);
        }
        let mut ids = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            ids.push(read_u64(&mut r)?);
        }
        let mut index = Self::empty(bits);
        for (i, id) in ids.into_iter().enumerate() {
            let n = read_u32(&mut r)? as usize;
            let mut labels = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                labels.push(read_u32(&mut r)?);
            }
            let code = BinaryCode::from_words(bits, words[i * stride..(i + 1) * stride].to_vec())?;
            index.push(id, &code, labels)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after code file".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    /// One line per document: `<doc_id> <hex code> <labels,csv>`.
    pub fn write_text<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        for (id, code, labels) in self.entries() {
            let csv: Vec<String> = labels.iter().map(u32::to_string).collect();
            writeln!(w, "{id} {} {}", code.to_hex(), csv.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text<R: Read>(bits: usize, r: R) -> Result<Self> {
        let mut index = Self::empty(bits);
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let mut parts = line.split_whitespace();
            let id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| perr("bad doc id".into()))?;
            let code = BinaryCode::from_hex(bits, parts.next().ok_or_else(|| perr("missing code".into()))?)?;
            let labels = match parts.next() {
                None => Vec::new(),
                Some(csv) => csv
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| perr(format!("bad label `{s}`"))))
                    .collect::<Result<_>>()?,
            };
            index.push(id, &code, labels)?;
        }
        Ok(index)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; n];
    read_exact(r, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn code8(byte: u8) -> BinaryCode {
        BinaryCode::from_fn(8, |k| byte >> k & 1 == 1)
    }

    fn naive(entries: &[(DocId, Vec<bool>)], q: &[bool], exclude: Option<DocId>, k: usize) -> Vec<(DocId, u32)> {
        let mut all: Vec<(DocId, u32)> = entries
            .iter()
            .filter(|(id, _)| Some(*id) != exclude)
            .map(|(id, bits)| (*id, bits.iter().zip(q).filter(|(a, b)| a != b).count() as u32))
            .collect();
        all.sort_by_key(|&(id, d)| (d, id));
        all.truncate(k);
        all
    }

    #[test]
    fn empty_and_small_indexes() {
        let idx = CodeIndex::build(8, Vec::new()).unwrap();
        assert!(idx.is_empty());
        assert!(idx.hamming_topk(&code8(0), None, 5).unwrap().hits.is_empty());

        let idx = CodeIndex::build(8, vec![(1, code8(1), vec![0]), (2, code8(2), vec![1]), (3, code8(3), vec![])]).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.lookup(2).unwrap().0, code8(2));
        assert!(idx.lookup(9).is_none());
    }

    #[test]
    fn build_rejects_duplicates_and_mixed_lengths() {
        assert!(CodeIndex::build(8, vec![(1, code8(1), vec![]), (1, code8(2), vec![])]).is_err());
        assert!(CodeIndex::build(8, vec![(1, code8(1), vec![]), (2, BinaryCode::zeros(9), vec![])]).is_err());
    }

    #[test]
    fn hand_ranked_toy_index() {
        // Distances from 0b0000_1111: 0b0000_1111 -> 0, 0b0000_0111 -> 1,
        // 0b1111_0000 -> 8, 0b0011_1100 -> 4, 0b0000_1110 -> 1.
        let idx = CodeIndex::build(
            8,
            vec![
                (10, code8(0b0000_1111), vec![]),
                (30, code8(0b0000_0111), vec![]),
                (20, code8(0b1111_0000), vec![]),
                (40, code8(0b0011_1100), vec![]),
                (25, code8(0b0000_1110), vec![]),
            ],
        )
        .unwrap();
        let res = idx.hamming_topk(&code8(0b0000_1111), None, 10).unwrap();
        assert_eq!(res.hits, vec![(10, 0), (25, 1), (30, 1), (40, 4), (20, 8)]);
        let res = idx.hamming_topk(&code8(0b0000_1111), Some(10), 2).unwrap();
        assert_eq!(res.hits, vec![(25, 1), (30, 1)]);
        let res = idx.hamming_topk(&code8(0b0000_1111), None, 2).unwrap();
        assert_eq!(res.hits, vec![(10, 0), (25, 1)]);
    }

    #[test]
    fn topk_matches_naive_reference() {
        let mut rng = rng_for(11, &[]);
        for trial in 0..300 {
            let bits = [8, 16, 32, 64, 100, 128][trial % 6];
            let n = rng.gen_range(0..60);
            let entries: Vec<(DocId, Vec<bool>)> = (0..n)
                .map(|i| (i as u64 * 3 + 1, (0..bits).map(|_| rng.gen_bool(0.5)).collect()))
                .collect();
            let idx = CodeIndex::build(bits, entries.iter().map(|(id, b)| (*id, BinaryCode::from_bools(b), vec![]))).unwrap();
            let q: Vec<bool> = (0..bits).map(|_| rng.gen_bool(0.5)).collect();
            let k = rng.gen_range(0..70);
            let exclude = if n > 0 && rng.gen_bool(0.5) { Some(entries[rng.gen_range(0..n)].0) } else { None };
            let got = idx.hamming_topk(&BinaryCode::from_bools(&q), exclude, k).unwrap();
            assert_eq!(got.hits, naive(&entries, &q, exclude, k));
        }
    }

    #[test]
    fn precision_examples() {
        let idx = CodeIndex::build(8, (0..5).map(|i| (i, code8(i as u8), vec![1]))).unwrap();
        let q = Query { doc_id: None, code: code8(0), labels: vec![1, 3] };
        assert_eq!(idx.precision_at_k(std::slice::from_ref(&q), 100).unwrap(), 1.0);
        assert!(idx.precision_at_k(&[], 100).is_err());
        let other = Query { doc_id: None, code: code8(0), labels: vec![2] };
        assert_eq!(idx.precision_at_k(&[q, other], 3).unwrap(), 0.5);
    }

    #[test]
    fn binary_and_text_round_trip() {
        let mut rng = rng_for(12, &[]);
        for bits in [0usize, 1, 8, 64, 65, 130] {
            let idx = CodeIndex::build(
                bits,
                (0..7u64).map(|i| (i * 5, BinaryCode::from_fn(bits, |_| rng.gen_bool(0.5)), (0..i as u32 % 3).collect())),
            )
            .unwrap();
            let mut buf = Vec::new();
            idx.write(&mut buf).unwrap();
            assert_eq!(CodeIndex::read(buf.as_slice()).unwrap(), idx);
            if bits > 0 {
                let mut text = Vec::new();
                idx.write_text(&mut text).unwrap();
                assert_eq!(CodeIndex::read_text(bits, text.as_slice()).unwrap(), idx);
            }
        }
        let mut buf = Vec::new();
        CodeIndex::empty(32).write(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 8);
        let back = CodeIndex::read(buf.as_slice()).unwrap();
        assert_eq!((back.bits(), back.len()), (32, 0));
        assert!(CodeIndex::read(&buf[..10]).is_err());
        assert!(CodeIndex::read(&b"NOTCODES\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let (a, b, c) = (BinaryCode::from_words(64, vec![a]).unwrap(), BinaryCode::from_words(64, vec![b]).unwrap(), BinaryCode::from_words(64, vec![c]).unwrap());
            prop_assert_eq!(a.hamming(&b), b.hamming(&a));
            prop_assert!(a.hamming(&c) <= a.hamming(&b) + b.hamming(&c));
        }

        #[test]
        fn precision_bounded_and_order_invariant(seed in any::<u64>(), k in 1usize..20) {
            let mut rng = rng_for(seed, &[]);
            let idx = CodeIndex::build(16, (0..30u64).map(|i| (i, BinaryCode::from_fn(16, |_| rng.gen_bool(0.5)), vec![rng.gen_range(0..3)]))).unwrap();
            let mut qs: Vec<Query> = (0..8).map(|_| Query { doc_id: None, code: BinaryCode::from_fn(16, |_| rng.gen_bool(0.5)), labels: vec![rng.gen_range(0..3)] }).collect();
            let p = idx.precision_at_k(&qs, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            qs.reverse();
            let p2 = idx.precision_at_k(&qs, k).unwrap();
            prop_assert!((p - p2).abs() < 1e-12);
        }
    }
}
