//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic            8 bytes  "SHCKPT01"
//! code_bits        u32
//! vocab_size       u64
//! classes          u32
//! hidden_layers    u32, then one u64 per hidden layer
//! dropout, lambda, alpha, beta   f64 each
//! tensor_count     u32
//! tensor table     per tensor: name_len u32, name bytes, rows u64, cols u64
//! payloads         per tensor, in table order: rows*cols f64
//! vocabulary       count u64, then per token: len u32, UTF-8 bytes
//! ```
//!
//! Tensors: `enc.{l}.weight` (in x out), `enc.{l}.bias`, `dec.embedding`
//! (K x |V|), `dec.bias`, `clf.weight` (K x C), `clf.bias`, `prior`, `idf`.
//! Vectors are stored as `1 x n`.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{Idf, Vocabulary};
use crate::error::{Error, Result};
use crate::index::{read_bytes, read_u32, read_u64};
use crate::model::{Hyper, PshModel};
use crate::nn::{DenseMatrix, Linear, LinearClassifier, MlpEncoder, SoftmaxDecoder};

const MAGIC: &[u8; 8] = b"SHCKPT01";

/// Everything needed to encode new documents: the model plus the
/// vocabulary and the training-split idf it was fit against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PshModel,
    pub vocabulary: Vocabulary,
    pub idf: Idf,
}

struct Tensor<'a> {
    name: String,
    rows: usize,
    cols: usize,
    values: &'a [f64],
}

fn f64_bytes(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

impl Checkpoint {
    pub fn new(model: PshModel, vocabulary: Vocabulary, idf: Idf) -> Result<Self> {
        model.validate()?;
        if vocabulary.len() != model.vocab_size() || idf.weights.len() != model.vocab_size() {
            return Err(Error::Shape(format!(
                "model vocabulary {} vs tokens {} vs idf {}",
                model.vocab_size(),
                vocabulary.len(),
                idf.weights.len()
            )));
        }
        Ok(Checkpoint { model, vocabulary, idf })
    }

    fn tensors(&self) -> Vec<Tensor<'_>> {
        let m = &self.model;
        let mut out = Vec::new();
        for (l, layer) in m.encoder.layers.iter().enumerate() {
            out.push(Tensor { name: format!("enc.{l}.weight"), rows: layer.input_dim(), cols: layer.output_dim(), values: layer.weight.values() });
            out.push(Tensor { name: format!("enc.{l}.bias"), rows: 1, cols: layer.bias.len(), values: &layer.bias });
        }
        let e = &m.decoder.embedding;
        out.push(Tensor { name: "dec.embedding".into(), rows: e.rows(), cols: e.cols(), values: e.values() });
        out.push(Tensor { name: "dec.bias".into(), rows: 1, cols: m.decoder.bias.len(), values: &m.decoder.bias });
        let w = &m.classifier.weight;
        out.push(Tensor { name: "clf.weight".into(), rows: w.rows(), cols: w.cols(), values: w.values() });
        out.push(Tensor { name: "clf.bias".into(), rows: 1, cols: m.classifier.bias.len(), values: &m.classifier.bias });
        out.push(Tensor { name: "prior".into(), rows: 1, cols: m.prior.len(), values: &m.prior });
        out.push(Tensor { name: "idf".into(), rows: 1, cols: self.idf.weights.len(), values: &self.idf.weights });
        out
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let m = &self.model;
        w.write_all(MAGIC)?;
        w.write_all(&to_u32(m.code_bits(), "code length")?.to_le_bytes())?;
        w.write_all(&(m.vocab_size() as u64).to_le_bytes())?;
        w.write_all(&to_u32(m.classifier.classes(), "class count")?.to_le_bytes())?;
        let hidden = m.encoder.hidden_sizes();
        w.write_all(&to_u32(hidden.len(), "layer count")?.to_le_bytes())?;
        for h in hidden {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        for v in [m.encoder.dropout, m.hyper.lambda, m.hyper.alpha, m.hyper.beta] {
            f64_bytes(&mut w, v)?;
        }
        let tensors = self.tensors();
        w.write_all(&to_u32(tensors.len(), "tensor count")?.to_le_bytes())?;
        for t in &tensors {
            w.write_all(&to_u32(t.name.len(), "name length")?.to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
        }
        for t in &tensors {
            for &v in t.values {
                f64_bytes(&mut w, v)?;
            }
        }
        w.write_all(&(self.vocabulary.len() as u64).to_le_bytes())?;
        for tok in self.vocabulary.tokens() {
            w.write_all(&to_u32(tok.len(), "token length")?.to_le_bytes())?;
            w.write_all(tok.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        if read_bytes(&mut r, 8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let code_bits = read_u32(&mut r)? as usize;
        let vocab_size = read_u64(&mut r)? as usize;
        let classes = read_u32(&mut r)? as usize;
        let n_hidden = read_u32(&mut r)? as usize;
        if n_hidden > 1024 {
            return Err(Error::Format(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden: Vec<usize> = (0..n_hidden).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
        let dropout = read_f64(&mut r)?;
        let hyper = Hyper { lambda: read_f64(&mut r)?, alpha: read_f64(&mut r)?, beta: read_f64(&mut r)? };
        let n_tensors = read_u32(&mut r)? as usize;
        let mut table = Vec::with_capacity(n_tensors.min(4096));
        for _ in 0..n_tensors {
            let len = read_u32(&mut r)? as usize;
            if len > 4096 {
                return Err(Error::Format("implausible tensor name length".into()));
            }
            let name = String::from_utf8(read_bytes(&mut r, len)?).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            table.push((name, rows, cols));
        }
        let mut tensors: HashMap<String, (usize, usize, Vec<f64>)> = HashMap::new();
        for (name, rows, cols) in table {
            let n = rows.checked_mul(cols).ok_or_else(|| Error::Format(format!("tensor `{name}` too large")))?;
            let mut values = Vec::with_capacity(n.min(1 << 26));
            for _ in 0..n {
                values.push(read_f64(&mut r)?);
            }
            if tensors.insert(name.clone(), (rows, cols, values)).is_some() {
                return Err(Error::Format(format!("tensor `{name}` repeated")));
            }
        }
        let n_tokens = read_u64(&mut r)? as usize;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 24));
        for _ in 0..n_tokens {
            let len = read_u32(&mut r)? as usize;
            tokens.push(String::from_utf8(read_bytes(&mut r, len)?).map_err(|_| Error::Format("token not UTF-8".into()))?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }

        let mut take = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let (r0, c0, v) = tensors.remove(name).ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            if (r0, c0) != (rows, cols) {
                return Err(Error::Format(format!("tensor `{name}` is {r0}x{c0}, expected {rows}x{cols}")));
            }
            Ok(v)
        };
        let mut dims = vec![vocab_size];
        dims.extend(&hidden);
        dims.push(code_bits);
        let mut layers = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            let weight = DenseMatrix::from_vec(w[0], w[1], take(&format!("enc.{l}.weight"), w[0], w[1])?)?;
            let bias = take(&format!("enc.{l}.bias"), 1, w[1])?;
            layers.push(Linear { weight, bias });
        }
        let encoder = MlpEncoder::from_layers(layers, dropout)?;
        let decoder = SoftmaxDecoder::from_parts(
            DenseMatrix::from_vec(code_bits, vocab_size, take("dec.embedding", code_bits, vocab_size)?)?,
            take("dec.bias", 1, vocab_size)?,
        )?;
        let classifier = LinearClassifier {
            weight: DenseMatrix::from_vec(code_bits, classes, take("clf.weight", code_bits, classes)?)?,
            bias: take("clf.bias", 1, classes)?,
        };
        let prior = take("prior", 1, code_bits)?;
        let idf = Idf { weights: take("idf", 1, vocab_size)? };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor `{extra}`")));
        }
        let model = PshModel { encoder, decoder, classifier, prior, hyper };
        Checkpoint::new(model, Vocabulary::from_tokens(tokens)?, idf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::rng_for;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { code_bits: 5, hidden: vec![4, 3], dropout: 0.2, prior: 0.3 };
        let model = PshModel::new(&cfg, 7, 3, Hyper { lambda: 0.5, alpha: 0.07, beta: 0.2 }, &mut rng_for(1, &[])).unwrap();
        let idf = Idf { weights: (0..7).map(|i| i as f64 * 0.25).collect() };
        Checkpoint::new(model, Vocabulary::synthetic(7), idf).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert!(Checkpoint::read(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Checkpoint::read(extra.as_slice()).is_err());
        let mut bad = buf;
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        let ck = sample();
        assert!(Checkpoint::new(ck.model.clone(), Vocabulary::synthetic(6), ck.idf.clone()).is_err());
    }
}
