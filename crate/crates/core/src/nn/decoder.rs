use rand::Rng;

use super::matrix::{axpy, dot, log_softmax_in_place, DenseMatrix};
use crate::code::BinaryCode;
use crate::corpus::TfidfVector;
use crate::error::{Error, Result};

/// Softmax word decoder: `log p(w | z) = log softmax(z^T E + b)_w`, with `E`
/// the `K x |V|` word-embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxDecoder {
    pub embedding: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub embedding: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DecoderGrads {
    pub fn add_assign(&mut self, other: &DecoderGrads) {
        axpy(1.0, &other.embedding, &mut self.embedding);
        axpy(1.0, &other.bias, &mut self.bias);
    }
}

impl SoftmaxDecoder {
    pub fn new<R: Rng + ?Sized>(code_bits: usize, vocab: usize, rng: &mut R) -> Self {
        SoftmaxDecoder { embedding: DenseMatrix::glorot(code_bits, vocab, rng), bias: vec![0.0; vocab] }
    }

    pub fn from_parts(embedding: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if embedding.cols() != bias.len() {
            return Err(Error::Shape(format!("embedding has {} columns but bias has {}", embedding.cols(), bias.len())));
        }
        Ok(SoftmaxDecoder { embedding, bias })
    }

    pub fn code_bits(&self) -> usize {
        self.embedding.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.bias.len()
    }

    pub fn zero_grads(&self) -> DecoderGrads {
        DecoderGrads { embedding: vec![0.0; self.embedding.values().len()], bias: vec![0.0; self.bias.len()] }
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.code_bits() {
            return Err(Error::Shape(format!("code of length {} for decoder with K={}", z.len(), self.code_bits())));
        }
        Ok(())
    }

    /// Log-probabilities over the vocabulary for a (possibly relaxed) code.
    pub fn log_probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        let mut logits = self.bias.clone();
        for (k, &zk) in z.iter().enumerate() {
            if zk != 0.0 {
                axpy(zk, self.embedding.row(k), &mut logits);
            }
        }
        log_softmax_in_place(&mut logits);
        Ok(logits)
    }

    pub fn log_probs_code(&self, z: &BinaryCode) -> Result<Vec<f64>> {
        self.log_probs(&z.to_f64())
    }

    /// Weighted reconstruction log-likelihood `sum_w weight_w log p(w | z)`.
    pub fn reconstruction(&self, z: &[f64], doc: &TfidfVector) -> Result<f64> {
        let lp = self.log_probs(z)?;
        weighted_ll(&lp, doc)
    }

    /// Accumulate `upstream * d(reconstruction)/d(theta)` into `grads` and
    /// return the reconstruction value with `upstream * d(reconstruction)/dz`.
    pub fn reconstruction_backward(&self, z: &[f64], doc: &TfidfVector, upstream: f64, grads: &mut DecoderGrads) -> Result<(f64, Vec<f64>)> {
        let lp = self.log_probs(z)?;
        let value = weighted_ll(&lp, doc)?;
        let total: f64 = doc.total_weight();
        let mut g: Vec<f64> = lp.iter().map(|&l| -upstream * total * l.exp()).collect();
        for &(t, w) in &doc.terms {
            g[t as usize] += upstream * w;
        }
        axpy(1.0, &g, &mut grads.bias);
        let v = self.vocab_size();
        let mut dz = vec![0.0; z.len()];
        for (k, &zk) in z.iter().enumerate() {
            if zk != 0.0 {
                axpy(zk, &g, &mut grads.embedding[k * v..(k + 1) * v]);
            }
            dz[k] = dot(self.embedding.row(k), &g);
        }
        Ok((value, dz))
    }
}

fn weighted_ll(log_probs: &[f64], doc: &TfidfVector) -> Result<f64> {
    let mut s = 0.0;
    for &(t, w) in &doc.terms {
        let lp = log_probs
            .get(t as usize)
            .ok_or_else(|| Error::Shape(format!("term id {t} outside decoder vocabulary of {}", log_probs.len())))?;
        s += w * lp;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::log_sum_exp;
    use crate::rng::rng_for;

    #[test]
    fn zero_code_zero_bias_is_uniform() {
        let dec = SoftmaxDecoder::new(3, 7, &mut rng_for(0, &[]));
        let lp = dec.log_probs(&[0.0; 3]).unwrap();
        for l in lp {
            assert!((l + 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_word_hand_example() {
        let dec = SoftmaxDecoder::from_parts(DenseMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(), vec![0.0, 0.0]).unwrap();
        let lp = dec.log_probs(&[1.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((lp[0] - (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((lp[1] - (1.0 / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((lp[0] + 0.3133).abs() < 1e-4);
        assert!((lp[1] + 1.3133).abs() < 1e-4);
    }

    #[test]
    fn bias_shift_invariance() {
        let mut rng = rng_for(1, &[]);
        let dec = SoftmaxDecoder::new(4, 9, &mut rng);
        let mut shifted = dec.clone();
        for b in &mut shifted.bias {
            *b += 3.25;
        }
        let z = [1.0, 0.0, 1.0, 1.0];
        let a = dec.log_probs(&z).unwrap();
        let b = shifted.log_probs(&z).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_even_with_large_logits() {
        let emb = DenseMatrix::from_vec(2, 3, vec![400.0, -300.0, 0.0, 500.0, 1.0, -2.0]).unwrap();
        let dec = SoftmaxDecoder::from_parts(emb, vec![0.0, 1.0, 2.0]).unwrap();
        let lp = dec.log_probs(&[1.0, 1.0]).unwrap();
        assert!(log_sum_exp(&lp).abs() <= 1e-12);
    }

    #[test]
    fn shape_errors() {
        let dec = SoftmaxDecoder::new(3, 4, &mut rng_for(2, &[]));
        assert!(dec.log_probs(&[1.0]).is_err());
        let doc = TfidfVector { terms: vec![(9, 1.0)] };
        assert!(dec.reconstruction(&[0.0; 3], &doc).is_err());
    }
}
