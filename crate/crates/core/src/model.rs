//! The hashing model and the terms of its training objective.
//!
//! Per document pair the loss to minimize is
//!
//! ```text
//! -(recon_1 - lambda KL_1) - (recon_2 - lambda KL_2)
//!     + beta * pairwise(z_1, z_2) + alpha * (clf_1 + clf_2)
//! ```
//!
//! averaged over the pairs of a batch. With `alpha = beta = 0` it reduces to
//! two independent weighted-KL negative ELBOs.

use rand::Rng;

use crate::code::BinaryCode;
use crate::corpus::{labels_overlap, LabelId, TfidfVector, Vocabulary};
use crate::error::{Error, Result};
use crate::estimators::threshold_code;
use crate::nn::{
    axpy, sigmoid, AdamState, ClassifierGrads, DecoderGrads, DenseMatrix, EncoderGrads, LinearClassifier, MlpEncoder,
    ParamSlot, SoftmaxDecoder,
};

/// Architecture choices fixed at model construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub code_bits: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Bernoulli prior probability shared by every code bit.
    pub prior: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { code_bits: 32, hidden: vec![500, 500], dropout: 0.2, prior: 0.5 }
    }
}

/// Objective weights. `alpha` follows a schedule during training; the value
/// here is the one currently in effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lambda: 0.01, alpha: 0.01, beta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PshModel {
    pub encoder: MlpEncoder,
    pub decoder: SoftmaxDecoder,
    pub classifier: LinearClassifier,
    pub prior: Vec<f64>,
    pub hyper: Hyper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub decoder: DecoderGrads,
    pub classifier: ClassifierGrads,
}

impl PshModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, vocab_size: usize, classes: usize, hyper: Hyper, rng: &mut R) -> Result<Self> {
        if cfg.code_bits == 0 {
            return Err(Error::Validation("code_bits must be positive".into()));
        }
        let encoder = MlpEncoder::new(vocab_size, &cfg.hidden, cfg.code_bits, cfg.dropout, rng)?;
        let decoder = SoftmaxDecoder::new(cfg.code_bits, vocab_size, rng);
        let classifier = LinearClassifier::new(cfg.code_bits, classes, rng);
        let model = PshModel { encoder, decoder, classifier, prior: vec![cfg.prior; cfg.code_bits], hyper };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.code_bits();
        if self.decoder.code_bits() != k || self.classifier.weight.rows() != k || self.prior.len() != k {
            return Err(Error::Shape("inconsistent code length across model components".into()));
        }
        if self.encoder.input_dim() != self.decoder.vocab_size() {
            return Err(Error::Shape(format!(
                "encoder input {} differs from decoder vocabulary {}",
                self.encoder.input_dim(),
                self.decoder.vocab_size()
            )));
        }
        if self.prior.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(Error::Validation("prior probabilities must lie in (0, 1)".into()));
        }
        let h = self.hyper;
        if !(h.lambda >= 0.0) || !(h.alpha >= 0.0) || !(h.beta >= 0.0) {
            return Err(Error::Validation(format!("objective weights must be nonnegative: {h:?}")));
        }
        Ok(())
    }

    pub fn code_bits(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.vocab_size()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
            classifier: self.classifier.zero_grads(),
        }
    }

    /// Hash a document: encoder means thresholded at 0.5, no sampling.
    pub fn encode(&self, input: &TfidfVector) -> Result<BinaryCode> {
        Ok(threshold_code(&self.encoder.logits(&input.terms)?))
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("enc.{l}.weight"), layer.weight.values()));
            out.push((format!("enc.{l}.bias"), layer.bias.as_slice()));
        }
        out.push(("dec.embedding".into(), self.decoder.embedding.values()));
        out.push(("dec.bias".into(), self.decoder.bias.as_slice()));
        out.push(("clf.weight".into(), self.classifier.weight.values()));
        out.push(("clf.bias".into(), self.classifier.bias.as_slice()));
        out
    }

    /// One Adam step over every trainable tensor.
    pub fn apply_gradients(&mut self, adam: &mut AdamState, grads: &ModelGrads) -> Result<()> {
        let mut slots = Vec::new();
        for (l, (layer, g)) in self.encoder.layers.iter_mut().zip(&grads.encoder).enumerate() {
            slots.push(ParamSlot { name: format!("enc.{l}.weight"), value: layer.weight.values_mut(), grad: &g.weight });
            slots.push(ParamSlot { name: format!("enc.{l}.bias"), value: &mut layer.bias, grad: &g.bias });
        }
        slots.push(ParamSlot { name: "dec.embedding".into(), value: self.decoder.embedding.values_mut(), grad: &grads.decoder.embedding });
        slots.push(ParamSlot { name: "dec.bias".into(), value: &mut self.decoder.bias, grad: &grads.decoder.bias });
        slots.push(ParamSlot { name: "clf.weight".into(), value: self.classifier.weight.values_mut(), grad: &grads.classifier.weight });
        slots.push(ParamSlot { name: "clf.bias".into(), value: &mut self.classifier.bias, grad: &grads.classifier.bias });
        adam.apply(slots)
    }
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            a.add_assign(b);
        }
        self.decoder.add_assign(&other.decoder);
        self.classifier.add_assign(&other.classifier);
    }

    fn slices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for g in &mut self.encoder {
            out.push(&mut g.weight);
            out.push(&mut g.bias);
        }
        out.push(&mut self.decoder.embedding);
        out.push(&mut self.decoder.bias);
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&mut self) -> f64 {
        self.slices_mut().into_iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if max_norm > 0.0 && n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Weighted reconstruction log-likelihood `sum_w tfidf_w log p(w | z)`.
pub fn reconstruction_ll(decoder: &SoftmaxDecoder, z: &BinaryCode, doc: &TfidfVector) -> Result<f64> {
    decoder.reconstruction(&z.to_f64(), doc)
}

const KL_EPS: f64 = 1e-12;

/// Closed-form `KL(prod Bern(sigmoid(psi)) || prod Bern(prior))`.
pub fn kl_bernoulli(psi: &[f64], prior: &[f64]) -> f64 {
    psi.iter()
        .zip(prior)
        .map(|(&p, &g)| {
            let q = sigmoid(p).clamp(KL_EPS, 1.0 - KL_EPS);
            q * (q / g).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - g)).ln()
        })
        .sum()
}

/// `d KL / d psi_k = q (1 - q) (ln(q / gamma) - ln((1 - q) / (1 - gamma)))`.
pub fn kl_gradient(psi: &[f64], prior: &[f64]) -> Vec<f64> {
    psi.iter()
        .zip(prior)
        .map(|(&p, &g)| {
            let q = sigmoid(p);
            let qc = q.clamp(KL_EPS, 1.0 - KL_EPS);
            q * (1.0 - q) * ((qc / g).ln() - ((1.0 - qc) / (1.0 - g)).ln())
        })
        .collect()
}

pub fn classifier_loss(classifier: &LinearClassifier, z: &BinaryCode, labels: &[LabelId]) -> Result<f64> {
    classifier.loss(&z.to_f64(), labels)
}

fn pair_sign(y1: &[LabelId], y2: &[LabelId]) -> f64 {
    if labels_overlap(y1, y2) {
        1.0
    } else {
        -1.0
    }
}

/// `+d` for pairs sharing a label, `-d` otherwise, with `d` the normalized
/// Hamming distance.
pub fn pairwise_loss(z1: &BinaryCode, z2: &BinaryCode, y1: &[LabelId], y2: &[LabelId]) -> f64 {
    let k = z1.len();
    if k == 0 {
        return 0.0;
    }
    pair_sign(y1, y2) * z1.hamming(z2) as f64 / k as f64
}

/// Pairwise loss on relaxed codes via `d = sum(a + b - 2ab) / K`, which equals
/// the normalized Hamming distance on binary inputs. Returns the value and
/// the gradients with respect to each code.
pub fn pairwise_relaxed(z1: &[f64], z2: &[f64], y1: &[LabelId], y2: &[LabelId]) -> (f64, Vec<f64>, Vec<f64>) {
    let k = z1.len().max(1) as f64;
    let s = pair_sign(y1, y2);
    let d: f64 = z1.iter().zip(z2).map(|(a, b)| a + b - 2.0 * a * b).sum::<f64>() / k;
    let g1 = z2.iter().map(|b| s * (1.0 - 2.0 * b) / k).collect();
    let g2 = z1.iter().map(|a| s * (1.0 - 2.0 * a) / k).collect();
    (s * d, g1, g2)
}

/// One document of a training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc_id: u64,
    pub input: TfidfVector,
    pub labels: Vec<LabelId>,
}

/// Two aligned mini-batches of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub first: Vec<Example>,
    pub second: Vec<Example>,
}

impl PairBatch {
    pub fn new(first: Vec<Example>, second: Vec<Example>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::Shape(format!("pair batch sides differ: {} vs {}", first.len(), second.len())));
        }
        Ok(PairBatch { first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// Components of the objective, each already averaged over pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Negative weighted reconstruction log-likelihood, both sides.
    pub recon: f64,
    /// Unweighted KL, both sides.
    pub kl: f64,
    pub clf: f64,
    pub pairwise: f64,
    pub total: f64,
}

/// Evaluate the pair objective at given codes, with logits from the encoder
/// in evaluation mode.
pub fn psh_objective(model: &PshModel, pair: &PairBatch, codes: &[(BinaryCode, BinaryCode)]) -> Result<LossParts> {
    if codes.len() != pair.len() {
        return Err(Error::Shape(format!("{} code pairs for {} document pairs", codes.len(), pair.len())));
    }
    if pair.is_empty() {
        return Err(Error::Validation("empty pair batch".into()));
    }
    let h = model.hyper;
    let mut acc = LossParts::default();
    for ((a, b), (za, zb)) in pair.first.iter().zip(&pair.second).zip(codes) {
        let side = |ex: &Example, z: &BinaryCode| -> Result<(f64, f64, f64)> {
            let psi = model.encoder.logits(&ex.input.terms)?;
            let recon = -reconstruction_ll(&model.decoder, z, &ex.input)?;
            let kl = kl_bernoulli(&psi, &model.prior);
            let clf = if h.alpha > 0.0 { classifier_loss(&model.classifier, z, &ex.labels)? } else { 0.0 };
            Ok((recon, kl, clf))
        };
        let (ra, ka, ca) = side(a, za)?;
        let (rb, kb, cb) = side(b, zb)?;
        let pw = if h.beta > 0.0 { pairwise_loss(za, zb, &a.labels, &b.labels) } else { 0.0 };
        acc.recon += ra + rb;
        acc.kl += ka + kb;
        acc.clf += ca + cb;
        acc.pairwise += pw;
        acc.total += ra + rb + h.lambda * (ka + kb) + h.beta * pw + h.alpha * (ca + cb);
    }
    let n = pair.len() as f64;
    Ok(LossParts { recon: acc.recon / n, kl: acc.kl / n, clf: acc.clf / n, pairwise: acc.pairwise / n, total: acc.total / n })
}

/// The `n` tokens whose embedding columns are closest in cosine distance to
/// `token`'s, excluding `token`; ties go to the smaller id.
pub fn embedding_neighbors(decoder: &SoftmaxDecoder, vocabulary: &Vocabulary, token: &str, n: usize) -> Result<Vec<(String, f64)>> {
    let query = vocabulary.id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))? as usize;
    let e: &DenseMatrix = &decoder.embedding;
    if e.cols() != vocabulary.len() {
        return Err(Error::Shape(format!("embedding has {} columns, vocabulary {}", e.cols(), vocabulary.len())));
    }
    let mut norms = vec![0.0; e.cols()];
    let mut dots = vec![0.0; e.cols()];
    for k in 0..e.rows() {
        let row = e.row(k);
        let qk = row[query];
        for (w, &v) in row.iter().enumerate() {
            norms[w] += v * v;
        }
        axpy(qk, row, &mut dots);
    }
    let qn = norms[query].sqrt();
    let mut scored: Vec<(f64, usize)> = (0..e.cols())
        .filter(|&w| w != query)
        .map(|w| {
            let denom = qn * norms[w].sqrt();
            let cos = if denom > 0.0 { dots[w] / denom } else { 0.0 };
            (1.0 - cos, w)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(d, w)| (vocabulary.token(w as u32).unwrap_or_default().to_string(), d))
        .collect())
}
