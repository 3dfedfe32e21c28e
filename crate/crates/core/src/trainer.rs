//! The training loop.
//!
//! Each iteration draws two index-aligned mini-batches (one in unsupervised
//! mode), samples a code per document, and assembles gradients: logit
//! gradients through the configured estimator plus the closed-form KL
//! gradient, decoder and classifier gradients by direct backprop at the
//! sampled code. Per-document randomness comes from the master seed, and
//! per-chunk gradient sums are combined in a fixed order, so results do not
//! depend on the worker count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::code::BinaryCode;
use crate::config::{parse_bool, parse_value};
use crate::corpus::{Corpus, DocId, LabelId, Split, TfidfVector};
use crate::error::{Error, Result};
use crate::estimators::{arm_gradient, gs_relaxed_sample, sample_bernoulli, st_passthrough, EstimatorTag, Relaxation};
use crate::index::{CodeIndex, Query};
use crate::model::{kl_bernoulli, kl_gradient, pairwise_relaxed, Hyper, ModelGrads, PshModel};
use crate::nn::{AdamState, EncoderCache, Mode};
use crate::rng::{open_uniforms, rng_for, EngineRng};

const STREAM_PERMUTATION: u64 = 0x7065_726d;
const STREAM_STEP: u64 = 0x7374_6570;
const STREAM_EVAL: u64 = 0x6576_616c;
/// Slots of a step are split into this many contiguous chunks, each summed
/// into its own gradient buffer.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Reconstruction plus weighted KL only (ARM-DVAE style).
    Unsupervised,
    /// Adds the classifier and pairwise terms over document pairs.
    Supervised,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Unsupervised => "unsupervised",
            TrainMode::Supervised => "supervised",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unsupervised" | "dvae" => Ok(TrainMode::Unsupervised),
            "supervised" | "psh" => Ok(TrainMode::Supervised),
            other => Err(Error::Validation(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Linear ramp from `start` to `end` over `ramp_epochs`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampSchedule {
    pub start: f64,
    pub end: f64,
    pub ramp_epochs: usize,
}

impl RampSchedule {
    pub fn value(&self, epoch: usize) -> f64 {
        if self.ramp_epochs == 0 || epoch >= self.ramp_epochs {
            return self.end;
        }
        self.start + (self.end - self.start) * epoch as f64 / self.ramp_epochs as f64
    }
}

/// Geometric decay `init * decay^epoch`, floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySchedule {
    pub init: f64,
    pub decay: f64,
    pub floor: f64,
}

impl DecaySchedule {
    pub fn value(&self, epoch: usize) -> f64 {
        let e = i32::try_from(epoch).unwrap_or(i32::MAX);
        (self.init * self.decay.powi(e)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub estimator: EstimatorTag,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: RampSchedule,
    pub temperature: DecaySchedule,
    /// Bit-flip probability on codes fed to the decoder, unsupervised only.
    pub code_noise: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
    /// Cutoff for validation precision.
    pub eval_k: usize,
    /// Epochs between validation passes; 0 disables them.
    pub eval_every: usize,
    /// Return the epoch with the best validation precision instead of the
    /// last one.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Supervised,
            estimator: EstimatorTag::Arm,
            epochs: 100,
            batch_size: 100,
            learning_rate: 5e-4,
            lambda: 0.01,
            beta: 0.05,
            alpha: RampSchedule { start: 0.01, end: 0.1, ramp_epochs: 10 },
            temperature: DecaySchedule { init: 1.0, decay: 0.96, floor: 0.1 },
            code_noise: 0.1,
            clip_norm: 5.0,
            seed: 0,
            eval_k: 100,
            eval_every: 1,
            select_best: true,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "mode",
        "estimator",
        "epochs",
        "batch_size",
        "learning_rate",
        "lambda",
        "beta",
        "alpha_start",
        "alpha_end",
        "alpha_ramp_epochs",
        "gs_temperature",
        "gs_decay",
        "gs_min_temperature",
        "code_noise",
        "clip_norm",
        "seed",
        "eval_k",
        "eval_every",
        "select_best",
    ];

    /// Set one key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let cfg_err = |e: Error| Error::Config { key: key.to_string(), msg: e.to_string() };
        match key {
            "mode" => self.mode = value.parse().map_err(cfg_err)?,
            "estimator" => self.estimator = value.parse().map_err(cfg_err)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "alpha_start" => self.alpha.start = parse_value(key, value)?,
            "alpha_end" => self.alpha.end = parse_value(key, value)?,
            "alpha_ramp_epochs" => self.alpha.ramp_epochs = parse_value(key, value)?,
            "gs_temperature" => self.temperature.init = parse_value(key, value)?,
            "gs_decay" => self.temperature.decay = parse_value(key, value)?,
            "gs_min_temperature" => self.temperature.floor = parse_value(key, value)?,
            "code_noise" => self.code_noise = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_k" => self.eval_k = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "select_best" => self.select_best = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical `(key, value)` snapshot, in [`TrainConfig::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let values = [
            self.mode.to_string(),
            self.estimator.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.learning_rate.to_string(),
            self.lambda.to_string(),
            self.beta.to_string(),
            self.alpha.start.to_string(),
            self.alpha.end.to_string(),
            self.alpha.ramp_epochs.to_string(),
            self.temperature.init.to_string(),
            self.temperature.decay.to_string(),
            self.temperature.floor.to_string(),
            self.code_noise.to_string(),
            self.clip_norm.to_string(),
            self.seed.to_string(),
            self.eval_k.to_string(),
            self.eval_every.to_string(),
            self.select_best.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        for (key, v) in [("lambda", self.lambda), ("beta", self.beta), ("alpha_start", self.alpha.start), ("alpha_end", self.alpha.end)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, format!("must be a nonnegative number, got {v}"));
            }
        }
        let t = self.temperature;
        if !(t.init > 0.0 && t.init.is_finite()) {
            return bad("gs_temperature", format!("must be positive, got {}", t.init));
        }
        if !(t.decay > 0.0 && t.decay <= 1.0) {
            return bad("gs_decay", format!("must lie in (0, 1], got {}", t.decay));
        }
        if !(t.floor > 0.0 && t.floor <= t.init) {
            return bad("gs_min_temperature", format!("must lie in (0, gs_temperature], got {}", t.floor));
        }
        if !(0.0..1.0).contains(&self.code_noise) {
            return bad("code_noise", format!("must lie in [0, 1), got {}", self.code_noise));
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm", format!("must be nonnegative, got {}", self.clip_norm));
        }
        if self.eval_k == 0 {
            return bad("eval_k", "must be at least 1".into());
        }
        Ok(())
    }
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-document `recon + kl` over the epoch's training steps.
    pub neg_elbo: f64,
    /// Mean per-document negative weighted reconstruction log-likelihood.
    pub recon: f64,
    /// Mean per-document KL to the prior (unweighted).
    pub kl: f64,
    /// Mean per-document classifier cross entropy; 0 when unsupervised.
    pub clf: f64,
    /// Mean per-pair pairwise loss; 0 when unsupervised.
    pub pairwise: f64,
    pub val_p100: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, when validation selection ran.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// State captured when training hits a non-finite value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSnapshot {
    pub epoch: usize,
    pub iteration: usize,
    pub reason: String,
    pub recon: f64,
    pub kl: f64,
    pub clf: f64,
    pub pairwise: f64,
    pub grad_norm: Option<f64>,
    pub doc_ids: Vec<DocId>,
}

impl fmt::Display for DiagnosticSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at epoch {} iteration {}", self.reason, self.epoch, self.iteration)
    }
}

/// Observation points inside [`train_with_hooks`].
pub trait TrainHooks {
    /// Called with the ids of every document whose terms feed the next
    /// parameter update.
    fn on_gradient_batch(&mut self, _doc_ids: &[DocId]) {}

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Flip each bit independently with probability `p`.
pub fn inject_code_noise<R: Rng + ?Sized>(z: &BinaryCode, p: f64, rng: &mut R) -> Result<BinaryCode> {
    Ok(z.xor(&noise_mask(z.len(), p, rng)?))
}

pub fn noise_mask<R: Rng + ?Sized>(bits: usize, p: f64, rng: &mut R) -> Result<BinaryCode> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Validation(format!("flip probability {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(BinaryCode::zeros(bits));
    }
    Ok(BinaryCode::from_fn(bits, |_| rng.gen::<f64>() < p))
}

/// The other half of a training pair, as seen from one document.
#[derive(Debug, Clone, Copy)]
pub struct Partner<'a> {
    /// Partner's forward code value (binary, or relaxed under GS).
    pub code: &'a [f64],
    pub labels: &'a [LabelId],
}

/// Everything a document contributes to the loss apart from the KL term:
/// `-recon(noisy z) + alpha * clf(z) + beta * pairwise(z, partner)`.
fn document_score(model: &PshModel, input: &TfidfVector, labels: &[LabelId], partner: Option<Partner<'_>>, noise: Option<&BinaryCode>, z: &BinaryCode) -> Result<f64> {
    let h = model.hyper;
    let fed = match noise {
        Some(m) => z.xor(m),
        None => z.clone(),
    };
    let zf = z.to_f64();
    let mut s = -model.decoder.reconstruction(&fed.to_f64(), input)?;
    if h.alpha > 0.0 {
        s += h.alpha * model.classifier.loss(&zf, labels)?;
    }
    if let (Some(p), true) = (partner, h.beta > 0.0) {
        s += h.beta * pairwise_relaxed(&zf, p.code, labels, p.labels).0;
    }
    Ok(s)
}

/// ARM estimate of the logit gradient of one document's loss, with the
/// closed-form `lambda * dKL/dpsi` added. Uses `model.hyper` for the weights.
pub fn arm_phi_gradient_step(
    model: &PshModel,
    input: &TfidfVector,
    labels: &[LabelId],
    psi: &[f64],
    u: &[f64],
    partner: Option<Partner<'_>>,
    noise: Option<&BinaryCode>,
) -> Result<Vec<f64>> {
    let arm = arm_gradient(|z| document_score(model, input, labels, partner, noise, z), psi, u)?;
    let mut g = arm.gradient;
    add_kl_gradient(model, psi, &mut g);
    Ok(g)
}

fn add_kl_gradient(model: &PshModel, psi: &[f64], g: &mut [f64]) {
    let lambda = model.hyper.lambda;
    if lambda != 0.0 {
        for (gi, k) in g.iter_mut().zip(kl_gradient(psi, &model.prior)) {
            *gi += lambda * k;
        }
    }
}

/// Per-document forward state for one step.
struct Forward {
    psi: Vec<f64>,
    cache: EncoderCache,
    u: Vec<f64>,
    mask: Option<BinaryCode>,
    /// Value passed on to decoder, classifier and partner: the sampled code,
    /// or the relaxed sample under GS.
    value: Vec<f64>,
    relax: Option<Relaxation>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    recon: f64,
    kl: f64,
    clf: f64,
    pairwise: f64,
}

impl Stats {
    fn add(&mut self, o: &Stats) {
        self.recon += o.recon;
        self.kl += o.kl;
        self.clf += o.clf;
        self.pairwise += o.pairwise;
    }

    fn finite(&self) -> bool {
        self.recon.is_finite() && self.kl.is_finite() && self.clf.is_finite() && self.pairwise.is_finite()
    }
}

struct StepContext<'a> {
    model: &'a PshModel,
    estimator: EstimatorTag,
    supervised: bool,
    temperature: f64,
    code_noise: f64,
    inputs: &'a [TfidfVector],
    corpus: &'a Corpus,
}

impl StepContext<'_> {
    fn labels(&self, doc: usize) -> &[LabelId] {
        &self.corpus.documents()[doc].labels
    }

    fn forward(&self, doc: usize, rng: &mut EngineRng) -> Result<Forward> {
        let model = self.model;
        let (psi, cache) = model.encoder.forward(&self.inputs[doc].terms, Mode::Train, rng)?;
        let u = open_uniforms(rng, psi.len());
        let mask = if self.supervised || self.code_noise == 0.0 { None } else { Some(noise_mask(psi.len(), self.code_noise, rng)?) };
        let code = sample_bernoulli(&psi, &u);
        let (value, relax) = match self.estimator {
            EstimatorTag::Arm => (code.to_f64(), None),
            EstimatorTag::StraightThrough => {
                let r = st_passthrough(&psi, &code);
                (r.value.clone(), Some(r))
            }
            EstimatorTag::GumbelSoftmax => {
                let r = gs_relaxed_sample(&psi, &u, self.temperature)?;
                (r.value.clone(), Some(r))
            }
        };
        Ok(Forward { psi, cache, u, mask, value, relax })
    }

    /// Accumulate one document's decoder and classifier gradients (unscaled)
    /// into `grads` and return its logit gradient.
    fn backward(&self, doc: usize, fwd: &Forward, partner: Option<Partner<'_>>, grads: &mut ModelGrads) -> Result<(Stats, Vec<f64>)> {
        let model = self.model;
        let h = model.hyper;
        let input = &self.inputs[doc];
        let labels = self.labels(doc);
        let fed: Vec<f64> = match &fwd.mask {
            Some(m) => fwd.value.iter().enumerate().map(|(k, &v)| if m.get(k) { 1.0 - v } else { v }).collect(),
            None => fwd.value.clone(),
        };
        let mut stats = Stats { kl: kl_bernoulli(&fwd.psi, &model.prior), ..Stats::default() };
        let (ll, dz_recon) = model.decoder.reconstruction_backward(&fed, input, -1.0, &mut grads.decoder)?;
        stats.recon = -ll;
        let mut dz_clf = None;
        if self.supervised {
            stats.clf = model.classifier.loss(&fwd.value, labels)?;
            if h.alpha > 0.0 {
                dz_clf = Some(model.classifier.loss_backward(&fwd.value, labels, h.alpha, &mut grads.classifier)?);
            }
        }
        let mut dz_pair = None;
        if let Some(p) = partner {
            let (pw, g, _) = pairwise_relaxed(&fwd.value, p.code, labels, p.labels);
            stats.pairwise = pw;
            if h.beta > 0.0 {
                dz_pair = Some(g);
            }
        }

        let g_psi = match &fwd.relax {
            None => arm_phi_gradient_step(model, input, labels, &fwd.psi, &fwd.u, partner, fwd.mask.as_ref())?,
            Some(relax) => {
                let mut dz = dz_recon;
                if let Some(m) = &fwd.mask {
                    for (k, d) in dz.iter_mut().enumerate() {
                        if m.get(k) {
                            *d = -*d;
                        }
                    }
                }
                if let Some(c) = dz_clf {
                    dz.iter_mut().zip(c).for_each(|(d, c)| *d += c);
                }
                if let Some(p) = dz_pair {
                    dz.iter_mut().zip(p).for_each(|(d, p)| *d += h.beta * p);
                }
                let mut g = relax.backward(&dz);
                add_kl_gradient(model, &fwd.psi, &mut g);
                g
            }
        };
        Ok((stats, g_psi))
    }
}

/// Train `model` on the training split of `corpus`.
pub fn train(model: PshModel, corpus: &Corpus, cfg: &TrainConfig) -> Result<(PshModel, TrainReport)> {
    train_with_hooks(model, corpus, cfg, &mut NoHooks)
}

pub fn train_with_hooks(mut model: PshModel, corpus: &Corpus, cfg: &TrainConfig, hooks: &mut dyn TrainHooks) -> Result<(PshModel, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    if model.vocab_size() != corpus.vocabulary().len() {
        return Err(Error::Shape(format!(
            "model vocabulary {} differs from corpus vocabulary {}",
            model.vocab_size(),
            corpus.vocabulary().len()
        )));
    }
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((model, report));
    }
    let supervised = cfg.mode == TrainMode::Supervised;
    let train_idx = corpus.split_indices(Split::Train);
    let val_idx = corpus.split_indices(Split::Validation);
    if supervised {
        for &i in &train_idx {
            let doc = &corpus.documents()[i];
            if doc.labels.is_empty() {
                return Err(Error::Validation(format!("supervised training needs labels; document {} has none", doc.doc_id)));
            }
            if let Some(&l) = doc.labels.iter().find(|&&l| l as usize >= model.classifier.classes()) {
                return Err(Error::InvalidLabel { label: l, classes: model.classifier.classes() });
            }
        }
    }
    let idf = corpus.idf()?;
    let inputs: Vec<TfidfVector> = corpus.documents().iter().map(|d| idf.transform(d)).collect();
    let any_labels = corpus.documents().iter().any(|d| !d.labels.is_empty());
    let evaluate = !val_idx.is_empty() && any_labels;

    let mut adam = AdamState::new(cfg.learning_rate);
    let mut best: Option<(f64, usize, PshModel)> = None;
    let sides = if supervised { 2 } else { 1 };
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let alpha = if supervised { cfg.alpha.value(epoch) } else { 0.0 };
        let beta = if supervised { cfg.beta } else { 0.0 };
        model.hyper = Hyper { lambda: cfg.lambda, alpha, beta };
        let perms: Vec<Vec<usize>> = (0..sides)
            .map(|s| {
                let mut p = train_idx.clone();
                p.shuffle(&mut rng_for(cfg.seed, &[STREAM_PERMUTATION, epoch as u64, s as u64]));
                p
            })
            .collect();
        let mut totals = Stats::default();
        let mut n_docs = 0usize;
        let mut n_pairs = 0usize;
        for (iteration, start) in (0..train_idx.len()).step_by(cfg.batch_size).enumerate() {
            let end = (start + cfg.batch_size).min(train_idx.len());
            let width = end - start;
            // Slot layout: side 0 occupies [0, width), side 1 [width, 2 width).
            let slots: Vec<usize> = perms.iter().flat_map(|p| p[start..end].iter().copied()).collect();
            let ids: Vec<DocId> = slots.iter().map(|&i| corpus.documents()[i].doc_id).collect();
            hooks.on_gradient_batch(&ids);
            let ctx = StepContext {
                model: &model,
                estimator: cfg.estimator,
                supervised,
                temperature: cfg.temperature.value(epoch),
                code_noise: cfg.code_noise,
                inputs: &inputs,
                corpus,
            };
            let forwards: Vec<Forward> = slots
                .par_iter()
                .enumerate()
                .map(|(s, &doc)| ctx.forward(doc, &mut rng_for(cfg.seed, &[STREAM_STEP, epoch as u64, iteration as u64, s as u64])))
                .collect::<Result<_>>()?;
            let partner_of = |s: usize| -> Option<usize> {
                if sides == 2 {
                    Some(if s < width { s + width } else { s - width })
                } else {
                    None
                }
            };
            let chunks: Result<Vec<(ModelGrads, Stats)>> = (0..slots.len())
                .collect::<Vec<_>>()
                .par_chunks(slots.len().div_ceil(GRAD_CHUNKS).max(1))
                .map(|chunk| {
                    let mut grads = model.zero_grads();
                    let mut stats = Stats::default();
                    let mut g_psis = Vec::with_capacity(chunk.len());
                    for &s in chunk {
                        let partner = partner_of(s).map(|p| Partner { code: &forwards[p].value, labels: ctx.labels(slots[p]) });
                        let (mut st, g) = ctx.backward(slots[s], &forwards[s], partner, &mut grads)?;
                        // Each pair's pairwise loss is counted once, on its first side.
                        if s >= width {
                            st.pairwise = 0.0;
                        }
                        stats.add(&st);
                        g_psis.push(g);
                    }
                    let caches: Vec<&EncoderCache> = chunk.iter().map(|&s| &forwards[s].cache).collect();
                    let gs: Vec<&[f64]> = g_psis.iter().map(Vec::as_slice).collect();
                    model.encoder.backward_batch(&caches, &gs, &mut grads.encoder)?;
                    Ok((grads, stats))
                })
                .collect();
            let diverged = |reason: String, stats: Stats, grad_norm: Option<f64>| {
                let n = slots.len().max(1) as f64;
                Error::Diverged(Box::new(DiagnosticSnapshot {
                    epoch,
                    iteration,
                    reason,
                    recon: stats.recon / n,
                    kl: stats.kl / n,
                    clf: stats.clf / n,
                    pairwise: stats.pairwise / width.max(1) as f64,
                    grad_norm,
                    doc_ids: ids.clone(),
                }))
            };
            let chunks = match chunks {
                Ok(c) => c,
                Err(Error::Numeric(msg)) => return Err(diverged(msg, Stats::default(), None)),
                Err(e) => return Err(e),
            };
            let mut chunks = chunks.into_iter();
            let (mut grads, mut stats) = chunks.next().expect("a step has at least one slot");
            for (g, s) in chunks {
                grads.add_assign(&g);
                stats.add(&s);
            }
            let snapshot = |reason: String, grad_norm: Option<f64>| diverged(reason, stats, grad_norm);
            if !stats.finite() {
                return Err(snapshot("non-finite loss".into(), None));
            }
            grads.scale(1.0 / width as f64);
            let norm = if cfg.clip_norm > 0.0 { grads.clip_norm(cfg.clip_norm) } else { grads.norm() };
            if !norm.is_finite() {
                return Err(snapshot("non-finite gradient".into(), Some(norm)));
            }
            match model.apply_gradients(&mut adam, &grads) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { tensor }) => return Err(snapshot(format!("non-finite gradient in `{tensor}`"), Some(norm))),
                Err(e) => return Err(e),
            }
            totals.add(&stats);
            n_docs += slots.len();
            n_pairs += if supervised { width } else { 0 };
        }

        let due = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let val_p100 = if evaluate && due { Some(validation_precision(&model, corpus, &inputs, cfg.eval_k)?) } else { None };
        let nd = n_docs.max(1) as f64;
        let record = EpochRecord {
            epoch,
            neg_elbo: (totals.recon + totals.kl) / nd,
            recon: totals.recon / nd,
            kl: totals.kl / nd,
            clf: totals.clf / nd,
            pairwise: if n_pairs > 0 { totals.pairwise / n_pairs as f64 } else { 0.0 },
            val_p100,
            seconds: started.elapsed().as_secs_f64(),
        };
        hooks.on_epoch(&record);
        if cfg.select_best {
            if let Some(p) = val_p100 {
                if best.as_ref().is_none_or(|(b, _, _)| p > *b) {
                    best = Some((p, epoch, model.clone()));
                }
            }
        }
        report.records.push(record);
    }
    if let Some((_, epoch, m)) = best {
        report.best_epoch = Some(epoch);
        model = m;
    }
    Ok((model, report))
}

/// Hash the documents at `indices` with thresholded encoder means.
pub fn encode_documents(model: &PshModel, corpus: &Corpus, inputs: &[TfidfVector], indices: &[usize]) -> Result<CodeIndex> {
    let codes: Vec<BinaryCode> = indices.par_iter().map(|&i| model.encode(&inputs[i])).collect::<Result<_>>()?;
    CodeIndex::build(
        model.code_bits(),
        indices.iter().zip(codes).map(|(&i, c)| {
            let d = &corpus.documents()[i];
            (d.doc_id, c, d.labels.clone())
        }),
    )
}

/// precision@k of validation queries against the training pool.
pub fn validation_precision(model: &PshModel, corpus: &Corpus, inputs: &[TfidfVector], k: usize) -> Result<f64> {
    split_precision(model, corpus, inputs, Split::Validation, k)
}

/// precision@k of the documents in `split` queried against the training
/// pool.
pub fn split_precision(model: &PshModel, corpus: &Corpus, inputs: &[TfidfVector], split: Split, k: usize) -> Result<f64> {
    let pool = encode_documents(model, corpus, inputs, &corpus.split_indices(Split::Train))?;
    let queries = encode_documents(model, corpus, inputs, &corpus.split_indices(split))?;
    let queries: Vec<Query> = queries.entries().map(|(id, code, labels)| Query { doc_id: Some(id), code, labels: labels.to_vec() }).collect();
    pool.precision_at_k(&queries, k)
}

/// Monte-Carlo negative ELBO (unit KL weight, no code noise) averaged over
/// the documents of `split`, with evaluation-mode encoder means and
/// `samples` codes per document.
pub fn negative_elbo(model: &PshModel, corpus: &Corpus, split: Split, samples: usize, seed: u64) -> Result<f64> {
    let idf = corpus.idf()?;
    let idx = corpus.split_indices(split);
    if idx.is_empty() || samples == 0 {
        return Err(Error::Validation("negative ELBO needs documents and at least one sample".into()));
    }
    let per_doc: Vec<f64> = idx
        .par_iter()
        .map(|&i| {
            let input = idf.transform(&corpus.documents()[i]);
            let psi = model.encoder.logits(&input.terms)?;
            let mut rng = rng_for(seed, &[STREAM_EVAL, i as u64]);
            let mut recon = 0.0;
            for _ in 0..samples {
                let z = sample_bernoulli(&psi, &open_uniforms(&mut rng, psi.len()));
                recon -= model.decoder.reconstruction(&z.to_f64(), &input)?;
            }
            Ok(recon / samples as f64 + kl_bernoulli(&psi, &model.prior))
        })
        .collect::<Result<_>>()?;
    Ok(per_doc.iter().sum::<f64>() / per_doc.len() as f64)
}
