use std::collections::HashSet;

use semhash_core::model::{kl_gradient, pairwise_relaxed};
use semhash_core::nn::sigmoid;
use semhash_core::rng::{open_uniforms, rng_for};
use semhash_core::synth::{generate, SynthConfig};
use semhash_core::trainer::{arm_phi_gradient_step, Partner};
use semhash_core::*;

#[test]
fn trainer_arm_step_matches_enumeration() {
    let cfg = ModelConfig { code_bits: 3, hidden: vec![4], dropout: 0.0, prior: 0.3 };
    let hyper = Hyper { lambda: 0.5, alpha: 0.7, beta: 0.9 };
    let mut m = PshModel::new(&cfg, 6, 2, hyper, &mut rng_for(3, &[])).unwrap();
    m.decoder.embedding.values_mut().iter_mut().for_each(|v| *v *= 3.0);
    let input = TfidfVector { terms: vec![(0, 1.5), (2, 0.7), (5, 2.0)] };
    let labels = [1u32];
    let partner_code = [1.0, 0.0, 1.0];
    let partner_labels = [0u32];
    let psi = [0.4, -0.9, 1.3];
    let noise = BinaryCode::from_bools(&[false, true, false]);

    let loss = |z: &BinaryCode| -> f64 {
        let zf = z.to_f64();
        -m.decoder.reconstruction(&z.xor(&noise).to_f64(), &input).unwrap()
            + hyper.alpha * m.classifier.loss(&zf, &labels).unwrap()
            + hyper.beta * pairwise_relaxed(&zf, &partner_code, &labels, &partner_labels).0
    };
    // d/dpsi sum_z p(z) loss(z) + lambda * dKL/dpsi
    let mut exact: Vec<f64> = kl_gradient(&psi, &m.prior).iter().map(|g| hyper.lambda * g).collect();
    for bits in 0..8u32 {
        let z = BinaryCode::from_fn(3, |k| bits >> k & 1 == 1);
        let p: f64 = (0..3)
            .map(|k| {
                let q = sigmoid(psi[k]);
                if z.get(k) { q } else { 1.0 - q }
            })
            .product();
        let f = loss(&z);
        for (k, e) in exact.iter_mut().enumerate() {
            let q = sigmoid(psi[k]);
            *e += f * p * if z.get(k) { 1.0 - q } else { -q };
        }
    }

    let mut rng = rng_for(5, &[]);
    let n = 200_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let partner = Partner { code: &partner_code, labels: &partner_labels };
    for _ in 0..n {
        let u = open_uniforms(&mut rng, 3);
        let g = arm_phi_gradient_step(&m, &input, &labels, &psi, &u, Some(partner), Some(&noise)).unwrap();
        for k in 0..3 {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    for k in 0..3 {
        let mean = sum[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact[k]).abs() <= 4.0 * se, "bit {k}: mean {mean} exact {} se {se}", exact[k]);
    }
}

struct Recorder {
    seen: HashSet<DocId>,
    epochs: usize,
}

impl TrainHooks for Recorder {
    fn on_gradient_batch(&mut self, doc_ids: &[DocId]) {
        self.seen.extend(doc_ids);
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {
        self.epochs += 1;
    }
}

#[test]
fn only_training_documents_reach_the_gradient() {
    let corpus = generate(&SynthConfig { documents: 120, vocab_size: 80, topics: 3, ..SynthConfig::default() })
        .unwrap()
        .split((0.6, 0.2, 0.2), 4)
        .unwrap();
    let train_ids: HashSet<DocId> = corpus.split_indices(Split::Train).iter().map(|&i| corpus.documents()[i].doc_id).collect();
    for (mode, estimator) in [
        (TrainMode::Supervised, EstimatorTag::Arm),
        (TrainMode::Unsupervised, EstimatorTag::StraightThrough),
        (TrainMode::Supervised, EstimatorTag::GumbelSoftmax),
    ] {
        let cfg = ModelConfig { code_bits: 8, hidden: vec![16], ..ModelConfig::default() };
        let model = PshModel::new(&cfg, 80, corpus.num_classes(), Hyper::default(), &mut rng_for(0, &[])).unwrap();
        let tcfg = TrainConfig { mode, estimator, epochs: 4, batch_size: 16, ..TrainConfig::default() };
        let mut rec = Recorder { seen: HashSet::new(), epochs: 0 };
        train_with_hooks(model, &corpus, &tcfg, &mut rec).unwrap();
        assert_eq!(rec.epochs, 4);
        assert!(rec.seen.is_subset(&train_ids), "{mode} {estimator} touched held-out documents");
        assert_eq!(rec.seen, train_ids, "{mode} {estimator} skipped training documents");
    }
}
