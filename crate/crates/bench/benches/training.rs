use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use semhash_bench::split_corpus;
use semhash_core::rng::rng_for;
use semhash_core::{train, EstimatorTag, Hyper, ModelConfig, PshModel, TrainConfig, TrainMode};

fn one_epoch(c: &mut Criterion) {
    let corpus = split_corpus(500, 500, 5, 0);
    let mcfg = ModelConfig { code_bits: 32, hidden: vec![200, 200], ..ModelConfig::default() };
    let mut group = c.benchmark_group("epoch_500docs");
    for est in [EstimatorTag::Arm, EstimatorTag::StraightThrough, EstimatorTag::GumbelSoftmax] {
        for mode in [TrainMode::Unsupervised, TrainMode::Supervised] {
            let cfg = TrainConfig { mode, estimator: est, epochs: 1, eval_every: 0, ..TrainConfig::default() };
            group.bench_function(BenchmarkId::new(est.to_string(), mode.to_string()), |b| {
                b.iter(|| {
                    let model = PshModel::new(&mcfg, 500, corpus.num_classes(), Hyper::default(), &mut rng_for(0, &[1])).unwrap();
                    train(model, &corpus, &cfg).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = one_epoch
}
criterion_main!(benches);
