use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use semhash_bench::{clustered_pool, pool_queries};
use semhash_core::CodeIndex;

fn topk(c: &mut Criterion) {
    let mut group = c.benchmark_group("hamming_topk");
    for bits in [32usize, 128] {
        let pool = clustered_pool(100_000, bits, 20, 0.1, 7);
        let queries = pool_queries(&pool, 64);
        group.throughput(Throughput::Elements(queries.len() as u64));
        group.bench_with_input(BenchmarkId::new("k100", bits), &bits, |b, _| {
            b.iter(|| {
                for q in &queries {
                    black_box(pool.hamming_topk(&q.code, q.doc_id, 100).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn build(c: &mut Criterion) {
    let pool = clustered_pool(100_000, 128, 20, 0.1, 7);
    let entries: Vec<_> = pool.entries().map(|(id, code, l)| (id, code, l.to_vec())).collect();
    c.bench_function("build_100k_128bit", |b| b.iter(|| CodeIndex::build(128, black_box(entries.clone())).unwrap()));
}

fn precision(c: &mut Criterion) {
    let pool = clustered_pool(20_000, 64, 20, 0.1, 3);
    let queries = pool_queries(&pool, 500);
    c.bench_function("precision_at_100_500q_20k", |b| b.iter(|| pool.precision_at_k(black_box(&queries), 100).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = topk, build, precision
}
criterion_main!(benches);
