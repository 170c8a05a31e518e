use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use qgraph::rng::stream_rng;
use qgraph::{ericson_pq, goe_sample_s, CorrelatorSpec, Factor, GoeModel, GoeSampler, C64};
use qgraph_bench::ericson_system;

fn evaluate_s(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate_s");
    group.sample_size(10);
    for v in [10, 20, 30] {
        let (sys, phases) = ericson_system(v, v.min(10)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(v), &v, |b, _| {
            b.iter(|| sys.evaluate_s(black_box(&phases), 0.0).unwrap())
        });
    }
    group.finish();
}

fn predictions(c: &mut Criterion) {
    let t = vec![1.0; 10];
    let s_means = vec![C64::new(0.0, 0.0); 10];
    let mut group = c.benchmark_group("ericson_pq");
    for (p, q) in [(1, 1), (2, 2), (3, 3), (4, 3)] {
        let spec = CorrelatorSpec::new(
            (0..p).map(|k| Factor::new(k % 3, (k + 1) % 3, 0.01 * k as f64)).collect(),
            (0..q).map(|k| Factor::new((k + 1) % 3, k % 3, 0.02 * k as f64)).collect(),
        );
        group.bench_function(format!("{p}-{q}"), |b| b.iter(|| ericson_pq(black_box(&spec), &t, 5.0, &s_means).unwrap()));
    }
    group.finish();
}

fn goe(c: &mut Criterion) {
    let mut group = c.benchmark_group("goe_sample_s");
    for (name, sampler) in [("banded", GoeSampler::Banded), ("dense", GoeSampler::Dense)] {
        let model = GoeModel::new(400, vec![0.5, 0.5]).unwrap().with_sampler(sampler);
        let mut rng = stream_rng(1, 0);
        group.bench_function(name, |b| b.iter(|| goe_sample_s(&model, &mut rng, 0.0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, evaluate_s, predictions, goe);
criterion_main!(benches);
