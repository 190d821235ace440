use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use spc_aux_bench::{chart, fixed_subgroup, standard_params};
use spc_aux_core::{subgroup_stats, EstimatorKind, RngStream, Sampling, ShiftSpec, StatisticSampler};

fn statistics(c: &mut Criterion) {
    let mut group = c.benchmark_group("subgroup_stats");
    for n in [5, 10, 15] {
        let g = fixed_subgroup(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| b.iter(|| subgroup_stats(g)));
    }
    group.finish();
}

fn draws(c: &mut Criterion) {
    let params = standard_params(0.9);
    let mut group = c.benchmark_group("draw");
    for kind in EstimatorKind::ALL {
        for sampling in [Sampling::Summary, Sampling::Pairs] {
            let (cfg, _) = chart(kind, 5, 3.0, &params);
            let sampler = StatisticSampler::new(&cfg, &params, sampling).unwrap();
            let mut rng = RngStream::new(1);
            let mut redraws = 0;
            group.bench_function(format!("{kind}/{sampling:?}"), |b| {
                b.iter(|| sampler.draw(ShiftSpec::IN_CONTROL, &mut rng, &mut redraws).unwrap())
            });
        }
    }
    group.finish();
}

fn run_lengths(c: &mut Criterion) {
    let params = standard_params(0.9);
    let (cfg, limits) = chart(EstimatorKind::T3, 5, 2.0, &params);
    let sampler = StatisticSampler::new(&cfg, &params, Sampling::Summary).unwrap();
    let root = RngStream::new(2);
    let mut r = 0u64;
    c.bench_function("run_length/T3_L2", |b| {
        b.iter(|| {
            r += 1;
            sampler.run_length(&limits, ShiftSpec::IN_CONTROL, &mut root.child(r), 1_000_000).unwrap()
        })
    });
}

criterion_group!(benches, statistics, draws, run_lengths);
criterion_main!(benches);
