use copper_bench::warmed_experiment;
use copper_core::rng::CopperRng;
use copper_core::slaguard::{dbscan, interest_clusters, redistribution_plan};
use copper_core::testbed::AppKind;
use copper_core::{sampling, ClusterConfig, SamplerConfig, SampleSet};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;

fn sampler(c: &mut Criterion) {
    let (app, exp) = warmed_experiment(AppKind::SchedsimLike, 8800, 200);
    let config = SamplerConfig { neighbors: 4, ..SamplerConfig::default() };
    c.bench_function("grasp sampling, 8800 points, 200 evaluated", |b| {
        b.iter_batched(
            || CopperRng::seed_from_u64(1),
            |mut rng| sampling(exp.doe(), &app.space, &config, exp.claimed(), &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn clustering(c: &mut Criterion) {
    let (_, exp) = warmed_experiment(AppKind::SchedsimLike, 8800, 200);
    let points = exp.results().to_vec();
    c.bench_function("dbscan, 200 points", |b| b.iter(|| dbscan(&points, 1.5, 3)));
}

fn planning(c: &mut Criterion) {
    let (app, exp) = warmed_experiment(AppKind::IfmLike, 50, 35);
    let config = ClusterConfig::default();
    let clusters = interest_clusters(exp.results(), &config, None).unwrap();
    let evaluated: SampleSet = exp.claimed().clone();
    let sampler = SamplerConfig::default();
    c.bench_function("redistribution plan, ifm-like at the trigger", |b| {
        b.iter_batched(
            || CopperRng::seed_from_u64(2),
            |mut rng| redistribution_plan(&app.space, &clusters, &evaluated, exp.doe(), 15, 0.33, &sampler, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn engine(c: &mut Criterion) {
    let (_, exp) = warmed_experiment(AppKind::SchedsimLike, 300, 250);
    c.bench_function("engine suggestion past the trigger", |b| b.iter(|| exp.suggest(4).unwrap()));
}

criterion_group!(benches, sampler, clustering, planning, engine);
criterion_main!(benches);
