use criterion::{criterion_group, criterion_main, Criterion};
use ganselect::eval::{flatness_probe, sliced_wasserstein};
use ganselect::models::generate;
use ganselect::rng::seeded;
use ganselect::{make_dataset, train, DatasetSpec, ObjectiveKind, ObjectiveSpec, TrainConfig};
use ganselect_bench::{batch, critic, generator};

fn one_epoch(c: &mut Criterion) {
    let data = make_dataset(&DatasetSpec::gaussian(2, 2000, 0)).unwrap();
    let (critic_spec, _) = critic(2);
    let mut group = c.benchmark_group("wgan_div epoch");
    group.sample_size(10);
    for (name, layers) in [("MLP0", 0), ("MLP2", 2)] {
        let (gen_spec, _) = generator(2, layers);
        let cfg = TrainConfig { epochs: 1, snapshot_samples: 0, ..TrainConfig::default() };
        let objective = ObjectiveSpec::new(ObjectiveKind::WganDiv);
        group.bench_function(name, |b| b.iter(|| train(&gen_spec, &critic_spec, &objective, &cfg, &data).unwrap()));
    }
    group.finish();
}

fn probe(c: &mut Criterion) {
    let (spec, params) = generator(10, 2);
    let z = batch(2048, 10, 11);
    let real = batch(2048, 2, 12);
    let objective = |p: &[f64]| {
        let fake = generate(&spec, &params.with_values(p.to_vec())?, &z)?;
        sliced_wasserstein(&fake, &real, 64, &mut seeded(13))
    };
    let mut group = c.benchmark_group("flatness probe");
    group.sample_size(10);
    group.bench_function("MLP2/P=10, 2 alphas x 10 repeats", |b| {
        b.iter(|| flatness_probe(objective, params.values(), &[0.01, 0.03], 10, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, one_epoch, probe);
criterion_main!(benches);
