use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ganselect::eval::{frechet_distance, sliced_wasserstein};
use ganselect::models::TapeNetwork;
use ganselect::objectives::{gradient_penalty, mmd2_unbiased};
use ganselect::rng::seeded;
use ganselect::{KernelSpec, Tape};
use ganselect_bench::{batch, critic};

fn critic_backward(c: &mut Criterion) {
    let (spec, params) = critic(2);
    let x = batch(128, 2, 3);
    c.bench_function("critic forward+backward, MLP2, 128 rows", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let net = TapeNetwork::register(&mut tape, &spec, &params, true).unwrap();
            let xn = tape.constant(x.clone());
            let out = net.apply(&mut tape, xn).unwrap();
            let loss = tape.mean(out).unwrap();
            tape.grad(loss).unwrap()
        })
    });
}

fn penalty_double_backprop(c: &mut Criterion) {
    let (spec, params) = critic(2);
    let x = batch(128, 2, 4);
    c.bench_function("gradient penalty p=6 with parameter gradient", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let net = TapeNetwork::register(&mut tape, &spec, &params, true).unwrap();
            let xn = tape.input(x.clone(), true);
            let pen = gradient_penalty(&mut tape, &net, xn, 6.0).unwrap();
            tape.grad(pen).unwrap()
        })
    });
}

fn mmd(c: &mut Criterion) {
    let kernel = KernelSpec::new(vec![0.5, 1.0, 2.0, 4.0]).unwrap();
    let mut group = c.benchmark_group("mmd2_unbiased");
    for n in [64, 128, 256] {
        let (x, y) = (batch(n, 2, 5), batch(n, 2, 6));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xn = tape.constant(x.clone());
                let yn = tape.param(y.clone());
                let v = mmd2_unbiased(&mut tape, xn, yn, &kernel).unwrap();
                tape.grad(v).unwrap()
            })
        });
    }
    group.finish();
}

fn sample_metrics(c: &mut Criterion) {
    let (a, b) = (batch(10_000, 2, 7), batch(10_000, 2, 8));
    c.bench_function("frechet_distance, 10k rows", |bench| bench.iter(|| frechet_distance(&a, &b).unwrap()));
    c.bench_function("sliced_wasserstein, 10k rows, 128 dirs", |bench| {
        bench.iter(|| sliced_wasserstein(&a, &b, 128, &mut seeded(9)).unwrap())
    });
}

criterion_group!(benches, critic_backward, penalty_double_backprop, mmd, sample_metrics);
criterion_main!(benches);
