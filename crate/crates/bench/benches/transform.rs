use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gdn_bench::{batch, dense_params};
use gdn_core::{batch_gradient, forward, input_gradient, inverse, Tying};

const ROWS: usize = 256;

fn transform(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.throughput(Throughput::Elements(ROWS as u64));
    for dim in [4, 16, 64] {
        let p = dense_params(dim, &Tying::Full);
        let x = batch(dim, ROWS);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &x, |b, x| {
            b.iter(|| forward(&p, x.view()).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("inverse");
    group.throughput(Throughput::Elements(ROWS as u64));
    for dim in [4, 16, 64] {
        let p = dense_params(dim, &Tying::Full);
        let y = forward(&p, batch(dim, ROWS).view()).unwrap().y;
        group.bench_with_input(BenchmarkId::from_parameter(dim), &y, |b, y| {
            b.iter(|| inverse(&p, y.view()).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradient");
    group.throughput(Throughput::Elements(ROWS as u64));
    for (name, tying) in [
        ("full", Tying::Full),
        ("radial", Tying::Radial),
        ("diagonal", Tying::DiagonalGamma),
    ] {
        for dim in [16, 64] {
            let p = dense_params(dim, &tying);
            let x = batch(dim, ROWS);
            group.bench_with_input(BenchmarkId::new(name, dim), &x, |b, x| {
                b.iter(|| batch_gradient(&p, x.view(), &tying).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("score");
    group.throughput(Throughput::Elements(ROWS as u64));
    for dim in [16, 64] {
        let p = dense_params(dim, &Tying::Full);
        let x = batch(dim, ROWS);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &x, |b, x| {
            b.iter(|| input_gradient(&p, x.view()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, transform, gradients);
criterion_main!(benches);
