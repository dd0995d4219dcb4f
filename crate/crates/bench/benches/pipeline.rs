use criterion::{black_box, criterion_group, criterion_main, Criterion};

use asnet_bench::record;
use asnet_core::beamform::das_reconstruct;
use asnet_core::fold::{fold, unfold};
use asnet_core::nn::{infer, init_params, NetConfig, Tensor};
use asnet_core::simulate::forward_project;

fn fold_bench(c: &mut Criterion) {
    let (sig, _) = record(32, 128, 1500);
    c.bench_function("fold 1500x32 to 12x128x128", |b| {
        b.iter(|| fold(black_box(&sig), 128, true).unwrap())
    });
    let cube = fold(&sig, 128, true).unwrap();
    c.bench_function("unfold 12x128x128", |b| {
        b.iter(|| unfold(black_box(&cube), 1500, 32, sig.fs_hz).unwrap())
    });
}

fn physics_bench(c: &mut Criterion) {
    let (sig, geom) = record(32, 64, 768);
    c.bench_function("das 32 elements 64x64", |b| {
        b.iter(|| das_reconstruct(black_box(&sig), &geom).unwrap())
    });
    let img = asnet_bench::phantom(64);
    c.bench_function("forward project 32 elements 64x64", |b| {
        b.iter(|| forward_project(black_box(&img), &geom, 768).unwrap())
    });
}

fn network_bench(c: &mut Criterion) {
    let cfg = NetConfig::desk(12, 64, 0);
    let params = init_params::<f32>(&cfg);
    let signal = Tensor::zeros(&cfg.signal_input_shape(1));
    let das = Tensor::zeros(&[1, 1, 64, 64]);
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("desk forward 12x64x64", |b| {
        b.iter(|| infer(&cfg, &params, signal.clone(), das.clone()))
    });
    group.finish();
}

criterion_group!(benches, fold_bench, physics_bench, network_bench);
criterion_main!(benches);
